use tiltlab_core::ada::{run_ada_protocol, AdaConfig, ExactMean};
use tiltlab_core::attack::{run_attack_trial, separation_statistic, ThetaSampler};
use tiltlab_core::families::PointFamily;
use tiltlab_core::mechanisms::{EmpiricalMean, HistogramVector, SparseHistogram};
use tiltlab_core::seed::Seed;
use tiltlab_core::tilt::{Conditioning, Region, TiltedDistribution};

#[test]
fn enumerated_tilt_reproduces_exact_mean() {
    let family = PointFamily::tensor(2, 2, 3).unwrap();
    let sampler = ThetaSampler::new(Region::L2Ball(2.0), family.dim()).unwrap();
    for mode in [Conditioning::Plain, Conditioning::TypeConditioned] {
        let dist =
            TiltedDistribution::new(&family, sampler.sample(&mut Seed(3).rng()), mode).unwrap();
        let support = dist.enumerate().unwrap();
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut mean = vec![0.0; family.dim()];
        for (point, p) in &support {
            for (m, x) in mean.iter_mut().zip(family.resolve(point).unwrap()) {
                *m += p * x;
            }
        }
        for (a, b) in mean.iter().zip(dist.mean()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn attack_trial_is_a_function_of_the_seed() {
    let family = PointFamily::hypercube(16).unwrap();
    let sampler = ThetaSampler::new(Region::L2Ball(20.0), 16).unwrap();
    let run = |s: u64| {
        run_attack_trial(
            &family,
            &sampler,
            Conditioning::Plain,
            &EmpiricalMean,
            4,
            200,
            &mut Seed(s).rng(),
        )
        .unwrap()
    };
    let (a, b, c) = (run(9), run(9), run(10));
    assert_eq!(a, b);
    assert_ne!(a.in_sample, c.in_sample);
    assert!(separation_statistic(&a).unwrap().value > 0.0);
}

#[test]
fn histogram_release_keeps_mass_and_is_seeded() {
    let hist = SparseHistogram::new(1.0, 1e-6).unwrap();
    let x = HistogramVector::from_pairs([(3, 7.0), (900, 2.0), (41, 11.0)]).unwrap();
    let a = hist.release(&x, &mut Seed(5).rng()).unwrap();
    let b = hist.release(&x, &mut Seed(5).rng()).unwrap();
    assert_eq!(a, b);
    assert!((a.mass() - 20.0).abs() < 1e-9);
}

#[test]
fn small_ada_run_is_reproducible() {
    let mut cfg = AdaConfig::desk(60);
    cfg.m = 2;
    cfg.k = 4;
    cfg.d = 8;
    cfg.alpha = 0.25;
    cfg.pool = 500;
    cfg.gap_draws = 500;
    let dim = cfg.blocks() * cfg.k * cfg.d;
    let theta = ThetaSampler::new(Region::L1Ball(cfg.default_theta_radius()), dim)
        .unwrap()
        .sample(&mut Seed(1).rng());
    let a = run_ada_protocol(&mut ExactMean::default(), &cfg, &theta, &mut Seed(2).rng()).unwrap();
    let b = run_ada_protocol(&mut ExactMean::default(), &cfg, &theta, &mut Seed(2).rng()).unwrap();
    assert_eq!(a.to_log(), b.to_log());
    assert_eq!(a.stages.len(), cfg.d);
    assert!(a.compromise_monotone());
    assert!((0.0..=1.0).contains(&a.gap.gap));
}
