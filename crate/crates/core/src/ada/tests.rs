use super::*;
use crate::attack::ThetaSampler;
use crate::seed::Seed;
use crate::tilt::Region;
use proptest::prelude::*;
use rand::Rng;

fn small(n: usize) -> AdaConfig {
    AdaConfig {
        kind: FamilyKind::Tensor,
        m: 2,
        k: 4,
        d: 8,
        alpha: 0.25,
        threshold_constant: 0.5,
        tau_override: None,
        n,
        names: None,
        pool: 2000,
        gap_draws: 2000,
        projection: Projection::Fast,
    }
}

fn theta_for(cfg: &AdaConfig, seed: u64) -> TiltParam {
    let dim = cfg.blocks() * cfg.k * cfg.d;
    ThetaSampler::new(Region::L1Ball(cfg.default_theta_radius()), dim)
        .unwrap()
        .sample(&mut Seed(seed).rng())
}

/// Checks the batch helpers against brute force on every stage.
#[derive(Default)]
struct Probe {
    data: Vec<PointRef>,
    max_diff: f64,
    lazy_mismatches: usize,
    slow_mismatches: usize,
    stages: usize,
}

impl Analyst for Probe {
    fn name(&self) -> String {
        "probe".into()
    }

    fn begin(&mut self, data: &[PointRef]) -> Result<()> {
        self.data = data.to_vec();
        Ok(())
    }

    fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>> {
        self.stages += 1;
        let fast = empirical_answers(batch, &self.data)?;
        for idx in 0..batch.len() {
            let q = batch.query(idx);
            let mut total = 0.0;
            for p in &self.data {
                total += batch.eval(q, p)?;
            }
            let brute = total / self.data.len() as f64;
            self.max_diff = self.max_diff.max((brute - fast[idx]).abs());
        }
        let copy = self.data.clone();
        let fast_bits = batch.slice_bits(&self.data)?;
        let slow_bits = batch.slice_bits(&copy)?;
        self.slow_mismatches += fast_bits
            .iter()
            .zip(&slow_bits)
            .filter(|(a, b)| a != b)
            .count();
        for (p, b) in self.data.iter().zip(&fast_bits) {
            if batch.lazy_slice_bit(p)? != *b {
                self.lazy_mismatches += 1;
            }
        }
        Ok(fast)
    }
}

#[test]
fn desk_threshold_and_scale() {
    let cfg = AdaConfig::desk(100);
    let root = (32.0 * 8f64.ln()).sqrt();
    assert!((cfg.tau() - 2.0 * root / 6.0).abs() < 1e-12);
    assert!((cfg.tau() - 2.7189).abs() < 1e-3);
    assert!((cfg.final_scale() - 6.0 / (4.0 * root)).abs() < 1e-12);
    assert_eq!(cfg.name_space(), 1_000_000);
    assert_eq!(cfg.default_theta_radius(), 1536.0);
}

#[test]
fn small_name_space_is_rejected() {
    let mut cfg = small(100);
    cfg.names = Some(9_999);
    assert!(cfg.validate().is_err());
    cfg.names = Some(10_000);
    assert!(cfg.validate().is_ok());
}

#[test]
fn batch_helpers_match_brute_force() {
    let cfg = small(150);
    let theta = theta_for(&cfg, 1);
    let mut probe = Probe::default();
    let t = run_ada_protocol(&mut probe, &cfg, &theta, &mut Seed(2).rng()).unwrap();
    assert_eq!(probe.stages, cfg.d);
    assert!(probe.max_diff < 1e-12, "{}", probe.max_diff);
    assert_eq!(probe.lazy_mismatches, 0);
    assert_eq!(probe.slow_mismatches, 0);
    assert!(
        t.compromised_at.iter().any(|c| c.is_some()),
        "test needs some compromise"
    );
}

#[test]
fn query_order_is_predicate_major() {
    let cfg = small(20);
    struct Order(Vec<StageQuery>);
    impl Analyst for Order {
        fn name(&self) -> String {
            "order".into()
        }
        fn begin(&mut self, _: &[PointRef]) -> Result<()> {
            Ok(())
        }
        fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>> {
            if batch.stage() == 0 {
                self.0 = (0..batch.len()).map(|i| batch.query(i)).collect();
            }
            Ok(vec![0.0; batch.len()])
        }
    }
    let mut a = Order(Vec::new());
    run_ada_protocol(&mut a, &cfg, &theta_for(&cfg, 3), &mut Seed(3).rng()).unwrap();
    assert_eq!(a.0.len(), 16);
    assert_eq!(a.0[0], StageQuery { h: 0, p: 0 });
    assert_eq!(a.0[5], StageQuery { h: 1, p: 1 });
    assert_eq!(a.0[15], StageQuery { h: 3, p: 3 });
}

#[test]
fn bad_answers_abort() {
    let cfg = small(30);
    let theta = theta_for(&cfg, 4);
    let err =
        run_ada_protocol(&mut ConstantAnswer(1.5), &cfg, &theta, &mut Seed(5).rng()).unwrap_err();
    assert!(
        matches!(err, Error::ProtocolAbort { stage: 0, .. }),
        "{err}"
    );
    let err = run_ada_protocol(
        &mut ConstantAnswer(f64::NAN),
        &cfg,
        &theta,
        &mut Seed(5).rng(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::ProtocolAbort { stage: 0, .. }));

    struct Short;
    impl Analyst for Short {
        fn name(&self) -> String {
            "short".into()
        }
        fn begin(&mut self, _: &[PointRef]) -> Result<()> {
            Ok(())
        }
        fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>> {
            Ok(vec![0.0; batch.len() - usize::from(batch.stage() == 3)])
        }
    }
    let err = run_ada_protocol(&mut Short, &cfg, &theta, &mut Seed(5).rng()).unwrap_err();
    assert!(matches!(err, Error::ProtocolAbort { stage: 3, .. }));
}

#[test]
fn zero_noise_matches_exact_mean_bitwise() {
    let cfg = small(120);
    let theta = theta_for(&cfg, 6);
    let a = run_ada_protocol(&mut ExactMean::default(), &cfg, &theta, &mut Seed(7).rng()).unwrap();
    let b = run_ada_protocol(
        &mut GaussianNoised::new(0.0, 1).unwrap(),
        &cfg,
        &theta,
        &mut Seed(7).rng(),
    )
    .unwrap();
    assert!(a.same_interaction(&b));
    assert_eq!(a.gap, b.gap);
    assert_eq!(a.to_log().lines().count(), cfg.d + 1);
}

#[test]
fn runs_are_reproducible() {
    let cfg = small(80);
    let theta = theta_for(&cfg, 8);
    let a = run_ada_protocol(
        &mut GaussianNoised::new(0.05, 3).unwrap(),
        &cfg,
        &theta,
        &mut Seed(9).rng(),
    )
    .unwrap();
    let b = run_ada_protocol(
        &mut GaussianNoised::new(0.05, 3).unwrap(),
        &cfg,
        &theta,
        &mut Seed(9).rng(),
    )
    .unwrap();
    assert_eq!(a.to_log(), b.to_log());
    assert_eq!(a, b);
}

/// Runs a sample splitter on the true data and on a copy whose other folds
/// are overwritten, and records whether the answers ever differ.
struct SplitPair {
    folds: usize,
    real: SampleSplit,
    data: Vec<PointRef>,
    differ: usize,
}

impl Analyst for SplitPair {
    fn name(&self) -> String {
        "split-pair".into()
    }

    fn begin(&mut self, data: &[PointRef]) -> Result<()> {
        self.data = data.to_vec();
        self.real.begin(data)
    }

    fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>> {
        let real = self.real.answer(batch)?;
        let fold = batch.stage() % self.folds;
        let range = self.real.fold_range(fold, self.data.len());
        let filler = self.data[(range.end) % self.data.len()];
        let perturbed: Vec<PointRef> = self
            .data
            .iter()
            .enumerate()
            .map(|(i, p)| if range.contains(&i) { *p } else { filler })
            .collect();
        let mut other = SampleSplit::new(self.folds)?;
        other.begin(&perturbed)?;
        if other.answer(batch)? != real {
            self.differ += 1;
        }
        Ok(real)
    }
}

#[test]
fn sample_split_reads_only_its_fold() {
    let cfg = small(160);
    let theta = theta_for(&cfg, 10);
    let mut pair = SplitPair {
        folds: cfg.d,
        real: SampleSplit::new(cfg.d).unwrap(),
        data: Vec::new(),
        differ: 0,
    };
    run_ada_protocol(&mut pair, &cfg, &theta, &mut Seed(11).rng()).unwrap();
    assert_eq!(pair.differ, 0);
}

#[test]
fn compromise_is_monotone_and_open_scores_stay_bounded() {
    for seed in 0..3 {
        let cfg = small(200);
        let theta = theta_for(&cfg, 20 + seed);
        let t = run_ada_protocol(
            &mut ExactMean::default(),
            &cfg,
            &theta,
            &mut Seed(30 + seed).rng(),
        )
        .unwrap();
        assert!(t.compromise_monotone());
        let cap = t.tau + 2.0 / cfg.blocks() as f64;
        for s in &t.stages {
            assert!(
                s.max_open_pscore <= cap + 1e-9,
                "stage {}: {} > {cap}",
                s.stage,
                s.max_open_pscore
            );
        }
        let counted = t.compromised_at.iter().filter(|c| c.is_some()).count();
        assert!(counted >= t.stages.last().unwrap().compromised_data);
        assert!(t
            .q
            .iter()
            .all(|x| x.abs() <= 1.0 / cfg.blocks() as f64 + 1e-9));
    }
}

#[test]
fn fairness_replay_is_identical() {
    let cfg = small(150);
    let theta = theta_for(&cfg, 12);
    let r = fairness_replay(
        || Box::new(ExactMean::default()),
        &cfg,
        &theta,
        &mut Seed(13).rng(),
    )
    .unwrap();
    assert!(r.point.is_some(), "no compromised point to replay");
    assert!(r.identical);
    let r = fairness_replay(
        || Box::new(GaussianNoised::new(0.1, 77).unwrap()),
        &cfg,
        &theta,
        &mut Seed(14).rng(),
    )
    .unwrap();
    assert!(r.identical);
}

#[test]
fn marginal_family_runs() {
    let mut cfg = small(100);
    cfg.kind = FamilyKind::Marginal;
    let theta = theta_for(&cfg, 15);
    let mut probe = Probe::default();
    let t = run_ada_protocol(&mut probe, &cfg, &theta, &mut Seed(16).rng()).unwrap();
    assert_eq!(t.stages[0].answers.len(), cfg.k);
    assert!(probe.max_diff < 1e-12);
    assert_eq!(probe.lazy_mismatches, 0);
}

#[test]
fn gap_of_constant_query_is_zero() {
    let cfg = small(10);
    let family = cfg.family().unwrap();
    let dist = TiltedDistribution::new(&family, theta_for(&cfg, 17), Conditioning::TypeConditioned)
        .unwrap();
    let data: Vec<PointRef> = (0..10).map(|_| dist.sample(&mut Seed(1).rng())).collect();
    let g = gap(|_| 0.25, &data, &dist, 50, &mut Seed(2).rng()).unwrap();
    assert_eq!(g.gap, 0.0);
    assert!(gap(|_| 0.0, &[], &dist, 50, &mut Seed(2).rng()).is_err());
}

proptest! {
    #[test]
    fn final_query_is_clamped_and_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let qa = final_attack_query(lo, 6, 32, 0.125, 2.0);
        let qb = final_attack_query(hi, 6, 32, 0.125, 2.0);
        prop_assert!(qa.abs() <= 1.0 && qb.abs() <= 1.0);
        prop_assert!(qa <= qb);
    }

    #[test]
    fn answers_from_bits_are_means(bits in proptest::collection::vec(prop_oneof![Just(None), Just(Some(1i8)), Just(Some(-1i8))], 1..40), seed in any::<u64>()) {
        let basis = crate::families::hadamard_orthogonal_set(4).unwrap();
        let mut rng = Seed(seed).rng();
        let parts: Vec<(usize, usize)> = bits.iter().map(|_| (rng.random_range(0..2), rng.random_range(0..4))).collect();
        let out = answers_from_bits(2, &basis, 4, parts.iter().copied().zip(bits.iter().copied()));
        for h in 0..4u64 {
            for p in 0..4 {
                let brute: f64 = parts.iter().zip(&bits).map(|(&(i, j), b)| match b {
                    None => 1.0,
                    Some(b) => bit_sign(h, i) * basis[j][p] as f64 * *b as f64,
                }).sum::<f64>() / bits.len() as f64;
                prop_assert!((out[h as usize * 4 + p] - brute).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_analyst_is_flagged_at_first_stage() {
    let cfg = small(100);
    let dim = cfg.blocks() * cfg.k * cfg.d;
    let mut theta = vec![0.0; dim];
    for i in 0..cfg.m {
        theta[i * cfg.k * cfg.d] = 3.0;
    }
    let theta = TiltParam::point(theta);
    let t = run_ada_protocol(&mut ConstantAnswer(0.0), &cfg, &theta, &mut Seed(18).rng()).unwrap();
    assert_eq!(t.first_inaccurate, Some(0));
    assert!(!t.stages[0].accurate);
}

#[test]
fn final_query_formula_points() {
    assert_eq!(final_attack_query(0.0, 6, 32, 0.125, 2.0), 0.0);
    let edge = 2.0 * 2.0 * (32.0 * 8f64.ln()).sqrt() / 6.0;
    assert!((final_attack_query(edge, 6, 32, 0.125, 2.0) - 1.0).abs() < 1e-12);
    assert_eq!(final_attack_query(10.0 * edge, 6, 32, 0.125, 2.0), 1.0);
    assert_eq!(final_attack_query(-10.0 * edge, 6, 32, 0.125, 2.0), -1.0);
}

#[test]
fn final_query_is_centered_on_fresh_samples() {
    let mut cfg = AdaConfig::desk(2000);
    cfg.gap_draws = 100_000;
    let theta = theta_for(&cfg, 19);
    let t = run_ada_protocol(&mut ExactMean::default(), &cfg, &theta, &mut Seed(20).rng()).unwrap();
    let bound =
        2.0 * cfg.alpha.powf(cfg.threshold_constant.powi(2)) + 4.0 * t.gap.population.stderr;
    assert!(t.gap.population.estimate.abs() <= bound, "{:?}", t.gap);
}
