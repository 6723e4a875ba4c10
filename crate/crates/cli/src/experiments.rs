//! Per-kind experiment plans and single-trial runners.
//!
//! A trial is a pure function of the resolved plan and its trial seed, so
//! any CSV row can be recomputed from the manifest and the seed it carries.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use tiltlab_core::ada::{run_ada_protocol, AdaConfig, AnalystKind};
use tiltlab_core::attack::{
    run_attack_trial, run_shifted_attack_trial, separation_statistic, ThetaSampler,
};
use tiltlab_core::families::{FamilyKind, PointFamily, SignMatrix};
use tiltlab_core::mechanisms::{
    ConstantMechanism, EmpiricalMean, GaussianMechanism, HistogramVector, Mechanism, QueryRelease,
    SparseHistogram,
};
use tiltlab_core::seed::Seed;
use tiltlab_core::structure::{
    check_column_sums, check_expanding, check_regular, column_sum_limit, is_good_vector, k12,
    k12_sandwich_constant, rademacher_tail, TailMode, EXACT_TAIL_LIMIT,
};
use tiltlab_core::tilt::{divergence_check, Conditioning, Region, TiltParam, DEFAULT_STEP};

use crate::config::{
    BenchKind, CheckKind, ExperimentConfig, ExperimentKind, FamilyChoice, MechanismKind,
    RegionKind, ThetaMode,
};
use crate::error::{CliError, Result};

/// Smallest fitted sandwich constant counted as a pass.
pub const SANDWICH_FLOOR: f64 = 0.05;
/// Largest tolerated failure fraction in the expanding and regular checks.
pub const STRUCTURE_FAILURE_LIMIT: f64 = 0.01;
/// Slack on the shifted-attack quadratic bound.
pub const SHIFT_SLACK: f64 = 1.1;
/// Tolerance of the divergence identity.
pub const DIVERGENCE_TOLERANCE: f64 = 1e-6;
/// Compromised-pool ceiling for ADA runs.
pub const POOL_FRACTION_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub d: usize,
    pub columns: usize,
    pub n: usize,
    pub region: RegionKind,
    pub radius: f64,
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub delta: f64,
    pub fresh: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaPlan {
    pub config: AdaConfig,
    pub analyst: AnalystKind,
    pub radius: f64,
    /// Shared θ when the config asks for `theta = frozen`.
    pub frozen_theta: Option<TiltParam>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub bench: BenchKind,
    pub d: usize,
    pub columns: usize,
    pub support: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub c_prime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructurePlan {
    pub check: CheckKind,
    pub d: usize,
    pub columns: usize,
    pub samples: usize,
    pub k: usize,
    pub fraction: f64,
    pub radius: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergencePlan {
    pub family: FamilyChoice,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub radius: f64,
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub delta: f64,
    pub step: f64,
}

/// A configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    AttackHypercube(AttackPlan),
    AttackRandom(AttackPlan),
    Ada(AdaPlan),
    Bench(BenchPlan),
    Structure(StructurePlan),
    Divergence(DivergencePlan),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: usize,
    pub plan: Plan,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Parameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// `0.3 √(ln N)`.
pub fn structure_radius(columns: usize) -> f64 {
    0.3 * (columns as f64).ln().sqrt()
}

impl Experiment {
    pub fn resolve(cfg: &ExperimentConfig) -> Result<Self> {
        let kind = cfg.require_kind()?;
        let default_trials = match kind {
            ExperimentKind::AttackHypercube => 200,
            ExperimentKind::AttackRandom => 20,
            ExperimentKind::AdaRun => 10,
            ExperimentKind::MechBench => 100,
            ExperimentKind::VerifyStructure => 20,
            ExperimentKind::DivergenceCheck => 1,
        };
        let delta = cfg.delta.unwrap_or(1e-6);
        let plan = match kind {
            ExperimentKind::AttackHypercube | ExperimentKind::AttackRandom => {
                let random = kind == ExperimentKind::AttackRandom;
                let d = cfg.d.unwrap_or(64);
                let columns = cfg.columns.unwrap_or(256);
                let radius = cfg.radius.unwrap_or(if random {
                    structure_radius(columns)
                } else {
                    5.0 * (d as f64).sqrt()
                });
                let plan = AttackPlan {
                    d,
                    columns,
                    n: cfg.n.unwrap_or(if random { 8 } else { 4 }),
                    region: cfg.region.unwrap_or(RegionKind::L2Ball),
                    radius: positive("radius", radius)?,
                    mechanism: cfg.mechanism.unwrap_or(MechanismKind::ExactMean),
                    epsilon: cfg.epsilon.unwrap_or(0.1),
                    delta,
                    fresh: cfg.fresh.unwrap_or(if random { 10_000 } else { 1000 }),
                };
                if random {
                    Plan::AttackRandom(plan)
                } else {
                    Plan::AttackHypercube(plan)
                }
            }
            ExperimentKind::AdaRun => {
                let mut config = AdaConfig::desk(cfg.n.unwrap_or(2000));
                config.m = cfg.m.unwrap_or(config.m);
                config.k = cfg.k.unwrap_or(config.k);
                config.d = cfg.d.unwrap_or(config.d);
                config.alpha = cfg.alpha.unwrap_or(config.alpha);
                config.threshold_constant = cfg.c.unwrap_or(config.threshold_constant);
                config.tau_override = cfg.tau;
                config.pool = cfg.pool.unwrap_or(config.pool);
                config.gap_draws = cfg.gap_draws.unwrap_or(config.gap_draws);
                if matches!(cfg.family, Some(FamilyChoice::Hypercube)) {
                    return Err(CliError::Parameter("ada-run needs a tensor family".into()));
                }
                config.validate()?;
                let radius = positive(
                    "radius",
                    cfg.radius.unwrap_or(config.default_theta_radius()),
                )?;
                let frozen_theta = match cfg.theta.unwrap_or(ThetaMode::PerTrial) {
                    ThetaMode::PerTrial => None,
                    ThetaMode::Frozen => {
                        let dim = config.blocks() * config.k * config.d;
                        let master = Seed(cfg.seed.unwrap_or(0)).stream("frozen-theta");
                        Some(
                            ThetaSampler::new(Region::L1Ball(radius), dim)?
                                .sample(&mut master.rng()),
                        )
                    }
                };
                Plan::Ada(AdaPlan {
                    config,
                    analyst: cfg.analyst.unwrap_or(AnalystKind::ExactMean),
                    radius,
                    frozen_theta,
                })
            }
            ExperimentKind::MechBench => {
                let bench = cfg.bench.unwrap_or(BenchKind::SparseHistogram);
                let release = bench == BenchKind::QueryRelease;
                Plan::Bench(BenchPlan {
                    bench,
                    d: cfg.d.unwrap_or(512),
                    columns: cfg.columns.unwrap_or(if release { 4096 } else { 1024 }),
                    support: cfg.support.unwrap_or(64).max(1),
                    epsilon: positive("epsilon", cfg.epsilon.unwrap_or(1.0))?,
                    delta,
                    alpha: positive("alpha", cfg.alpha.unwrap_or(0.5))?,
                    c_prime: cfg.c,
                })
            }
            ExperimentKind::VerifyStructure => {
                let check = cfg.check.unwrap_or(CheckKind::ColumnSums);
                let (d, columns, samples) = match check {
                    CheckKind::ColumnSums => (256, 1024, 100_000),
                    CheckKind::Expanding => (128, 2048, 2000),
                    CheckKind::Regular => (64, 4096, 2000),
                    CheckKind::Rademacher => (20, 1, 100_000),
                };
                let d = cfg.d.unwrap_or(d);
                let columns = cfg.columns.unwrap_or(columns);
                let fraction = cfg
                    .fraction
                    .unwrap_or(tiltlab_core::structure::COLUMN_SUM_FRACTION);
                let k = cfg
                    .k
                    .unwrap_or(column_sum_limit(d, columns, fraction).max(1));
                Plan::Structure(StructurePlan {
                    check,
                    d,
                    columns,
                    samples: cfg.samples.unwrap_or(samples),
                    k,
                    fraction,
                    radius: match (cfg.radius, check) {
                        (Some(r), _) => positive("radius", r)?,
                        (None, CheckKind::Rademacher) => 1.0,
                        (None, _) => positive("radius", structure_radius(columns))?,
                    },
                    eta: cfg.eta.unwrap_or(0.2 * (columns as f64).ln()),
                })
            }
            ExperimentKind::DivergenceCheck => Plan::Divergence(DivergencePlan {
                family: cfg.family.unwrap_or(FamilyChoice::Hypercube),
                m: cfg.m.unwrap_or(2),
                k: cfg.k.unwrap_or(2),
                d: cfg.d.unwrap_or(3),
                n: cfg.n.unwrap_or(2),
                radius: positive("radius", cfg.radius.unwrap_or(1.0))?,
                mechanism: cfg.mechanism.unwrap_or(MechanismKind::ExactMean),
                epsilon: cfg.epsilon.unwrap_or(0.5),
                delta,
                step: positive("step", cfg.step.unwrap_or(DEFAULT_STEP))?,
            }),
        };
        Ok(Experiment {
            kind,
            seed: cfg.seed.unwrap_or(0),
            trials: cfg.trials.unwrap_or(default_trials),
            plan,
        })
    }

    /// Seed of trial `index` under the counter scheme `child(master, index)`.
    pub fn trial_seed(&self, index: usize) -> Seed {
        Seed(self.seed).child(index as u64)
    }

    pub fn header(&self) -> &'static [&'static str] {
        header(self.kind)
    }

    /// Data columns of one trial, without the leading `trial,trial_seed`
    /// and the trailing `ok,error`.
    pub fn run_trial(&self, seed: Seed) -> Result<TrialRow> {
        match &self.plan {
            Plan::AttackHypercube(p) => attack_hypercube(p, seed),
            Plan::AttackRandom(p) => attack_random(p, seed),
            Plan::Ada(p) => ada_run(p, seed),
            Plan::Bench(p) => mech_bench(p, seed),
            Plan::Structure(p) => verify_structure(p, seed),
            Plan::Divergence(p) => divergence(p, seed),
        }
    }
}

/// Fixed CSV header per experiment kind.
pub fn header(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::AttackHypercube => &[
            "trial",
            "trial_seed",
            "mechanism",
            "n",
            "in_sample_total",
            "fresh_mean",
            "fresh_stderr",
            "separation",
            "ok",
            "error",
        ],
        ExperimentKind::AttackRandom => &[
            "trial",
            "trial_seed",
            "mechanism",
            "n",
            "lambda_max",
            "shift_norm_sq",
            "fresh_second_moment",
            "fresh_stderr",
            "bound",
            "ok",
            "error",
        ],
        ExperimentKind::AdaRun => &[
            "trial",
            "trial_seed",
            "analyst",
            "n",
            "tau",
            "gap",
            "gap_stderr",
            "sample_mean",
            "population_mean",
            "first_inaccurate",
            "compromised",
            "max_pool_fraction",
            "max_open_pscore",
            "ok",
            "error",
        ],
        ExperimentKind::MechBench => &[
            "trial",
            "trial_seed",
            "bench",
            "mass",
            "released_mass",
            "linf_error",
            "linf_guarantee",
            "l2_error",
            "l2_target",
            "within_target",
            "ok",
            "error",
        ],
        ExperimentKind::VerifyStructure => &[
            "trial",
            "trial_seed",
            "check",
            "d",
            "columns",
            "draws",
            "failures",
            "failure_fraction",
            "statistic",
            "reference",
            "ok",
            "error",
        ],
        ExperimentKind::DivergenceCheck => &[
            "trial",
            "trial_seed",
            "family",
            "d",
            "n",
            "lhs",
            "rhs",
            "abs_err",
            "ok",
            "error",
        ],
    }
}

/// Kind-specific cells of a row plus its pass flag.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub cells: Vec<String>,
    pub ok: bool,
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn region(kind: RegionKind, radius: f64) -> Region {
    match kind {
        RegionKind::L2Ball => Region::L2Ball(radius),
        RegionKind::L2Sphere => Region::L2Sphere(radius),
        RegionKind::L1Ball => Region::L1Ball(radius),
        RegionKind::L1Surface => Region::L1Surface(radius),
    }
}

fn mechanism(
    kind: MechanismKind,
    epsilon: f64,
    delta: f64,
    dim: usize,
) -> Result<Box<dyn Mechanism>> {
    Ok(match kind {
        MechanismKind::ExactMean => Box::new(EmpiricalMean),
        MechanismKind::Gaussian => Box::new(GaussianMechanism::new(epsilon, delta, false)?),
        MechanismKind::Constant => Box::new(ConstantMechanism::new(vec![0.0; dim])),
    })
}

fn attack_hypercube(p: &AttackPlan, seed: Seed) -> Result<TrialRow> {
    let family = PointFamily::hypercube(p.d)?;
    let sampler = ThetaSampler::new(region(p.region, p.radius), p.d)?;
    let mech = mechanism(p.mechanism, p.epsilon, p.delta, p.d)?;
    let report = run_attack_trial(
        &family,
        &sampler,
        Conditioning::Plain,
        mech.as_ref(),
        p.n,
        p.fresh,
        &mut seed.rng(),
    )?;
    let fresh = report.fresh_stats();
    let sep = separation_statistic(&report)?;
    Ok(TrialRow {
        cells: vec![
            mech.name(),
            p.n.to_string(),
            f(report.in_sample_total()),
            f(fresh.mean()),
            f(fresh.stderr()),
            f(sep.value),
        ],
        ok: report.in_sample_total().is_finite() && fresh.mean().is_finite(),
    })
}

fn attack_random(p: &AttackPlan, seed: Seed) -> Result<TrialRow> {
    let family = PointFamily::matrix_columns(p.d, p.columns, seed.stream("matrix").0)?;
    let sampler = ThetaSampler::new(region(p.region, p.radius), p.d)?;
    let mech = mechanism(p.mechanism, p.epsilon, p.delta, p.d)?;
    let report = run_shifted_attack_trial(
        &family,
        &sampler,
        mech.as_ref(),
        p.n,
        p.fresh,
        &mut seed.rng(),
    )?;
    let shift = report
        .shift
        .ok_or_else(|| CliError::Parameter("shifted attack returned no shift summary".into()))?;
    let bound = shift.quadratic_bound();
    Ok(TrialRow {
        cells: vec![
            mech.name(),
            p.n.to_string(),
            f(shift.lambda_max),
            f(shift.shift_norm_sq),
            f(shift.fresh_second_moment.estimate),
            f(shift.fresh_second_moment.stderr),
            f(bound),
        ],
        ok: shift.fresh_second_moment.estimate <= SHIFT_SLACK * bound,
    })
}

fn ada_run(p: &AdaPlan, seed: Seed) -> Result<TrialRow> {
    let cfg = &p.config;
    let dim = cfg.blocks() * cfg.k * cfg.d;
    let theta = match &p.frozen_theta {
        Some(theta) => theta.clone(),
        None => ThetaSampler::new(Region::L1Ball(p.radius), dim)?
            .sample(&mut seed.stream("theta").rng()),
    };
    let mut analyst = p.analyst.build(seed.stream("analyst").0)?;
    let t = run_ada_protocol(analyst.as_mut(), cfg, &theta, &mut seed.rng())?;
    let open = t
        .stages
        .iter()
        .map(|s| s.max_open_pscore)
        .fold(f64::NEG_INFINITY, f64::max);
    let pool = t.max_pool_fraction();
    let cap = t.tau + 2.0 / cfg.blocks() as f64;
    Ok(TrialRow {
        cells: vec![
            p.analyst.label(),
            cfg.n.to_string(),
            f(t.tau),
            f(t.gap.gap),
            f(t.gap.population.stderr),
            f(t.gap.sample_mean),
            f(t.gap.population.estimate),
            t.first_inaccurate
                .map(|s| s.to_string())
                .unwrap_or_default(),
            t.compromised_at
                .iter()
                .filter(|c| c.is_some())
                .count()
                .to_string(),
            f(pool),
            f(open),
        ],
        ok: t.compromise_monotone() && pool <= POOL_FRACTION_LIMIT && open <= cap + 1e-9,
    })
}

/// A random input of `1..=support` elements with weights in `[0.1, 1.1)`,
/// scaled to slightly above `mass`.
pub fn random_release_input<R: Rng + ?Sized>(
    rng: &mut R,
    columns: usize,
    support: usize,
    mass: f64,
) -> Result<HistogramVector> {
    let count = rng.random_range(1..=support);
    let x = HistogramVector::from_pairs((0..count).map(|_| {
        (
            rng.random_range(0..columns as u64),
            rng.random::<f64>() + 0.1,
        )
    }))?;
    Ok(x.scaled(mass * (1.0 + 1e-7) / x.mass()))
}

fn mech_bench(p: &BenchPlan, seed: Seed) -> Result<TrialRow> {
    let mut rng = seed.rng();
    match p.bench {
        BenchKind::SparseHistogram => {
            let count = rng.random_range(1..=p.support);
            let x = HistogramVector::from_pairs((0..count).map(|_| {
                (
                    rng.random_range(0..p.columns as u64),
                    rng.random_range(1..=10u32) as f64,
                )
            }))?;
            let hist = SparseHistogram::new(p.epsilon, p.delta)?;
            let out = hist.release(&x, &mut rng)?;
            let linf = x.linf_distance(&out);
            let mass_ok = (out.mass() - x.mass()).abs() <= 1e-9 * x.mass();
            Ok(TrialRow {
                cells: vec![
                    p.bench.to_string(),
                    f(x.mass()),
                    f(out.mass()),
                    f(linf),
                    f(hist.linf_guarantee()),
                    String::new(),
                    String::new(),
                    String::new(),
                ],
                ok: mass_ok && linf <= hist.linf_guarantee(),
            })
        }
        BenchKind::QueryRelease => {
            let matrix = SignMatrix::random(p.d, p.columns, seed.stream("matrix").0);
            let mut release = QueryRelease::new(p.epsilon, p.delta, p.alpha)?;
            if let Some(c) = p.c_prime {
                release = release.with_c_prime(positive("c", c)?);
            }
            let x = random_release_input(&mut rng, p.columns, p.support, release.required_mass())?;
            let truth = QueryRelease::true_answers(&matrix, &x)?;
            let out = release.release(&matrix, &x, &mut rng)?;
            let l2 = truth
                .iter()
                .zip(&out.estimate)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let target = p.alpha * (p.d as f64).sqrt();
            let released = out.histogram.mass();
            Ok(TrialRow {
                cells: vec![
                    p.bench.to_string(),
                    f(out.mass),
                    f(released),
                    String::new(),
                    String::new(),
                    f(l2),
                    f(target),
                    (l2 <= target).to_string(),
                ],
                ok: (released - out.mass).abs() <= 1e-9 * out.mass,
            })
        }
    }
}

/// A random vector with at least half its coordinates of size `≥ ‖a‖₂/(5√d)`.
pub fn random_good_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let a: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if is_good_vector(&a) {
            return a;
        }
    }
}

/// `t` grid of the tail and sandwich checks.
pub fn tail_grid() -> Vec<f64> {
    (1..=8).map(|i| 0.5 * i as f64).collect()
}

fn verify_structure(p: &StructurePlan, seed: Seed) -> Result<TrialRow> {
    let mut rng = seed.rng();
    let matrix = || SignMatrix::random(p.d, p.columns, seed.stream("matrix").0);
    let (draws, failures, statistic, reference, ok) = match p.check {
        CheckKind::ColumnSums => {
            let r = check_column_sums(&matrix(), p.k, p.samples, p.fraction, &mut rng)?;
            (
                r.trials,
                r.violations,
                r.mean_sq.estimate,
                r.expected_sq,
                r.violations == 0,
            )
        }
        CheckKind::Expanding => {
            let r = check_expanding(&matrix(), p.radius, p.eta, p.samples, &mut rng)?;
            (
                r.draws,
                r.failures,
                r.mean_inner,
                r.eta_probe,
                r.failure_fraction <= STRUCTURE_FAILURE_LIMIT,
            )
        }
        CheckKind::Regular => {
            let r = check_regular(&matrix(), p.radius, p.samples, &mut rng)?;
            (
                r.draws,
                r.exceed,
                r.max_lambda,
                2.0,
                r.exceed_fraction <= STRUCTURE_FAILURE_LIMIT,
            )
        }
        CheckKind::Rademacher => {
            let a = random_good_vector(&mut rng, p.d);
            let grid = tail_grid();
            let mode = if p.d <= EXACT_TAIL_LIMIT {
                TailMode::Exact
            } else {
                TailMode::MonteCarlo { samples: p.samples }
            };
            let tails = rademacher_tail(&a, &grid, mode, &mut rng)?;
            let c = k12_sandwich_constant(&a, &grid)?;
            let l2 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let upper = grid
                .iter()
                .all(|&t| k12(&a, t).is_ok_and(|v| v <= t * l2 * (1.0 + 1e-12)));
            (
                grid.len(),
                tails.hoeffding_violations,
                c,
                SANDWICH_FLOOR,
                tails.hoeffding_violations == 0 && c >= SANDWICH_FLOOR && upper,
            )
        }
    };
    Ok(TrialRow {
        cells: vec![
            p.check.to_string(),
            p.d.to_string(),
            p.columns.to_string(),
            draws.to_string(),
            failures.to_string(),
            f(if draws == 0 {
                0.0
            } else {
                failures as f64 / draws as f64
            }),
            f(statistic),
            f(reference),
        ],
        ok,
    })
}

fn divergence(p: &DivergencePlan, seed: Seed) -> Result<TrialRow> {
    let (family, mode) = match p.family {
        FamilyChoice::Hypercube => (PointFamily::hypercube(p.d)?, Conditioning::Plain),
        FamilyChoice::Tensor => (
            PointFamily::tensor(p.m, p.k, p.d)?,
            Conditioning::TypeConditioned,
        ),
    };
    let mut rng = seed.rng();
    let theta = ThetaSampler::new(Region::L2Ball(p.radius), family.dim())?.sample(&mut rng);
    let mech = mechanism(p.mechanism, p.epsilon, p.delta, family.dim())?;
    let coins: Vec<u64> = match p.mechanism {
        MechanismKind::Gaussian => (0..4).map(|_| rng.random()).collect(),
        _ => vec![0],
    };
    let r = divergence_check(
        &family,
        theta.theta(),
        mode,
        mech.as_ref(),
        &coins,
        p.n,
        p.step,
    )?;
    debug_assert!(matches!(
        family.kind(),
        FamilyKind::Hypercube | FamilyKind::Tensor
    ));
    Ok(TrialRow {
        cells: vec![
            p.family.to_string(),
            p.d.to_string(),
            p.n.to_string(),
            f(r.lhs),
            f(r.rhs),
            f(r.abs_err),
        ],
        ok: r.abs_err <= DIVERGENCE_TOLERANCE,
    })
}
