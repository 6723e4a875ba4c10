//! `key = value` experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use tiltlab_core::ada::AnalystKind;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    AttackHypercube,
    AttackRandom,
    AdaRun,
    MechBench,
    VerifyStructure,
    DivergenceCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::AttackHypercube,
        ExperimentKind::AttackRandom,
        ExperimentKind::AdaRun,
        ExperimentKind::MechBench,
        ExperimentKind::VerifyStructure,
        ExperimentKind::DivergenceCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::AttackHypercube => "attack-hypercube",
            ExperimentKind::AttackRandom => "attack-random",
            ExperimentKind::AdaRun => "ada-run",
            ExperimentKind::MechBench => "mech-bench",
            ExperimentKind::VerifyStructure => "verify-structure",
            ExperimentKind::DivergenceCheck => "divergence-check",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown experiment kind {s:?}"))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where θ is drawn from in attack experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    L2Ball,
    L2Sphere,
    L1Ball,
    L1Surface,
}

impl FromStr for RegionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l2-ball" => Ok(RegionKind::L2Ball),
            "l2-sphere" => Ok(RegionKind::L2Sphere),
            "l1-ball" => Ok(RegionKind::L1Ball),
            "l1-surface" => Ok(RegionKind::L1Surface),
            _ => Err(format!("unknown region {s:?}")),
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionKind::L2Ball => "l2-ball",
            RegionKind::L2Sphere => "l2-sphere",
            RegionKind::L1Ball => "l1-ball",
            RegionKind::L1Surface => "l1-surface",
        })
    }
}

/// Whether each ADA trial draws its own θ or all trials share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMode {
    PerTrial,
    /// One θ drawn from the master seed and reused by every trial.
    Frozen,
}

impl FromStr for ThetaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-trial" => Ok(ThetaMode::PerTrial),
            "frozen" => Ok(ThetaMode::Frozen),
            _ => Err(format!("unknown theta mode {s:?}")),
        }
    }
}

impl fmt::Display for ThetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThetaMode::PerTrial => "per-trial",
            ThetaMode::Frozen => "frozen",
        })
    }
}

/// Mean-release mechanism attacked by the score experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismKind {
    ExactMean,
    Gaussian,
    Constant,
}

impl FromStr for MechanismKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact-mean" => Ok(MechanismKind::ExactMean),
            "gaussian" => Ok(MechanismKind::Gaussian),
            "constant" => Ok(MechanismKind::Constant),
            _ => Err(format!("unknown mechanism {s:?}")),
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MechanismKind::ExactMean => "exact-mean",
            MechanismKind::Gaussian => "gaussian",
            MechanismKind::Constant => "constant",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKind {
    SparseHistogram,
    QueryRelease,
}

impl FromStr for BenchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sparse-histogram" => Ok(BenchKind::SparseHistogram),
            "query-release" => Ok(BenchKind::QueryRelease),
            _ => Err(format!("unknown bench {s:?}")),
        }
    }
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchKind::SparseHistogram => "sparse-histogram",
            BenchKind::QueryRelease => "query-release",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    ColumnSums,
    Expanding,
    Regular,
    Rademacher,
}

impl FromStr for CheckKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "column-sums" => Ok(CheckKind::ColumnSums),
            "expanding" => Ok(CheckKind::Expanding),
            "regular" => Ok(CheckKind::Regular),
            "rademacher" => Ok(CheckKind::Rademacher),
            _ => Err(format!("unknown structure check {s:?}")),
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckKind::ColumnSums => "column-sums",
            CheckKind::Expanding => "expanding",
            CheckKind::Regular => "regular",
            CheckKind::Rademacher => "rademacher",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyChoice {
    Hypercube,
    Tensor,
}

impl FromStr for FamilyChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hypercube" => Ok(FamilyChoice::Hypercube),
            "tensor" => Ok(FamilyChoice::Tensor),
            _ => Err(format!("unknown family {s:?}")),
        }
    }
}

impl fmt::Display for FamilyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyChoice::Hypercube => "hypercube",
            FamilyChoice::Tensor => "tensor",
        })
    }
}

/// Parsed configuration. Unset parameters fall back to per-kind defaults
/// when an experiment is resolved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub columns: Option<usize>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub c: Option<f64>,
    pub tau: Option<f64>,
    pub radius: Option<f64>,
    pub region: Option<RegionKind>,
    pub mechanism: Option<MechanismKind>,
    pub analyst: Option<AnalystKind>,
    pub fresh: Option<usize>,
    pub check: Option<CheckKind>,
    pub samples: Option<usize>,
    pub eta: Option<f64>,
    pub fraction: Option<f64>,
    pub bench: Option<BenchKind>,
    pub support: Option<usize>,
    pub family: Option<FamilyChoice>,
    pub pool: Option<usize>,
    pub gap_draws: Option<usize>,
    pub step: Option<f64>,
    pub theta: Option<ThetaMode>,
}

/// Every accepted key, in manifest order.
pub const KEYS: [&str; 31] = [
    "kind",
    "seed",
    "trials",
    "workers",
    "out",
    "d",
    "n",
    "m",
    "k",
    "columns",
    "epsilon",
    "delta",
    "alpha",
    "c",
    "tau",
    "radius",
    "region",
    "mechanism",
    "analyst",
    "fresh",
    "check",
    "samples",
    "eta",
    "fraction",
    "bench",
    "support",
    "family",
    "pool",
    "gap_draws",
    "step",
    "theta",
];

fn parse_value<T: FromStr>(raw: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| format!("cannot parse {raw:?}: {e}"))
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), String> {
        macro_rules! put {
            ($field:ident) => {{
                if self.$field.is_some() {
                    return Err(format!("duplicate key {key:?}"));
                }
                self.$field = Some(parse_value(raw)?);
            }};
        }
        match key {
            "kind" => put!(kind),
            "seed" => put!(seed),
            "trials" => put!(trials),
            "workers" => put!(workers),
            "out" => put!(out),
            "d" => put!(d),
            "n" => put!(n),
            "m" => put!(m),
            "k" => put!(k),
            "columns" => put!(columns),
            "epsilon" => put!(epsilon),
            "delta" => put!(delta),
            "alpha" => put!(alpha),
            "c" => put!(c),
            "tau" => put!(tau),
            "radius" => put!(radius),
            "region" => put!(region),
            "mechanism" => put!(mechanism),
            "analyst" => {
                if self.analyst.is_some() {
                    return Err(format!("duplicate key {key:?}"));
                }
                self.analyst = Some(AnalystKind::parse(raw).map_err(|e| e.to_string())?);
            }
            "fresh" => put!(fresh),
            "check" => put!(check),
            "samples" => put!(samples),
            "eta" => put!(eta),
            "fraction" => put!(fraction),
            "bench" => put!(bench),
            "support" => put!(support),
            "family" => put!(family),
            "pool" => put!(pool),
            "gap_draws" => put!(gap_draws),
            "step" => put!(step),
            "theta" => put!(theta),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> Option<String> {
        fn s<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(T::to_string)
        }
        match key {
            "kind" => s(&self.kind),
            "seed" => s(&self.seed),
            "trials" => s(&self.trials),
            "workers" => s(&self.workers),
            "out" => self.out.as_ref().map(|p| p.display().to_string()),
            "d" => s(&self.d),
            "n" => s(&self.n),
            "m" => s(&self.m),
            "k" => s(&self.k),
            "columns" => s(&self.columns),
            "epsilon" => s(&self.epsilon),
            "delta" => s(&self.delta),
            "alpha" => s(&self.alpha),
            "c" => s(&self.c),
            "tau" => s(&self.tau),
            "radius" => s(&self.radius),
            "region" => s(&self.region),
            "mechanism" => s(&self.mechanism),
            "analyst" => self.analyst.as_ref().map(AnalystKind::label),
            "fresh" => s(&self.fresh),
            "check" => s(&self.check),
            "samples" => s(&self.samples),
            "eta" => s(&self.eta),
            "fraction" => s(&self.fraction),
            "bench" => s(&self.bench),
            "support" => s(&self.support),
            "family" => s(&self.family),
            "pool" => s(&self.pool),
            "gap_draws" => s(&self.gap_draws),
            "step" => s(&self.step),
            "theta" => s(&self.theta),
            _ => None,
        }
    }

    /// Set keys as `key = value` lines; parses back to the same config.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .filter_map(|k| self.value_of(k).map(|v| format!("{k} = {v}\n")))
            .collect()
    }

    pub fn require_kind(&self) -> Result<ExperimentKind, CliError> {
        self.kind.ok_or(CliError::MissingKind)
    }
}

/// Parses a configuration; every problem is reported with its line number.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| CliError::Config {
            line: idx + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(err(format!("key {key:?} has no value")));
        }
        cfg.set(key, value).map_err(err)?;
    }
    cfg.require_kind()?;
    Ok(cfg)
}
