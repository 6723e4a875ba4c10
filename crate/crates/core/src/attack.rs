//! θ samplers and the score-attack harness.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::families::{FamilyKind, PointFamily};
use crate::mechanisms::{Dataset, Mechanism};
use crate::stats::{Estimate, RunningStats};
use crate::tilt::{Conditioning, Region, TiltParam, TiltedDistribution};

/// Draws θ uniformly from a ball or surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSampler {
    region: Region,
    dim: usize,
}

impl ThetaSampler {
    pub fn new(region: Region, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("θ dimension must be at least 1"));
        }
        let radius = match region {
            Region::L2Ball(r) | Region::L2Sphere(r) | Region::L1Ball(r) | Region::L1Surface(r) => r,
            Region::Point => return Err(invalid("a sampler needs a ball or surface region")),
        };
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(invalid(format!(
                "radius must be finite and non-negative, got {radius}"
            )));
        }
        Ok(ThetaSampler { region, dim })
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TiltParam {
        let dim = self.dim;
        let theta = match self.region {
            Region::L2Sphere(r) => sphere(dim, r, rng),
            Region::L2Ball(r) => {
                let shrink = rng.random::<f64>().powf(1.0 / dim as f64);
                sphere(dim, r * shrink, rng)
            }
            Region::L1Surface(r) => l1_surface(dim, r, rng),
            Region::L1Ball(r) => {
                let shrink = rng.random::<f64>().powf(1.0 / dim as f64);
                l1_surface(dim, r * shrink, rng)
            }
            Region::Point => unreachable!("rejected at construction"),
        };
        TiltParam::new(theta, self.region).expect("sampler output lies in its region")
    }

    /// Outward unit normal at a surface point. `None` for balls and for θ = 0.
    pub fn normal(&self, theta: &[f64]) -> Option<Vec<f64>> {
        match self.region {
            Region::L2Sphere(_) => {
                let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
                (norm > 0.0).then(|| theta.iter().map(|x| x / norm).collect())
            }
            Region::L1Surface(_) => {
                let scale = 1.0 / (theta.len() as f64).sqrt();
                Some(theta.iter().map(|x| sign(*x) * scale).collect())
            }
            _ => None,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn sphere<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return g.into_iter().map(|x| radius * x / norm).collect();
        }
    }
}

fn l1_surface<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let e: Vec<f64> = (0..dim)
            .map(|_| {
                let mag: f64 = Exp1.sample(rng);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let total = e.iter().map(|x| x.abs()).sum::<f64>();
        if total > 0.0 {
            return e.into_iter().map(|x| radius * x / total).collect();
        }
    }
}

/// Extra fields recorded by the shifted attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSummary {
    pub lambda_max: f64,
    /// `‖A(x) − μ_θ‖₂²`.
    pub shift_norm_sq: f64,
    /// Mean of the squared fresh scores.
    pub fresh_second_moment: Estimate,
}

impl ShiftSummary {
    /// Upper bound `λ_max · ‖A(x) − μ_θ‖₂²` on the fresh second moment.
    pub fn quadratic_bound(&self) -> f64 {
        self.lambda_max * self.shift_norm_sq
    }
}

/// Scores of one attack trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub region: Region,
    pub n: usize,
    pub mechanism: String,
    /// Score of each dataset point against the release.
    pub in_sample: Vec<f64>,
    /// Scores of independent draws against the same release.
    pub fresh: Vec<f64>,
    pub shift: Option<ShiftSummary>,
}

impl ScoreReport {
    pub fn in_sample_total(&self) -> f64 {
        self.in_sample.iter().sum()
    }

    pub fn in_sample_stats(&self) -> RunningStats {
        self.in_sample.iter().copied().collect()
    }

    pub fn fresh_stats(&self) -> RunningStats {
        self.fresh.iter().copied().collect()
    }
}

/// A standardized difference, or the sentinel when the denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    pub value: f64,
    pub degenerate: bool,
}

impl Separation {
    fn from_parts(diff: f64, stderr: f64) -> Self {
        if stderr > 0.0 && stderr.is_finite() {
            Separation {
                value: diff / stderr,
                degenerate: false,
            }
        } else {
            Separation {
                value: f64::INFINITY,
                degenerate: true,
            }
        }
    }
}

/// One trial: draw θ, a dataset of `n` points, release, then score the
/// dataset and `fresh_count` independent draws.
#[allow(clippy::too_many_arguments)]
pub fn run_attack_trial<R: RngCore>(
    family: &PointFamily,
    sampler: &ThetaSampler,
    mode: Conditioning,
    mechanism: &dyn Mechanism,
    n: usize,
    fresh_count: usize,
    rng: &mut R,
) -> Result<ScoreReport> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    check_dim(family, sampler)?;
    let param = sampler.sample(rng);
    let dist = TiltedDistribution::new(family, param, mode)?;
    let points: Vec<_> = (0..n).map(|_| dist.sample(rng)).collect();
    let data = Dataset::new(family, points)?;
    let answer = mechanism.release(data.vectors(), rng)?;
    if answer.estimate.len() != family.dim() {
        return Err(invalid("mechanism output has the wrong dimension"));
    }
    let q = &answer.estimate;
    let in_sample = data.points().iter().map(|p| dist.score(p, q)).collect();
    let fresh = (0..fresh_count)
        .map(|_| {
            let p = dist.sample(rng);
            dist.score(&p, q)
        })
        .collect();
    Ok(ScoreReport {
        region: sampler.region(),
        n,
        mechanism: mechanism.name(),
        in_sample,
        fresh,
        shift: None,
    })
}

/// One trial against a matrix-columns family with both arguments of the
/// score centered at the exact mean.
pub fn run_shifted_attack_trial<R: RngCore>(
    family: &PointFamily,
    sampler: &ThetaSampler,
    mechanism: &dyn Mechanism,
    n: usize,
    fresh_count: usize,
    rng: &mut R,
) -> Result<ScoreReport> {
    if family.kind() != FamilyKind::MatrixColumns {
        return Err(invalid("the shifted attack needs a matrix-columns family"));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    check_dim(family, sampler)?;
    let param = sampler.sample(rng);
    let dist = TiltedDistribution::new(family, param, Conditioning::Plain)?;
    let points: Vec<_> = (0..n).map(|_| dist.sample(rng)).collect();
    let data = Dataset::new(family, points)?;
    let answer = mechanism.release(data.vectors(), rng)?;
    if answer.estimate.len() != family.dim() {
        return Err(invalid("mechanism output has the wrong dimension"));
    }
    let shifted: Vec<f64> = answer
        .estimate
        .iter()
        .zip(dist.mean())
        .map(|(a, m)| a - m)
        .collect();
    let in_sample = data
        .points()
        .iter()
        .map(|p| dist.score(p, &shifted))
        .collect();
    let mut square = RunningStats::new();
    let fresh = (0..fresh_count)
        .map(|_| {
            let p = dist.sample(rng);
            let s = dist.score(&p, &shifted);
            square.push(s * s);
            s
        })
        .collect();
    let lambda_max = dist.lambda_max_exact()?.lambda_max;
    Ok(ScoreReport {
        region: sampler.region(),
        n,
        mechanism: mechanism.name(),
        in_sample,
        fresh,
        shift: Some(ShiftSummary {
            lambda_max,
            shift_norm_sq: shifted.iter().map(|x| x * x).sum(),
            fresh_second_moment: square.estimate(),
        }),
    })
}

fn check_dim(family: &PointFamily, sampler: &ThetaSampler) -> Result<()> {
    if sampler.dim() != family.dim() {
        return Err(invalid(format!(
            "sampler dimension {} differs from family dimension {}",
            sampler.dim(),
            family.dim()
        )));
    }
    Ok(())
}

/// Within one trial: mean in-sample score against mean fresh score, divided
/// by the pooled standard error.
pub fn separation_statistic(report: &ScoreReport) -> Result<Separation> {
    if report.fresh.len() < 2 {
        return Err(invalid("separation needs at least two fresh scores"));
    }
    let inside = report.in_sample_stats();
    let fresh = report.fresh_stats();
    let pooled = (inside.stderr().powi(2) + fresh.stderr().powi(2)).sqrt();
    Ok(Separation::from_parts(inside.mean() - fresh.mean(), pooled))
}

/// Across trials: mean total in-sample score against `n` times the mean
/// fresh score, divided by the combined standard error.
pub fn aggregate_separation(reports: &[ScoreReport]) -> Result<Separation> {
    if reports.len() < 2 {
        return Err(invalid("aggregation needs at least two trials"));
    }
    let totals: RunningStats = reports.iter().map(ScoreReport::in_sample_total).collect();
    let fresh: RunningStats = reports
        .iter()
        .map(|r| r.n as f64 * r.fresh_stats().mean())
        .collect();
    let combined = (totals.stderr().powi(2) + fresh.stderr().powi(2)).sqrt();
    Ok(Separation::from_parts(
        totals.mean() - fresh.mean(),
        combined,
    ))
}
