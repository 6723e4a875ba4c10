//! The staged adaptive-data-analysis adversary.
//!
//! A run draws a named dataset from a type-conditioned tilt of the tensor
//! (or marginal) family, hides its v-bits behind an [`Obfuscation`], and
//! then releases the slice queries one stage at a time. After each stage the
//! analyst's answers are reconstructed into a slice of the mean estimate,
//! partial scores are advanced, and points whose partial score crossed the
//! threshold are compromised: every later query answers `1` on them. After
//! the last stage the clamped score is used as a single distinguishing
//! query and its sample-versus-population gap is recorded.
//!
//! Partial scores depend on a point only through its type and its true bit
//! prefix, so tracking is implicit: dataset points and a Monte-Carlo
//! population pool are advanced explicitly, and any other point is scored
//! on demand from the recorded slice coefficients.

mod analysts;
mod obfuscation;

pub use analysts::{
    builtin_analysts, empirical_answers, AnalystKind, ClampedMean, ConstantAnswer, ExactMean,
    GaussianNoised, SampleSplit,
};
pub use obfuscation::{MaskKey, Obfuscation};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::families::{bit_sign, FamilyKind, Locus, PointFamily, PointRef};
use crate::mechanisms::{project_to_h, reconstruct_slice, Projection, SliceMethod};
use crate::seed::mix64;
use crate::stats::{Estimate, RunningStats};
use crate::tilt::{sample_bits, Conditioning, TiltParam, TiltedDistribution};

/// Default population pool size.
pub const DEFAULT_POOL: usize = 20_000;
/// Default number of fresh draws for the population side of the gap.
pub const DEFAULT_GAP_DRAWS: usize = 20_000;
/// Standard errors of slack in the per-stage accuracy check.
pub const ACCURACY_SLACK: f64 = 4.0;

/// Parameters of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaConfig {
    pub kind: FamilyKind,
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub alpha: f64,
    /// The constant `C` in the threshold and the final query scale.
    pub threshold_constant: f64,
    /// Replaces the derived threshold when set.
    pub tau_override: Option<f64>,
    pub n: usize,
    /// Name space size; `n³` when unset.
    pub names: Option<u64>,
    pub pool: usize,
    pub gap_draws: usize,
    pub projection: Projection,
}

impl AdaConfig {
    /// The frozen desk operating point: m = 6, k = 64, d = 32, α = 1/8, C = 2.
    pub fn desk(n: usize) -> Self {
        AdaConfig {
            kind: FamilyKind::Tensor,
            m: 6,
            k: 64,
            d: 32,
            alpha: 0.125,
            threshold_constant: 2.0,
            tau_override: None,
            n,
            names: None,
            pool: DEFAULT_POOL,
            gap_draws: DEFAULT_GAP_DRAWS,
            projection: Projection::Fast,
        }
    }

    /// Number of `e^i` blocks; the marginal family has one.
    pub fn blocks(&self) -> usize {
        match self.kind {
            FamilyKind::Marginal => 1,
            _ => self.m,
        }
    }

    /// `C √(d ln(1/α)) / m` unless overridden.
    pub fn tau(&self) -> f64 {
        if let Some(tau) = self.tau_override {
            return tau;
        }
        self.threshold_constant * (self.d as f64 * (1.0 / self.alpha).ln()).sqrt()
            / self.blocks() as f64
    }

    /// `m / (2C √(d ln(1/α)))`, the factor applied to the final score.
    pub fn final_scale(&self) -> f64 {
        final_query_scale(self.blocks(), self.d, self.alpha, self.threshold_constant)
    }

    pub fn name_space(&self) -> u64 {
        self.names
            .unwrap_or_else(|| (self.n as u64).saturating_pow(3).max(1))
    }

    /// `mkd / √k`, the default ℓ1 radius for θ.
    pub fn default_theta_radius(&self) -> f64 {
        (self.blocks() * self.k * self.d) as f64 / (self.k as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.kind, FamilyKind::Tensor | FamilyKind::Marginal) {
            return Err(invalid(
                "the adaptive adversary runs on tensor or marginal families",
            ));
        }
        if self.n == 0 {
            return Err(Error::EmptyDataset);
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("α must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.threshold_constant > 0.0) {
            return Err(invalid("threshold constant must be positive"));
        }
        if self
            .tau_override
            .is_some_and(|t| !(t > 0.0 && t.is_finite()))
        {
            return Err(invalid("τ must be positive and finite"));
        }
        if self.d == 0 || self.d > 64 {
            return Err(invalid("d must lie in 1..=64"));
        }
        let w = self.name_space();
        if (w as f64) < (self.n as f64).powi(2) {
            return Err(invalid(format!(
                "name space {w} is below n² = {}",
                self.n * self.n
            )));
        }
        if self.pool == 0 || self.gap_draws == 0 {
            return Err(invalid("pool and gap draws must be positive"));
        }
        Ok(())
    }

    pub fn family(&self) -> Result<PointFamily> {
        let base = match self.kind {
            FamilyKind::Marginal => PointFamily::marginal(self.k, self.d)?,
            _ => PointFamily::tensor(self.m, self.k, self.d)?,
        };
        base.with_names(self.name_space())
    }
}

/// `m / (2C √(d ln(1/α)))`.
pub fn final_query_scale(m: usize, d: usize, alpha: f64, c: f64) -> f64 {
    m as f64 / (2.0 * c * (d as f64 * (1.0 / alpha).ln()).sqrt())
}

/// `clamp(score · m / (2C √(d ln(1/α))), −1, 1)`.
pub fn final_attack_query(score: f64, m: usize, d: usize, alpha: f64, c: f64) -> f64 {
    (score * final_query_scale(m, d, alpha, c)).clamp(-1.0, 1.0)
}

fn type_parts(point: &PointRef) -> Result<(usize, usize)> {
    match point.locus {
        Locus::Tensor { i, j, .. } => Ok((i, j)),
        Locus::Marginal { j, .. } => Ok((0, j)),
        _ => Err(invalid(
            "adaptive queries apply to tensor and marginal points",
        )),
    }
}

/// Per-stage score coefficients, enough to score any point implicitly.
#[derive(Debug, Clone)]
struct Tracker {
    k: usize,
    d: usize,
    tau: f64,
    /// `E[v_r | type]`, `type * d + r`.
    means: Vec<f64>,
    /// `⟨u^j, q_{i,*,r}⟩` per finished stage, indexed by type.
    coefs: Vec<Vec<f64>>,
}

impl Tracker {
    fn increment(&self, stage: usize, ty: usize, bits: u64) -> f64 {
        (bit_sign(bits, stage) - self.means[ty * self.d + stage]) * self.coefs[stage][ty]
    }

    /// Whether a point is compromised when `stage` starts.
    fn compromised(&self, ty: usize, bits: u64, stage: usize) -> bool {
        let mut score = 0.0;
        for r in 0..stage.min(self.coefs.len()) {
            score += self.increment(r, ty, bits);
            if score > self.tau {
                return true;
            }
        }
        false
    }

    fn score(&self, ty: usize, bits: u64) -> f64 {
        (0..self.coefs.len())
            .map(|r| self.increment(r, ty, bits))
            .sum()
    }

    fn type_index(&self, i: usize, j: usize) -> usize {
        i * self.k + j
    }
}

/// One query of a stage: `h(e^i) · u^j_p · v_r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageQuery {
    /// Predicate on the blocks, one bit per block; set bit is `−1`.
    pub h: u64,
    pub p: usize,
}

/// The masked queries of one stage, evaluable on obfuscated points.
pub struct QueryBatch<'a> {
    stage: usize,
    blocks: usize,
    predicates: usize,
    basis: &'a [Vec<i8>],
    obfuscation: &'a Obfuscation,
    tracker: &'a Tracker,
    dataset: &'a [PointRef],
    dataset_bits: &'a [Option<i8>],
    index: &'a HashMap<PointRef, usize>,
}

impl QueryBatch<'_> {
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn k(&self) -> usize {
        self.basis.len()
    }

    pub fn predicates(&self) -> usize {
        self.predicates
    }

    pub fn basis(&self) -> &[Vec<i8>] {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.predicates * self.k()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Queries are ordered by predicate, then by `p`.
    pub fn query(&self, index: usize) -> StageQuery {
        StageQuery {
            h: (index / self.k()) as u64,
            p: index % self.k(),
        }
    }

    /// The true `v_r` of an obfuscated point as `±1`, or `None` once the
    /// point is compromised.
    pub fn slice_bit(&self, point: &PointRef) -> Result<Option<i8>> {
        if let Some(&idx) = self.index.get(point) {
            return Ok(self.dataset_bits[idx]);
        }
        self.lazy_slice_bit(point)
    }

    /// Deobfuscates and replays partial scores without the dataset index.
    fn lazy_slice_bit(&self, point: &PointRef) -> Result<Option<i8>> {
        let (i, j) = type_parts(point)?;
        let truth = self.obfuscation.true_prefix(point, self.stage + 1)?;
        let ty = self.tracker.type_index(i, j);
        if self.tracker.compromised(ty, truth, self.stage) {
            Ok(None)
        } else {
            Ok(Some(bit_sign(truth, self.stage) as i8))
        }
    }

    pub fn slice_bits(&self, points: &[PointRef]) -> Result<Vec<Option<i8>>> {
        if std::ptr::eq(points.as_ptr(), self.dataset.as_ptr())
            && points.len() == self.dataset.len()
        {
            return Ok(self.dataset_bits.to_vec());
        }
        points.iter().map(|p| self.slice_bit(p)).collect()
    }

    /// Value of a query on an obfuscated point.
    pub fn eval(&self, query: StageQuery, point: &PointRef) -> Result<f64> {
        let (i, j) = type_parts(point)?;
        Ok(match self.slice_bit(point)? {
            None => 1.0,
            Some(b) => bit_sign(query.h, i) * self.basis[j][query.p] as f64 * b as f64,
        })
    }
}

/// An adaptive analyst under attack.
pub trait Analyst {
    fn name(&self) -> String;
    /// Receives the obfuscated dataset once.
    fn begin(&mut self, data: &[PointRef]) -> Result<()>;
    /// One answer in `[−1, 1]` per query of the batch, in batch order.
    fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>>;
}

/// Means of every stage query over points with the given types and slice
/// bits; compromised points contribute `1`.
fn answers_from_bits(
    blocks: usize,
    basis: &[Vec<i8>],
    predicates: usize,
    points: impl Iterator<Item = ((usize, usize), Option<i8>)>,
) -> Vec<f64> {
    let k = basis.len();
    let mut sums = vec![0.0; blocks * k];
    let mut compromised = 0usize;
    let mut count = 0usize;
    for ((i, j), bit) in points {
        count += 1;
        match bit {
            None => compromised += 1,
            Some(b) => sums[i * k + j] += b as f64,
        }
    }
    if count == 0 {
        return vec![0.0; predicates * k];
    }
    let mut per_block = vec![0.0; blocks * k];
    for i in 0..blocks {
        for j in 0..k {
            let c = sums[i * k + j];
            if c != 0.0 {
                for (p, &u) in basis[j].iter().enumerate() {
                    per_block[i * k + p] += u as f64 * c;
                }
            }
        }
    }
    let n = count as f64;
    let mut out = Vec::with_capacity(predicates * k);
    for h in 0..predicates as u64 {
        for p in 0..k {
            let s: f64 = (0..blocks)
                .map(|i| bit_sign(h, i) * per_block[i * k + p])
                .sum();
            out.push((compromised as f64 + s) / n);
        }
    }
    out
}

/// What the adversary draws before talking to the analyst.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaSetup {
    /// True, named dataset points.
    pub data: Vec<PointRef>,
    pub obfuscation: Obfuscation,
    pub pool_seed: u64,
    pub gap_seed: u64,
}

impl AdaSetup {
    pub fn draw<R: Rng + ?Sized>(
        cfg: &AdaConfig,
        dist: &TiltedDistribution<'_>,
        rng: &mut R,
    ) -> Result<Self> {
        let names = cfg.name_space();
        let obfuscation = Obfuscation::new(rng.random(), names, cfg.d)?;
        let data = (0..cfg.n)
            .map(|_| {
                let p = dist.sample(rng);
                PointRef::named(p.locus, rng.random_range(0..names))
            })
            .collect();
        Ok(AdaSetup {
            data,
            obfuscation,
            pool_seed: rng.random(),
            gap_seed: rng.random(),
        })
    }

    pub fn names_distinct(&self) -> bool {
        let mut names: Vec<u64> = self.data.iter().filter_map(|p| p.name).collect();
        names.sort_unstable();
        names.windows(2).all(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub query_digest: u64,
    pub answer_digest: u64,
    pub answers: Vec<f64>,
    /// `q_{i,p,r}` at `i * k + p`.
    pub slice: Vec<f64>,
    /// Largest `|answer − population mean|` over the stage.
    pub max_error: f64,
    pub accurate: bool,
    /// Slices that needed the Chebyshev fit.
    pub chebyshev_fits: usize,
    pub compromised_data: usize,
    pub compromised_pool_fraction: f64,
    /// Largest partial score after this stage among points open at its start.
    pub max_open_pscore: f64,
}

/// Sample mean of a query against its population mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub sample_mean: f64,
    pub population: Estimate,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaTranscript {
    pub analyst: String,
    pub n: usize,
    pub tau: f64,
    pub names_distinct: bool,
    pub stages: Vec<StageRecord>,
    /// The full estimate `q`, in family layout.
    pub q: Vec<f64>,
    /// Stage at whose start each dataset point became compromised.
    pub compromised_at: Vec<Option<usize>>,
    pub first_inaccurate: Option<usize>,
    pub final_scale: f64,
    pub gap: GapReport,
}

impl AdaTranscript {
    pub fn max_pool_fraction(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| s.compromised_pool_fraction)
            .fold(0.0, f64::max)
    }

    /// Compromise counts never decrease.
    pub fn compromise_monotone(&self) -> bool {
        self.stages.windows(2).all(|w| {
            w[0].compromised_data <= w[1].compromised_data
                && w[0].compromised_pool_fraction <= w[1].compromised_pool_fraction
        })
    }

    /// One line per stage plus a closing summary line.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            out.push_str(&format!(
                "stage={} queries={:016x} answers={:016x} compromised={} pool_fraction={:.6} accurate={}\n",
                s.stage, s.query_digest, s.answer_digest, s.compromised_data, s.compromised_pool_fraction, s.accurate
            ));
        }
        out.push_str(&format!(
            "final analyst={} n={} tau={:.6} gap={:.6} gap_stderr={:.6}\n",
            self.analyst, self.n, self.tau, self.gap.gap, self.gap.population.stderr
        ));
        out
    }

    /// Stage-level agreement, ignoring the final gap.
    pub fn same_interaction(&self, other: &AdaTranscript) -> bool {
        self.stages.len() == other.stages.len()
            && self.stages.iter().zip(&other.stages).all(|(a, b)| {
                a.answers
                    .iter()
                    .map(|x| x.to_bits())
                    .eq(b.answers.iter().map(|x| x.to_bits()))
                    && a.slice
                        .iter()
                        .map(|x| x.to_bits())
                        .eq(b.slice.iter().map(|x| x.to_bits()))
                    && a.compromised_data == b.compromised_data
                    && a.compromised_pool_fraction == b.compromised_pool_fraction
                    && a.accurate == b.accurate
            })
    }
}

fn digest(values: impl Iterator<Item = u64>) -> u64 {
    values.fold(0x5EED, |h, v| mix64(h ^ v))
}

/// Mean of `query` over `dataset` against a Monte-Carlo population mean.
pub fn gap<R, F>(
    query: F,
    dataset: &[PointRef],
    dist: &TiltedDistribution<'_>,
    draws: usize,
    rng: &mut R,
) -> Result<GapReport>
where
    R: Rng + ?Sized,
    F: Fn(&PointRef) -> f64,
{
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if draws == 0 {
        return Err(invalid("gap needs at least one population draw"));
    }
    let sample_mean = dataset.iter().map(&query).sum::<f64>() / dataset.len() as f64;
    let mut population = RunningStats::new();
    for _ in 0..draws {
        population.push(query(&dist.sample(rng)));
    }
    let population = population.estimate();
    Ok(GapReport {
        sample_mean,
        population,
        gap: (sample_mean - population.estimate).abs(),
    })
}

/// The clamped final score as a query on true points.
#[derive(Debug, Clone)]
pub struct FinalQuery {
    tracker: Tracker,
    scale: f64,
}

impl FinalQuery {
    pub fn score(&self, point: &PointRef) -> f64 {
        let (i, j) = type_parts(point).expect("tensor or marginal point");
        let ty = self.tracker.type_index(i, j);
        self.tracker.score(ty, point.bits().unwrap_or(0))
    }

    pub fn eval(&self, point: &PointRef) -> f64 {
        (self.score(point) * self.scale).clamp(-1.0, 1.0)
    }
}

/// Draws θ-dependent data and runs the full protocol.
pub fn run_ada_protocol<R: Rng + ?Sized>(
    analyst: &mut dyn Analyst,
    cfg: &AdaConfig,
    theta: &TiltParam,
    rng: &mut R,
) -> Result<AdaTranscript> {
    cfg.validate()?;
    let family = cfg.family()?;
    let dist = TiltedDistribution::new(&family, theta.clone(), Conditioning::TypeConditioned)?;
    let setup = AdaSetup::draw(cfg, &dist, rng)?;
    run_with_setup(analyst, cfg, &dist, &setup).map(|(t, _)| t)
}

struct Population {
    types: Vec<usize>,
    parts: Vec<(usize, usize)>,
    bits: Vec<u64>,
    pscore: Vec<f64>,
    compromised_at: Vec<Option<usize>>,
}

impl Population {
    fn new(points: &[PointRef], k: usize) -> Result<Self> {
        let parts: Vec<(usize, usize)> = points.iter().map(type_parts).collect::<Result<_>>()?;
        Ok(Population {
            types: parts.iter().map(|(i, j)| i * k + j).collect(),
            parts,
            bits: points.iter().map(|p| p.bits().unwrap_or(0)).collect(),
            pscore: vec![0.0; points.len()],
            compromised_at: vec![None; points.len()],
        })
    }

    fn mark(&mut self, stage: usize, tau: f64) -> usize {
        for (c, &s) in self.compromised_at.iter_mut().zip(&self.pscore) {
            if c.is_none() && s > tau {
                *c = Some(stage);
            }
        }
        self.compromised_at.iter().filter(|c| c.is_some()).count()
    }

    fn slice_bits(&self, stage: usize) -> Vec<Option<i8>> {
        self.bits
            .iter()
            .zip(&self.compromised_at)
            .map(|(&b, c)| c.is_none().then(|| bit_sign(b, stage) as i8))
            .collect()
    }

    /// Advances partial scores; returns the largest among open points.
    fn advance(&mut self, stage: usize, tracker: &Tracker) -> f64 {
        let mut open_max = f64::NEG_INFINITY;
        for idx in 0..self.bits.len() {
            self.pscore[idx] += tracker.increment(stage, self.types[idx], self.bits[idx]);
            if self.compromised_at[idx].is_none() {
                open_max = open_max.max(self.pscore[idx]);
            }
        }
        open_max
    }
}

/// Runs the protocol on a fixed setup. Also returns the final query.
pub fn run_with_setup(
    analyst: &mut dyn Analyst,
    cfg: &AdaConfig,
    dist: &TiltedDistribution<'_>,
    setup: &AdaSetup,
) -> Result<(AdaTranscript, FinalQuery)> {
    cfg.validate()?;
    let family = dist.family();
    if dist.mode() != Conditioning::TypeConditioned {
        return Err(invalid("the adversary needs a type-conditioned tilt"));
    }
    if setup.data.len() != cfg.n {
        return Err(invalid("setup size differs from n"));
    }
    let (blocks, k, d) = (cfg.blocks(), cfg.k, cfg.d);
    if family.k() != k || family.d() != d || family.m() != blocks && cfg.kind == FamilyKind::Tensor
    {
        return Err(invalid(
            "distribution family does not match the configuration",
        ));
    }
    let basis = family.basis();
    let predicates = match cfg.kind {
        FamilyKind::Marginal => 1,
        _ => 1usize << blocks,
    };
    let types = blocks * k;
    let mut means = Vec::with_capacity(types * d);
    for t in 0..types {
        means.extend_from_slice(dist.coordinate_means(t));
    }
    let mut tracker = Tracker {
        k,
        d,
        tau: cfg.tau(),
        means,
        coefs: Vec::with_capacity(d),
    };

    let obfuscated: Vec<PointRef> = setup
        .data
        .iter()
        .map(|p| setup.obfuscation.obfuscate(p))
        .collect::<Result<_>>()?;
    let mut index = HashMap::with_capacity(obfuscated.len());
    for (idx, p) in obfuscated.iter().enumerate() {
        index.entry(*p).or_insert(idx);
    }
    let mut data = Population::new(&setup.data, k)?;
    let mut pool_rng = ChaCha8Rng::seed_from_u64(setup.pool_seed);
    let pool_points: Vec<PointRef> = (0..cfg.pool).map(|_| dist.sample(&mut pool_rng)).collect();
    let mut pool = Population::new(&pool_points, k)?;

    analyst.begin(&obfuscated)?;
    let mut stages = Vec::with_capacity(d);
    let mut q = vec![0.0; family.dim()];
    let mut first_inaccurate = None;
    for stage in 0..d {
        let compromised_data = data.mark(stage, tracker.tau);
        let compromised_pool = pool.mark(stage, tracker.tau);
        let dataset_bits = data.slice_bits(stage);
        let answers = {
            let batch = QueryBatch {
                stage,
                blocks,
                predicates,
                basis,
                obfuscation: &setup.obfuscation,
                tracker: &tracker,
                dataset: &obfuscated,
                dataset_bits: &dataset_bits,
                index: &index,
            };
            let answers = analyst.answer(&batch)?;
            if answers.len() != batch.len() {
                return Err(Error::ProtocolAbort {
                    stage,
                    reason: format!("expected {} answers, got {}", batch.len(), answers.len()),
                });
            }
            answers
        };
        if let Some((idx, a)) = answers.iter().enumerate().find(|(_, a)| !(a.abs() <= 1.0)) {
            return Err(Error::ProtocolAbort {
                stage,
                reason: format!("answer {idx} = {a} lies outside [-1, 1]"),
            });
        }

        // Population check against the pool.
        let pool_bits = pool.slice_bits(stage);
        let population = answers_from_bits(
            blocks,
            basis,
            predicates,
            pool.parts.iter().copied().zip(pool_bits),
        );
        let mut max_error: f64 = 0.0;
        let mut accurate = true;
        for (a, p) in answers.iter().zip(&population) {
            let err = (a - p).abs();
            max_error = max_error.max(err);
            let stderr = ((1.0 - p * p).max(0.0) / cfg.pool as f64).sqrt();
            if err > cfg.alpha + ACCURACY_SLACK * stderr {
                accurate = false;
            }
        }
        if !accurate && first_inaccurate.is_none() {
            first_inaccurate = Some(stage);
        }

        // Reconstruct μ̃_{*,p,r} for every p, then project each block.
        let mut block_slices = vec![vec![0.0; k]; blocks];
        let mut chebyshev_fits = 0;
        for p in 0..k {
            let per_h: Vec<f64> = match cfg.kind {
                FamilyKind::Marginal => vec![answers[p], -answers[p]],
                _ => (0..predicates).map(|h| answers[h * k + p]).collect(),
            };
            let fit = reconstruct_slice(&per_h, cfg.alpha, blocks)?;
            if fit.method == SliceMethod::Chebyshev {
                chebyshev_fits += 1;
            }
            for (i, mu) in fit.mu.iter().enumerate() {
                block_slices[i][p] = *mu;
            }
        }
        let mut slice = vec![0.0; blocks * k];
        let mut coefs = vec![0.0; types];
        for (i, w) in block_slices.iter().enumerate() {
            let projected = project_to_h(w, basis, 1.0 / blocks as f64, cfg.projection)?;
            for (p, v) in projected.iter().enumerate() {
                slice[i * k + p] = *v;
                q[family.tensor_index(i, p, stage)] = *v;
            }
            for (j, u) in basis.iter().enumerate() {
                coefs[i * k + j] = u.iter().zip(&projected).map(|(&a, b)| a as f64 * b).sum();
            }
        }
        tracker.coefs.push(coefs);
        let open_data = data.advance(stage, &tracker);
        let open_pool = pool.advance(stage, &tracker);

        stages.push(StageRecord {
            stage,
            query_digest: digest(
                [stage as u64, (predicates * k) as u64].into_iter().chain(
                    dataset_bits
                        .iter()
                        .enumerate()
                        .filter(|(_, b)| b.is_none())
                        .map(|(i, _)| i as u64),
                ),
            ),
            answer_digest: digest(answers.iter().map(|a| a.to_bits())),
            answers,
            slice,
            max_error,
            accurate,
            chebyshev_fits,
            compromised_data,
            compromised_pool_fraction: compromised_pool as f64 / cfg.pool as f64,
            max_open_pscore: open_data.max(open_pool),
        });
    }

    let final_query = FinalQuery {
        tracker,
        scale: cfg.final_scale(),
    };
    let mut gap_rng = ChaCha8Rng::seed_from_u64(setup.gap_seed);
    let gap = gap(
        |p| final_query.eval(p),
        &setup.data,
        dist,
        cfg.gap_draws,
        &mut gap_rng,
    )?;
    Ok((
        AdaTranscript {
            analyst: analyst.name(),
            n: cfg.n,
            tau: cfg.tau(),
            names_distinct: setup.names_distinct(),
            stages,
            q,
            compromised_at: data.compromised_at,
            first_inaccurate,
            final_scale: cfg.final_scale(),
            gap,
        },
        final_query,
    ))
}

/// Outcome of the coupled fairness replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// Dataset index whose suffix was resampled, if any point was compromised.
    pub point: Option<usize>,
    pub from_stage: usize,
    pub identical: bool,
}

/// Reruns the protocol with one compromised dataset point's post-compromise
/// bits resampled and the masks coupled so the analyst sees the same
/// obfuscated data. Fairness means the two interactions agree exactly.
pub fn fairness_replay<F, R>(
    mut make_analyst: F,
    cfg: &AdaConfig,
    theta: &TiltParam,
    rng: &mut R,
) -> Result<ReplayReport>
where
    F: FnMut() -> Box<dyn Analyst>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let family = cfg.family()?;
    let dist = TiltedDistribution::new(&family, theta.clone(), Conditioning::TypeConditioned)?;
    let setup = AdaSetup::draw(cfg, &dist, rng)?;
    let (first, _) = run_with_setup(make_analyst().as_mut(), cfg, &dist, &setup)?;
    let Some((idx, stage)) = first
        .compromised_at
        .iter()
        .enumerate()
        .find_map(|(i, c)| c.filter(|&s| s < cfg.d).map(|s| (i, s)))
    else {
        return Ok(ReplayReport {
            point: None,
            from_stage: cfg.d,
            identical: true,
        });
    };
    let original = setup.data[idx];
    let (i, j) = type_parts(&original)?;
    let ty = i * cfg.k + j;
    let plus: Vec<f64> = dist
        .coordinate_means(ty)
        .iter()
        .map(|m| (1.0 + m) / 2.0)
        .collect();
    let old_bits = original.bits().unwrap_or(0);
    let keep = (1u64 << stage) - 1;
    let mut new_bits = (old_bits & keep) | (sample_bits(&plus, rng) & !keep);
    if new_bits == old_bits {
        new_bits ^= 1 << (cfg.d - 1);
    }
    let replacement = PointRef {
        locus: match original.locus {
            Locus::Tensor { i, j, .. } => Locus::Tensor {
                i,
                j,
                bits: new_bits,
            },
            Locus::Marginal { j, .. } => Locus::Marginal { j, bits: new_bits },
            other => other,
        },
        ..original
    };
    let mut coupled = setup.clone();
    coupled.obfuscation.couple(&original, &replacement, stage)?;
    coupled.data[idx] = replacement;
    let (second, _) = run_with_setup(make_analyst().as_mut(), cfg, &dist, &coupled)?;
    Ok(ReplayReport {
        point: Some(idx),
        from_stage: stage,
        identical: first.same_interaction(&second),
    })
}

#[cfg(test)]
mod tests;
