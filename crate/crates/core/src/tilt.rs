//! Exponential tilts over a point family.
//!
//! Plain mode puts mass `∝ exp(⟨θ, x⟩)` on every point. Type-conditioned mode
//! first picks the `(i, j)` type uniformly and then tilts only the v-block,
//! which for a tensor point amounts to a hypercube tilt by the effective field
//! `W_{ij} = Σ_p u^j_p θ_{i,p,·}`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::families::{bit_sign, FamilyKind, Locus, PointFamily, PointRef, ENUMERATION_LIMIT};
use crate::linalg::{lambda_max, EigenSummary};
use crate::mechanisms::Mechanism;
use crate::seed::Seed;
use crate::stats::{Estimate, RunningStats};

/// Largest product space `|K|^n` the divergence checker will enumerate.
pub const DATASET_ENUMERATION_LIMIT: f64 = 1e6;
/// Largest dimension for which a dense covariance is formed.
pub const COVARIANCE_DIM_LIMIT: usize = 4096;
/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Where a tilt parameter was drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    L2Ball(f64),
    L2Sphere(f64),
    L1Ball(f64),
    L1Surface(f64),
    Point,
}

impl Region {
    pub fn label(&self) -> String {
        match self {
            Region::L2Ball(r) => format!("l2-ball({r})"),
            Region::L2Sphere(r) => format!("l2-sphere({r})"),
            Region::L1Ball(r) => format!("l1-ball({r})"),
            Region::L1Surface(r) => format!("l1-surface({r})"),
            Region::Point => "point".to_string(),
        }
    }
}

/// θ together with the region it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltParam {
    theta: Vec<f64>,
    region: Region,
}

const REGION_TOLERANCE: f64 = 1e-9;

impl TiltParam {
    pub fn new(theta: Vec<f64>, region: Region) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(invalid("θ must be finite"));
        }
        let l2 = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        let l1 = theta.iter().map(|x| x.abs()).sum::<f64>();
        let tol = |r: f64| REGION_TOLERANCE * r.max(1.0);
        let ok = match region {
            Region::L2Sphere(r) => (l2 - r).abs() <= tol(r),
            Region::L1Surface(r) => (l1 - r).abs() <= tol(r),
            Region::L2Ball(r) => l2 <= r + tol(r),
            Region::L1Ball(r) => l1 <= r + tol(r),
            Region::Point => true,
        };
        if !ok {
            return Err(invalid(format!(
                "θ with ℓ1 = {l1}, ℓ2 = {l2} is not in {}",
                region.label()
            )));
        }
        Ok(TiltParam { theta, region })
    }

    /// A bare θ with no region attached.
    pub fn point(theta: Vec<f64>) -> Self {
        TiltParam {
            theta,
            region: Region::Point,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn region(&self) -> Region {
        self.region
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Conditioning {
    Plain,
    TypeConditioned,
}

#[derive(Debug, Clone)]
enum Model {
    /// Hypercube, tensor and marginal kinds: per-type coordinatewise tilt.
    Product {
        /// Effective field, `type * d + q`.
        fields: Vec<f64>,
        /// Pr[v_q = +1] per type.
        plus: Vec<f64>,
        /// tanh of the field.
        means: Vec<f64>,
        type_probs: Vec<f64>,
        type_cdf: Vec<f64>,
    },
    Columns {
        probs: Vec<f64>,
        cdf: Vec<f64>,
    },
}

/// `ln(2 cosh w)` without overflow.
fn log_two_cosh(w: f64) -> f64 {
    let a = w.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// Normalizes log-weights with the log-sum-exp shift.
pub fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let top = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    cdf
}

fn draw_index<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// A tilted distribution over a borrowed family.
#[derive(Debug, Clone)]
pub struct TiltedDistribution<'a> {
    family: &'a PointFamily,
    param: TiltParam,
    mode: Conditioning,
    model: Model,
    mean: Vec<f64>,
}

impl<'a> TiltedDistribution<'a> {
    pub fn new(family: &'a PointFamily, param: TiltParam, mode: Conditioning) -> Result<Self> {
        let dim = family.dim();
        if param.theta().len() != dim {
            return Err(invalid(format!(
                "θ has length {}, family dimension is {dim}",
                param.theta().len()
            )));
        }
        let theta = param.theta();
        let model = match family.kind() {
            FamilyKind::MatrixColumns => {
                let matrix = family.matrix().expect("matrix family");
                let log_w: Vec<f64> = (0..matrix.cols())
                    .map(|c| {
                        matrix
                            .column(c)
                            .iter()
                            .zip(theta)
                            .map(|(&a, t)| a as f64 * t)
                            .sum()
                    })
                    .collect();
                let probs = softmax(&log_w);
                let cdf = cumulative(&probs);
                Model::Columns { probs, cdf }
            }
            _ => {
                let (m, k, d) = (family.m(), family.k(), family.d());
                let types = family.type_count();
                let mut fields = vec![0.0; types * d];
                for i in 0..m {
                    for j in 0..k {
                        let t = if family.kind() == FamilyKind::Tensor {
                            i * k + j
                        } else {
                            j
                        };
                        let u = &family.basis()[j];
                        let out = &mut fields[t * d..(t + 1) * d];
                        for (p, &up) in u.iter().enumerate() {
                            let block = &theta[(i * k + p) * d..(i * k + p + 1) * d];
                            for (o, th) in out.iter_mut().zip(block) {
                                *o += up as f64 * th;
                            }
                        }
                    }
                }
                let plus = fields
                    .iter()
                    .map(|&w| 1.0 / (1.0 + (-2.0 * w).exp()))
                    .collect();
                let means = fields.iter().map(|&w| w.tanh()).collect();
                let type_probs = match mode {
                    Conditioning::TypeConditioned => vec![1.0 / types as f64; types],
                    Conditioning::Plain => {
                        let log_z: Vec<f64> = fields
                            .chunks(d)
                            .map(|f| f.iter().map(|&w| log_two_cosh(w)).sum())
                            .collect();
                        softmax(&log_z)
                    }
                };
                let type_cdf = cumulative(&type_probs);
                Model::Product {
                    fields,
                    plus,
                    means,
                    type_probs,
                    type_cdf,
                }
            }
        };
        let mut dist = TiltedDistribution {
            family,
            param,
            mode,
            model,
            mean: Vec::new(),
        };
        dist.mean = dist.compute_mean();
        Ok(dist)
    }

    pub fn family(&self) -> &'a PointFamily {
        self.family
    }

    pub fn param(&self) -> &TiltParam {
        &self.param
    }

    pub fn theta(&self) -> &[f64] {
        self.param.theta()
    }

    pub fn mode(&self) -> Conditioning {
        self.mode
    }

    /// Probability of each type.
    pub fn type_probabilities(&self) -> Vec<f64> {
        match &self.model {
            Model::Product { type_probs, .. } => type_probs.clone(),
            Model::Columns { .. } => vec![1.0],
        }
    }

    /// Effective hypercube field of a type (product kinds only).
    pub fn field(&self, ty: usize) -> &[f64] {
        let d = self.family.d();
        match &self.model {
            Model::Product { fields, .. } => &fields[ty * d..(ty + 1) * d],
            Model::Columns { .. } => panic!("matrix-columns tilts have no coordinate field"),
        }
    }

    /// `E[v_q | type]` (product kinds only).
    pub fn coordinate_means(&self, ty: usize) -> &[f64] {
        let d = self.family.d();
        match &self.model {
            Model::Product { means, .. } => &means[ty * d..(ty + 1) * d],
            Model::Columns { .. } => panic!("matrix-columns tilts have no coordinate field"),
        }
    }

    /// Column probabilities (matrix-columns only).
    pub fn column_probabilities(&self) -> Option<&[f64]> {
        match &self.model {
            Model::Columns { probs, .. } => Some(probs),
            Model::Product { .. } => None,
        }
    }

    pub fn probability(&self, point: &PointRef) -> f64 {
        match &self.model {
            Model::Columns { probs, .. } => match point.locus {
                Locus::Column(c) => probs[c],
                _ => 0.0,
            },
            Model::Product {
                plus, type_probs, ..
            } => {
                let d = self.family.d();
                let t = self.family.type_of(point);
                let bits = point.bits().unwrap_or(0);
                let p = &plus[t * d..(t + 1) * d];
                type_probs[t]
                    * (0..d)
                        .map(|q| if bits >> q & 1 == 0 { p[q] } else { 1.0 - p[q] })
                        .product::<f64>()
            }
        }
    }

    /// Every point with its probability.
    pub fn enumerate(&self) -> Result<Vec<(PointRef, f64)>> {
        Ok(self
            .family
            .enumerate()?
            .into_iter()
            .map(|p| {
                let pr = self.probability(&p);
                (p, pr)
            })
            .collect())
    }

    /// Draws one point (without a name).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PointRef {
        match &self.model {
            Model::Columns { cdf, .. } => PointRef::new(Locus::Column(draw_index(cdf, rng))),
            Model::Product { plus, type_cdf, .. } => {
                let t = if type_cdf.len() == 1 {
                    0
                } else if self.mode == Conditioning::TypeConditioned {
                    rng.random_range(0..type_cdf.len())
                } else {
                    draw_index(type_cdf, rng)
                };
                let d = self.family.d();
                let bits = sample_bits(&plus[t * d..(t + 1) * d], rng);
                PointRef::new(self.locus_of_type(t, bits))
            }
        }
    }

    fn locus_of_type(&self, t: usize, bits: u64) -> Locus {
        let k = self.family.k();
        match self.family.kind() {
            FamilyKind::Hypercube => Locus::Cube { bits },
            FamilyKind::Tensor => Locus::Tensor {
                i: t / k,
                j: t % k,
                bits,
            },
            FamilyKind::Marginal => Locus::Marginal { j: t, bits },
            FamilyKind::MatrixColumns => unreachable!(),
        }
    }

    fn compute_mean(&self) -> Vec<f64> {
        let dim = self.family.dim();
        let mut mean = vec![0.0; dim];
        match &self.model {
            Model::Columns { probs, .. } => {
                let matrix = self.family.matrix().expect("matrix family");
                for (c, &p) in probs.iter().enumerate() {
                    for (m, &a) in mean.iter_mut().zip(matrix.column(c)) {
                        *m += p * a as f64;
                    }
                }
            }
            Model::Product { type_probs, .. } => {
                for (t, &pt) in type_probs.iter().enumerate() {
                    self.add_typed_mean(t, pt, &mut mean);
                }
            }
        }
        mean
    }

    fn add_typed_mean(&self, t: usize, weight: f64, out: &mut [f64]) {
        let (k, d) = (self.family.k(), self.family.d());
        let means = self.coordinate_means(t);
        let (i, j) = match self.family.kind() {
            FamilyKind::Tensor => (t / k, t % k),
            FamilyKind::Marginal => (0, t),
            _ => (0, 0),
        };
        let u = &self.family.basis()[j];
        for p in 0..k {
            let base = (i * k + p) * d;
            for q in 0..d {
                out[base + q] += weight * u[p] as f64 * means[q];
            }
        }
    }

    /// Exact mean `μ_θ`.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Exact mean conditioned on a type.
    pub fn mean_typed(&self, ty: usize) -> Result<Vec<f64>> {
        if ty >= self.family.type_count() {
            return Err(invalid(format!("type {ty} out of range")));
        }
        match &self.model {
            Model::Columns { .. } => Ok(self.mean.clone()),
            Model::Product { .. } => {
                let mut out = vec![0.0; self.family.dim()];
                self.add_typed_mean(ty, 1.0, &mut out);
                Ok(out)
            }
        }
    }

    /// The mean subtracted when scoring `point`: the typed mean in
    /// type-conditioned mode, the global mean otherwise.
    pub fn reference_mean(&self, point: &PointRef) -> Vec<f64> {
        match (self.mode, &self.model) {
            (Conditioning::TypeConditioned, Model::Product { .. }) => self
                .mean_typed(self.family.type_of(point))
                .expect("validated type"),
            _ => self.mean.clone(),
        }
    }

    /// Monte-Carlo mean with per-coordinate standard errors.
    pub fn mean_mc<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Vec<Estimate> {
        let dim = self.family.dim();
        let mut acc = vec![RunningStats::new(); dim];
        let mut x = vec![0.0; dim];
        for _ in 0..samples {
            let p = self.sample(rng);
            self.family.resolve_into(&p, &mut x);
            for (a, &v) in acc.iter_mut().zip(&x) {
                a.push(v);
            }
        }
        acc.iter().map(RunningStats::estimate).collect()
    }

    /// Exact covariance `E[(x − μ)(x − μ)ᵀ]`.
    pub fn cov_exact(&self) -> Result<DMatrix<f64>> {
        let dim = self.family.dim();
        if dim > COVARIANCE_DIM_LIMIT {
            return Err(Error::Capacity {
                what: "dense covariance dimension",
                requested: dim as f64,
                limit: COVARIANCE_DIM_LIMIT as f64,
            });
        }
        let mu = nalgebra::DVector::from_column_slice(&self.mean);
        let second = match &self.model {
            Model::Columns { probs, .. } => {
                let matrix = self.family.matrix().expect("matrix family");
                let scaled = DMatrix::from_fn(dim, matrix.cols(), |r, c| {
                    matrix.get(r, c) as f64 * probs[c].sqrt()
                });
                &scaled * scaled.transpose()
            }
            Model::Product { type_probs, .. } => {
                let (k, d) = (self.family.k(), self.family.d());
                let mut s = DMatrix::zeros(dim, dim);
                for (t, &pt) in type_probs.iter().enumerate() {
                    if pt == 0.0 {
                        continue;
                    }
                    let means = self.coordinate_means(t);
                    let (i, j) = match self.family.kind() {
                        FamilyKind::Tensor => (t / k, t % k),
                        FamilyKind::Marginal => (0, t),
                        _ => (0, 0),
                    };
                    let u = &self.family.basis()[j];
                    for p in 0..k {
                        for p2 in 0..k {
                            let uu = pt * (u[p] * u[p2]) as f64;
                            for q in 0..d {
                                for q2 in 0..d {
                                    let vv = if q == q2 { 1.0 } else { means[q] * means[q2] };
                                    s[((i * k + p) * d + q, (i * k + p2) * d + q2)] += uu * vv;
                                }
                            }
                        }
                    }
                }
                s
            }
        };
        let mut cov = second - &mu * mu.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(cov)
    }

    /// Largest eigenvalue of the exact covariance.
    pub fn lambda_max_exact(&self) -> Result<EigenSummary> {
        if self.family.kind() == FamilyKind::Hypercube {
            let top = self
                .coordinate_means(0)
                .iter()
                .map(|m| 1.0 - m * m)
                .fold(0.0, f64::max);
            return Ok(EigenSummary {
                lambda_max: top,
                iterations: 0,
                method: crate::linalg::EigenMethod::PowerIteration,
            });
        }
        Ok(lambda_max(&self.cov_exact()?))
    }

    /// Sample covariance from fresh draws.
    pub fn cov_mc<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let dim = self.family.dim();
        if dim > COVARIANCE_DIM_LIMIT {
            return Err(Error::Capacity {
                what: "dense covariance dimension",
                requested: dim as f64,
                limit: COVARIANCE_DIM_LIMIT as f64,
            });
        }
        if samples < 2 {
            return Err(invalid("covariance needs at least two samples"));
        }
        let mut data = DMatrix::zeros(dim, samples);
        let mut x = vec![0.0; dim];
        for s in 0..samples {
            let p = self.sample(rng);
            self.family.resolve_into(&p, &mut x);
            data.column_mut(s).copy_from_slice(&x);
        }
        let mean = data.column_mean();
        for mut col in data.column_iter_mut() {
            col -= &mean;
        }
        Ok(&data * data.transpose() / (samples - 1) as f64)
    }

    /// `⟨x − μ_ref, q⟩` for a family point, without forming `x` densely.
    pub fn score(&self, point: &PointRef, q: &[f64]) -> f64 {
        let (k, d) = (self.family.k(), self.family.d());
        match (&self.model, point.locus) {
            (Model::Columns { .. }, Locus::Column(c)) => {
                let col = self.family.matrix().expect("matrix family").column(c);
                col.iter()
                    .zip(&self.mean)
                    .zip(q)
                    .map(|((&a, m), qv)| (a as f64 - m) * qv)
                    .sum()
            }
            (Model::Product { .. }, locus) => {
                let t = self.family.type_of(point);
                let bits = point.bits().unwrap_or(0);
                let (i, j) = match locus {
                    Locus::Tensor { i, j, .. } => (i, j),
                    Locus::Marginal { j, .. } => (0, j),
                    _ => (0, 0),
                };
                let u = &self.family.basis()[j];
                let typed = self.mode == Conditioning::TypeConditioned;
                let means = self.coordinate_means(t);
                let mut s = 0.0;
                for p in 0..k {
                    let base = (i * k + p) * d;
                    let mut inner = 0.0;
                    for r in 0..d {
                        let centered = if typed {
                            bit_sign(bits, r) - means[r]
                        } else {
                            bit_sign(bits, r)
                        };
                        inner += centered * q[base + r];
                    }
                    s += u[p] as f64 * inner;
                }
                if !typed {
                    s -= self.mean.iter().zip(q).map(|(m, qv)| m * qv).sum::<f64>();
                }
                s
            }
            _ => panic!("point does not belong to the distribution's family"),
        }
    }
}

/// Independent coordinate bits with `Pr[v_q = +1] = plus[q]`.
pub fn sample_bits<R: Rng + ?Sized>(plus: &[f64], rng: &mut R) -> u64 {
    let mut bits = 0u64;
    for (q, &p) in plus.iter().enumerate() {
        if rng.random::<f64>() >= p {
            bits |= 1 << q;
        }
    }
    bits
}

/// `⟨x − μ_ref, q⟩`.
pub fn score(x: &[f64], q: &[f64], mean: &[f64]) -> Result<f64> {
    if x.len() != q.len() || x.len() != mean.len() {
        return Err(invalid("score arguments differ in length"));
    }
    Ok(x.iter()
        .zip(mean)
        .zip(q)
        .map(|((a, m), b)| (a - m) * b)
        .sum())
}

/// Per-slice contributions to the score.
pub fn slice_contributions(
    family: &PointFamily,
    x: &[f64],
    q: &[f64],
    mean: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != family.dim() || q.len() != x.len() || mean.len() != x.len() {
        return Err(invalid("pscore arguments differ from the family dimension"));
    }
    let mut out = vec![0.0; family.slice_count()];
    for idx in 0..x.len() {
        out[family.slice_of(idx)] += (x[idx] - mean[idx]) * q[idx];
    }
    Ok(out)
}

/// Score restricted to slices `0..r`.
pub fn pscore(r: usize, family: &PointFamily, x: &[f64], q: &[f64], mean: &[f64]) -> Result<f64> {
    if r > family.slice_count() {
        return Err(invalid(format!(
            "stage {r} exceeds slice count {}",
            family.slice_count()
        )));
    }
    Ok(slice_contributions(family, x, q, mean)?[..r].iter().sum())
}

/// Result of comparing the finite-difference divergence against the score expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceReport {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_err: f64,
    pub datasets: usize,
}

/// Checks `Σ_i ∂g_i/∂θ_i = E[Σ_j score(x^j; A(x))]` by exact enumeration.
///
/// `g(θ) = E[A(x)]`. A randomized mechanism is averaged over the listed
/// `coins`, each seeding an independent RNG; deterministic mechanisms pass a
/// single coin.
pub fn divergence_check(
    family: &PointFamily,
    theta: &[f64],
    mode: Conditioning,
    mechanism: &dyn Mechanism,
    coins: &[u64],
    n: usize,
    step: f64,
) -> Result<DivergenceReport> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if coins.is_empty() {
        return Err(invalid("at least one coin outcome is required"));
    }
    if !(step > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let size = family.size();
    if size > ENUMERATION_LIMIT as f64 {
        return Err(Error::Capacity {
            what: "family enumeration",
            requested: size,
            limit: ENUMERATION_LIMIT as f64,
        });
    }
    let total = size.powi(n as i32);
    if total > DATASET_ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            what: "dataset enumeration",
            requested: total,
            limit: DATASET_ENUMERATION_LIMIT,
        });
    }
    let base = TiltedDistribution::new(family, TiltParam::point(theta.to_vec()), mode)?;
    let points = family.enumerate()?;
    let vectors: Vec<Vec<f64>> = points
        .iter()
        .map(|p| family.resolve(p))
        .collect::<Result<_>>()?;
    let refs: Vec<Vec<f64>> = points.iter().map(|p| base.reference_mean(p)).collect();
    let dim = family.dim();
    let count = total as usize;
    let kk = points.len();

    let digits = |mut idx: usize| -> Vec<usize> {
        let mut out = vec![0; n];
        for slot in out.iter_mut() {
            *slot = idx % kk;
            idx /= kk;
        }
        out
    };

    let mut outputs = vec![0.0; count * dim];
    for idx in 0..count {
        let data: Vec<Vec<f64>> = digits(idx).iter().map(|&c| vectors[c].clone()).collect();
        let out = &mut outputs[idx * dim..(idx + 1) * dim];
        for &coin in coins {
            let mut rng = Seed(coin).rng();
            let answer = mechanism.release(&data, &mut rng)?;
            if answer.estimate.len() != dim {
                return Err(invalid("mechanism output dimension differs from family"));
            }
            for (o, v) in out.iter_mut().zip(&answer.estimate) {
                *o += v / coins.len() as f64;
            }
        }
    }

    let dataset_probs = |dist: &TiltedDistribution| -> Vec<f64> {
        let single: Vec<f64> = points.iter().map(|p| dist.probability(p)).collect();
        (0..count)
            .map(|idx| digits(idx).iter().map(|&c| single[c]).product())
            .collect()
    };

    let p0 = dataset_probs(&base);
    let mut rhs = 0.0;
    for idx in 0..count {
        let out = &outputs[idx * dim..(idx + 1) * dim];
        let s: f64 = digits(idx)
            .iter()
            .map(|&c| score(&vectors[c], out, &refs[c]).expect("matching lengths"))
            .sum();
        rhs += p0[idx] * s;
    }

    let mut lhs = 0.0;
    for i in 0..dim {
        let mut g = [0.0; 2];
        for (slot, sign) in [(0usize, 1.0), (1, -1.0)] {
            let mut shifted = theta.to_vec();
            shifted[i] += sign * step;
            let dist = TiltedDistribution::new(family, TiltParam::point(shifted), mode)?;
            let probs = dataset_probs(&dist);
            g[slot] = (0..count)
                .map(|idx| probs[idx] * outputs[idx * dim + i])
                .sum();
        }
        lhs += (g[0] - g[1]) / (2.0 * step);
    }
    Ok(DivergenceReport {
        lhs,
        rhs,
        abs_err: (lhs - rhs).abs(),
        datasets: count,
    })
}
