//! Mean- and query-release mechanisms with privacy metadata.

mod audit;
mod histogram;
mod surgery;

pub use audit::{frequency_ratio_audit, AuditReport, AUDIT_SIGNIFICANCE};

pub use histogram::{
    default_bound, project_linf, required_mass, trunc_lap_sample, HistogramNoise, HistogramVector,
    QueryRelease, QueryReleaseOutput, SparseHistogram, QUERY_RELEASE_C_PRIME,
};
pub use surgery::{project_to_h, reconstruct_slice, Projection, SliceFit, SliceMethod};

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::families::{PointFamily, PointRef};

/// Neighbouring-dataset notion a privacy claim refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjacency {
    ReplaceOne,
    L1Distance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Privacy {
    pub epsilon: f64,
    pub delta: f64,
    pub adjacency: Adjacency,
}

impl Privacy {
    pub fn new(epsilon: f64, delta: f64, adjacency: Adjacency) -> Result<Self> {
        if !(epsilon >= 0.0) || !(0.0..=1.0).contains(&delta) {
            return Err(invalid(format!(
                "bad privacy parameters ε = {epsilon}, δ = {delta}"
            )));
        }
        Ok(Privacy {
            epsilon,
            delta,
            adjacency,
        })
    }

    /// The flag carried by non-private releases.
    pub fn none() -> Self {
        Privacy {
            epsilon: f64::INFINITY,
            delta: 0.0,
            adjacency: Adjacency::ReplaceOne,
        }
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_finite()
    }

    /// Guarantee for groups of `p` replaced records:
    /// `(pε, δ·(e^{pε} − 1)/(e^ε − 1))`.
    pub fn group(&self, p: usize) -> Privacy {
        let pf = p as f64;
        let factor = if self.epsilon == 0.0 {
            pf
        } else {
            (pf * self.epsilon).exp_m1() / self.epsilon.exp_m1()
        };
        Privacy {
            epsilon: pf * self.epsilon,
            delta: (self.delta * factor).min(1.0),
            adjacency: self.adjacency,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub noise_draws: u64,
    pub clamp_events: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismAnswer {
    pub estimate: Vec<f64>,
    pub privacy: Privacy,
    pub diagnostics: Diagnostics,
}

/// A (possibly randomized) map from a dataset of dense vectors to a vector.
pub trait Mechanism: Send + Sync {
    fn name(&self) -> String;
    fn privacy(&self) -> Privacy;
    fn release(&self, data: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<MechanismAnswer>;
}

impl<M: Mechanism + ?Sized> Mechanism for Box<M> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn privacy(&self) -> Privacy {
        (**self).privacy()
    }

    fn release(&self, data: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<MechanismAnswer> {
        (**self).release(data, rng)
    }
}

fn mean_of(data: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = data.first().ok_or(Error::EmptyDataset)?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for x in data {
        if x.len() != dim {
            return Err(invalid("dataset points differ in length"));
        }
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    let n = data.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// The exact average; not private.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmpiricalMean;

impl Mechanism for EmpiricalMean {
    fn name(&self) -> String {
        "exact-mean".into()
    }

    fn privacy(&self) -> Privacy {
        Privacy::none()
    }

    fn release(&self, data: &[Vec<f64>], _rng: &mut dyn RngCore) -> Result<MechanismAnswer> {
        Ok(MechanismAnswer {
            estimate: mean_of(data)?,
            privacy: self.privacy(),
            diagnostics: Diagnostics::default(),
        })
    }
}

/// Mean plus iid Gaussian noise calibrated to replace-one ℓ2 sensitivity
/// `2√d/n` of ±1 data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMechanism {
    epsilon: f64,
    delta: f64,
    clamp: bool,
}

impl GaussianMechanism {
    pub fn new(epsilon: f64, delta: f64, clamp: bool) -> Result<Self> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(epsilon) || !open(delta) {
            return Err(invalid(format!(
                "Gaussian mechanism needs ε, δ in (0, 1), got ε = {epsilon}, δ = {delta}"
            )));
        }
        Ok(GaussianMechanism {
            epsilon,
            delta,
            clamp,
        })
    }

    /// Noise scale for `n` points of dimension `dim`.
    pub fn sigma(&self, n: usize, dim: usize) -> f64 {
        (2.0 * (dim as f64).sqrt() / n as f64) * (2.0 * (1.25 / self.delta).ln()).sqrt()
            / self.epsilon
    }
}

impl Mechanism for GaussianMechanism {
    fn name(&self) -> String {
        format!("gaussian(eps={},delta={})", self.epsilon, self.delta)
    }

    fn privacy(&self) -> Privacy {
        Privacy {
            epsilon: self.epsilon,
            delta: self.delta,
            adjacency: Adjacency::ReplaceOne,
        }
    }

    fn release(&self, data: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<MechanismAnswer> {
        let mut estimate = mean_of(data)?;
        let sigma = self.sigma(data.len(), estimate.len());
        let mut diagnostics = Diagnostics::default();
        for v in estimate.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
            diagnostics.noise_draws += 1;
            if self.clamp && v.abs() > 1.0 {
                *v = v.clamp(-1.0, 1.0);
                diagnostics.clamp_events += 1;
            }
        }
        Ok(MechanismAnswer {
            estimate,
            privacy: self.privacy(),
            diagnostics,
        })
    }
}

/// Ignores its input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMechanism {
    value: Vec<f64>,
}

impl ConstantMechanism {
    pub fn new(value: Vec<f64>) -> Self {
        ConstantMechanism { value }
    }
}

impl Mechanism for ConstantMechanism {
    fn name(&self) -> String {
        "constant".into()
    }

    fn privacy(&self) -> Privacy {
        Privacy {
            epsilon: 0.0,
            delta: 0.0,
            adjacency: Adjacency::ReplaceOne,
        }
    }

    fn release(&self, _data: &[Vec<f64>], _rng: &mut dyn RngCore) -> Result<MechanismAnswer> {
        Ok(MechanismAnswer {
            estimate: self.value.clone(),
            privacy: self.privacy(),
            diagnostics: Diagnostics::default(),
        })
    }
}

/// A deterministic mechanism from a closure; declared non-private.
pub struct MapMechanism<F> {
    name: String,
    f: F,
}

impl<F> MapMechanism<F>
where
    F: Fn(&[Vec<f64>]) -> Vec<f64> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        MapMechanism {
            name: name.into(),
            f,
        }
    }
}

impl<F> Mechanism for MapMechanism<F>
where
    F: Fn(&[Vec<f64>]) -> Vec<f64> + Send + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn privacy(&self) -> Privacy {
        Privacy::none()
    }

    fn release(&self, data: &[Vec<f64>], _rng: &mut dyn RngCore) -> Result<MechanismAnswer> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(MechanismAnswer {
            estimate: (self.f)(data),
            privacy: self.privacy(),
            diagnostics: Diagnostics::default(),
        })
    }
}

/// Runs `inner` (built for `inner_n` records) on `inner_n / p` records, each
/// replicated `p` times. Records beyond `inner_n / p` are discarded.
pub struct GroupPrivacy<M> {
    inner: M,
    p: usize,
    inner_n: usize,
}

impl<M: Mechanism> GroupPrivacy<M> {
    pub fn new(inner: M, p: usize, inner_n: usize) -> Result<Self> {
        if p == 0 {
            return Err(invalid("group size must be at least 1"));
        }
        if inner_n / p == 0 {
            return Err(invalid(format!(
                "group size {p} exceeds sample size {inner_n}"
            )));
        }
        Ok(GroupPrivacy { inner, p, inner_n })
    }

    /// Records the wrapped mechanism consumes.
    pub fn accepted_size(&self) -> usize {
        self.inner_n / self.p
    }
}

impl<M: Mechanism> Mechanism for GroupPrivacy<M> {
    fn name(&self) -> String {
        format!("group({},p={})", self.inner.name(), self.p)
    }

    fn privacy(&self) -> Privacy {
        self.inner.privacy().group(self.p)
    }

    fn release(&self, data: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<MechanismAnswer> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let keep = data.len().min(self.accepted_size());
        let replicated: Vec<Vec<f64>> = data[..keep]
            .iter()
            .flat_map(|x| std::iter::repeat_n(x.clone(), self.p))
            .collect();
        let mut answer = self.inner.release(&replicated, rng)?;
        answer.privacy = self.privacy();
        Ok(answer)
    }
}

/// Turns a mechanism for `n` records into one for `m = n / factor` records by
/// padding with `n − m` copies of `anchor` and undoing the padding:
/// output `(n/m)(q − ((n−m)/n)·anchor)`.
pub struct PadReduction<M> {
    inner: M,
    inner_n: usize,
    m: usize,
    anchor: Vec<f64>,
}

impl<M: Mechanism> PadReduction<M> {
    pub fn new(inner: M, inner_n: usize, factor: usize, anchor: Vec<f64>) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("reduction factor must be positive"));
        }
        let m = inner_n / factor;
        if m == 0 {
            return Err(invalid(format!(
                "reduction factor {factor} leaves no records out of {inner_n}"
            )));
        }
        Ok(PadReduction {
            inner,
            inner_n,
            m,
            anchor,
        })
    }

    pub fn accepted_size(&self) -> usize {
        self.m
    }
}

impl<M: Mechanism> Mechanism for PadReduction<M> {
    fn name(&self) -> String {
        format!("pad({},m={})", self.inner.name(), self.m)
    }

    fn privacy(&self) -> Privacy {
        self.inner.privacy()
    }

    fn release(&self, data: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<MechanismAnswer> {
        if data.len() != self.m {
            return Err(invalid(format!(
                "padded mechanism takes {} records, got {}",
                self.m,
                data.len()
            )));
        }
        if data.iter().any(|x| x.len() != self.anchor.len()) {
            return Err(invalid("anchor and records differ in length"));
        }
        let mut padded = data.to_vec();
        padded.extend(std::iter::repeat_n(
            self.anchor.clone(),
            self.inner_n - self.m,
        ));
        let mut answer = self.inner.release(&padded, rng)?;
        let n = self.inner_n as f64;
        let m = self.m as f64;
        for (v, z) in answer.estimate.iter_mut().zip(&self.anchor) {
            *v = (n / m) * (*v - ((n - m) / n) * z);
        }
        Ok(answer)
    }
}

/// Points of a family together with their dense vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<PointRef>,
    vectors: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(family: &PointFamily, points: Vec<PointRef>) -> Result<Self> {
        let vectors = points
            .iter()
            .map(|p| family.resolve(p))
            .collect::<Result<_>>()?;
        Ok(Dataset { points, vectors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[PointRef] {
        &self.points
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Replace-one neighbour.
    pub fn replace(&self, family: &PointFamily, j: usize, point: PointRef) -> Result<Dataset> {
        if j >= self.len() {
            return Err(invalid(format!("index {j} out of range")));
        }
        let mut out = self.clone();
        out.vectors[j] = family.resolve(&point)?;
        out.points[j] = point;
        Ok(out)
    }
}
