//! Built-in analysts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{answers_from_bits, type_parts, Analyst, QueryBatch};
use crate::error::{invalid, Error, Result};
use crate::families::PointRef;

/// Exact empirical answers of a batch over `points`.
pub fn empirical_answers(batch: &QueryBatch<'_>, points: &[PointRef]) -> Result<Vec<f64>> {
    let bits = batch.slice_bits(points)?;
    let parts: Vec<(usize, usize)> = points.iter().map(type_parts).collect::<Result<_>>()?;
    Ok(answers_from_bits(
        batch.blocks(),
        batch.basis(),
        batch.predicates(),
        parts.into_iter().zip(bits),
    ))
}

/// Answers with the exact sample mean.
#[derive(Debug, Clone, Default)]
pub struct ExactMean {
    data: Vec<PointRef>,
}

impl Analyst for ExactMean {
    fn name(&self) -> String {
        "exact-mean".into()
    }

    fn begin(&mut self, data: &[PointRef]) -> Result<()> {
        self.data = data.to_vec();
        Ok(())
    }

    fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>> {
        empirical_answers(batch, &self.data)
    }
}

/// Sample mean plus independent Gaussian noise, clamped to `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussianNoised {
    sigma: f64,
    rng: ChaCha8Rng,
    inner: ExactMean,
}

impl GaussianNoised {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!(
                "noise scale must be finite and non-negative, got {sigma}"
            )));
        }
        Ok(GaussianNoised {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
            inner: ExactMean::default(),
        })
    }
}

impl Analyst for GaussianNoised {
    fn name(&self) -> String {
        format!("gaussian-noised(sigma={})", self.sigma)
    }

    fn begin(&mut self, data: &[PointRef]) -> Result<()> {
        self.inner.begin(data)
    }

    fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>> {
        let mut out = self.inner.answer(batch)?;
        if self.sigma > 0.0 {
            for a in &mut out {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *a = (*a + self.sigma * z).clamp(-1.0, 1.0);
            }
        }
        Ok(out)
    }
}

/// Answers stage `r` from fold `r mod folds` only.
#[derive(Debug, Clone)]
pub struct SampleSplit {
    folds: usize,
    data: Vec<PointRef>,
}

impl SampleSplit {
    pub fn new(folds: usize) -> Result<Self> {
        if folds == 0 {
            return Err(invalid("sample splitting needs at least one fold"));
        }
        Ok(SampleSplit {
            folds,
            data: Vec::new(),
        })
    }

    /// Index range of a fold in a dataset of size `n`.
    pub fn fold_range(&self, fold: usize, n: usize) -> std::ops::Range<usize> {
        fold * n / self.folds..(fold + 1) * n / self.folds
    }
}

impl Analyst for SampleSplit {
    fn name(&self) -> String {
        format!("sample-split(folds={})", self.folds)
    }

    fn begin(&mut self, data: &[PointRef]) -> Result<()> {
        if data.len() < self.folds {
            return Err(invalid(format!(
                "{} points cannot fill {} folds",
                data.len(),
                self.folds
            )));
        }
        self.data = data.to_vec();
        Ok(())
    }

    fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>> {
        let range = self.fold_range(batch.stage() % self.folds, self.data.len());
        empirical_answers(batch, &self.data[range])
    }
}

/// Sample mean clamped to `[−bound, bound]`.
#[derive(Debug, Clone)]
pub struct ClampedMean {
    bound: f64,
    inner: ExactMean,
}

impl ClampedMean {
    pub fn new(bound: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&bound) {
            return Err(invalid(format!(
                "clamp bound must lie in [0, 1], got {bound}"
            )));
        }
        Ok(ClampedMean {
            bound,
            inner: ExactMean::default(),
        })
    }
}

impl Analyst for ClampedMean {
    fn name(&self) -> String {
        format!("clamped-mean(bound={})", self.bound)
    }

    fn begin(&mut self, data: &[PointRef]) -> Result<()> {
        self.inner.begin(data)
    }

    fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>> {
        let mut out = self.inner.answer(batch)?;
        for a in &mut out {
            *a = a.clamp(-self.bound, self.bound);
        }
        Ok(out)
    }
}

/// Ignores the data and answers a fixed value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantAnswer(pub f64);

impl Analyst for ConstantAnswer {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn begin(&mut self, _data: &[PointRef]) -> Result<()> {
        Ok(())
    }

    fn answer(&mut self, batch: &QueryBatch<'_>) -> Result<Vec<f64>> {
        Ok(vec![self.0; batch.len()])
    }
}

/// Analyst selector for configuration files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalystKind {
    ExactMean,
    GaussianNoised { sigma: f64 },
    SampleSplit { folds: usize },
    ClampedMean { bound: f64 },
    Constant { value: f64 },
}

impl AnalystKind {
    /// Parses `exact-mean`, `gaussian-noised:0.1`, `sample-split:32`,
    /// `clamped-mean:0.5` or `constant:0`.
    pub fn parse(text: &str) -> Result<Self> {
        let (head, arg) = match text.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (text.trim(), None),
        };
        let number = |what: &str| -> Result<f64> {
            arg.ok_or_else(|| invalid(format!("{head} needs a {what}")))?
                .parse::<f64>()
                .map_err(|e| invalid(format!("bad {what} for {head}: {e}")))
        };
        Ok(match head {
            "exact-mean" => AnalystKind::ExactMean,
            "gaussian-noised" => AnalystKind::GaussianNoised {
                sigma: number("sigma")?,
            },
            "sample-split" => {
                let folds = number("fold count")?;
                if folds.fract() != 0.0 || folds < 1.0 {
                    return Err(invalid("fold count must be a positive integer"));
                }
                AnalystKind::SampleSplit {
                    folds: folds as usize,
                }
            }
            "clamped-mean" => AnalystKind::ClampedMean {
                bound: number("bound")?,
            },
            "constant" => AnalystKind::Constant {
                value: number("value")?,
            },
            other => return Err(invalid(format!("unknown analyst {other:?}"))),
        })
    }

    pub fn label(&self) -> String {
        match self {
            AnalystKind::ExactMean => "exact-mean".into(),
            AnalystKind::GaussianNoised { sigma } => format!("gaussian-noised:{sigma}"),
            AnalystKind::SampleSplit { folds } => format!("sample-split:{folds}"),
            AnalystKind::ClampedMean { bound } => format!("clamped-mean:{bound}"),
            AnalystKind::Constant { value } => format!("constant:{value}"),
        }
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn Analyst + Send>> {
        Ok(match *self {
            AnalystKind::ExactMean => Box::new(ExactMean::default()),
            AnalystKind::GaussianNoised { sigma } => Box::new(GaussianNoised::new(sigma, seed)?),
            AnalystKind::SampleSplit { folds } => Box::new(SampleSplit::new(folds)?),
            AnalystKind::ClampedMean { bound } => Box::new(ClampedMean::new(bound)?),
            AnalystKind::Constant { value } => {
                if !(value.abs() <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "constant answer {value} lies outside [-1, 1]"
                    )));
                }
                Box::new(ConstantAnswer(value))
            }
        })
    }
}

/// The standard roster: exact, noised, split over `d` folds, clamped, zero.
pub fn builtin_analysts(sigma: f64, d: usize, seed: u64) -> Result<Vec<Box<dyn Analyst + Send>>> {
    [
        AnalystKind::ExactMean,
        AnalystKind::GaussianNoised { sigma },
        AnalystKind::SampleSplit { folds: d },
        AnalystKind::ClampedMean { bound: 0.5 },
        AnalystKind::Constant { value: 0.0 },
    ]
    .iter()
    .map(|k| k.build(seed))
    .collect()
}
