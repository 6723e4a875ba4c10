//! Checks of Rademacher-sum tails, the ℓ1/ℓ2 K-functional, and spectral and
//! expansion properties of random sign matrices.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;

use crate::attack::ThetaSampler;
use crate::error::{invalid, Error, Result};
use crate::families::SignMatrix;
use crate::linalg::{lambda_max, EigenMethod};
use crate::stats::{Estimate, RunningStats};
use crate::tilt::{softmax, Region};

/// Largest length enumerated exactly by [`RademacherSums::exact`].
pub const EXACT_TAIL_LIMIT: usize = 22;
/// Default ratio of `k` to `d / ln N` allowed in column-sum checks.
pub const COLUMN_SUM_FRACTION: f64 = 0.1;
/// Eigenvalue above which a tilt counts as irregular.
pub const REGULAR_THRESHOLD: f64 = 2.0;
/// Standard errors of slack granted to Monte-Carlo comparisons.
pub const STDERR_SLACK: f64 = 4.0;

/// `inf { ‖a′‖₁ + t‖a″‖₂ : a′ + a″ = a }`.
///
/// The optimum splits `a` into a soft-thresholded part and a clipped part at
/// a common level `λ`. On each interval between consecutive sorted
/// magnitudes the stationarity condition `‖clip(a, λ)‖₂ = tλ` is solved in
/// closed form, so no line search is needed.
pub fn k12(a: &[f64], t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid(format!("t must be non-negative, got {t}")));
    }
    let mut mags: Vec<f64> = a.iter().map(|x| x.abs()).collect();
    mags.sort_by(|x, y| y.total_cmp(x));
    let l1: f64 = mags.iter().sum();
    let l2 = mags.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut best = l1.min(t * l2);
    // `above` magnitudes exceed λ; `tail_sq` is the squared mass of the rest.
    let mut tail_sq = mags.iter().map(|x| x * x).sum::<f64>();
    let mut above_sum = 0.0;
    for (above, &b) in mags.iter().enumerate().map(|(i, b)| (i + 1, b)) {
        tail_sq -= b * b;
        above_sum += b;
        let lower = mags.get(above).copied().unwrap_or(0.0);
        let denom = t * t - above as f64;
        if denom <= 0.0 {
            continue;
        }
        let lambda = (tail_sq.max(0.0) / denom).sqrt();
        if lambda >= lower && lambda <= b {
            let value = above_sum - above as f64 * lambda
                + t * (above as f64 * lambda * lambda + tail_sq).sqrt();
            best = best.min(value);
        }
    }
    Ok(best)
}

/// At least half the coordinates carry `|a_i| ≥ ‖a‖₂ / (5√d)`.
pub fn is_good_vector(a: &[f64]) -> bool {
    let d = a.len();
    if d == 0 {
        return false;
    }
    let l2 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let floor = l2 / (5.0 * (d as f64).sqrt());
    2 * a.iter().filter(|x| x.abs() >= floor).count() >= d
}

/// The distribution of `⟨a, x⟩` for uniform signs `x`, held as sorted values.
#[derive(Debug, Clone)]
pub struct RademacherSums {
    sorted: Vec<f64>,
    exact: bool,
}

impl RademacherSums {
    /// All `2^d` sign patterns, visited in Gray-code order.
    pub fn exact(a: &[f64]) -> Result<Self> {
        let d = a.len();
        if d > EXACT_TAIL_LIMIT {
            return Err(Error::Capacity {
                what: "Rademacher enumeration length",
                requested: d as f64,
                limit: EXACT_TAIL_LIMIT as f64,
            });
        }
        let mut sum: f64 = a.iter().sum();
        let mut signs = vec![1.0; d];
        let mut sorted = Vec::with_capacity(1 << d);
        sorted.push(sum);
        for step in 1u64..(1u64 << d) {
            let b = step.trailing_zeros() as usize;
            sum -= 2.0 * signs[b] * a[b];
            signs[b] = -signs[b];
            sorted.push(sum);
        }
        sorted.sort_by(f64::total_cmp);
        Ok(RademacherSums {
            sorted,
            exact: true,
        })
    }

    pub fn sample<R: Rng + ?Sized>(a: &[f64], samples: usize, rng: &mut R) -> Self {
        let mut sorted: Vec<f64> = (0..samples)
            .map(|_| {
                a.iter()
                    .map(|&x| if rng.random::<bool>() { x } else { -x })
                    .sum()
            })
            .collect();
        sorted.sort_by(f64::total_cmp);
        RademacherSums {
            sorted,
            exact: false,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// `Pr[⟨a, x⟩ ≥ threshold]`.
    pub fn tail(&self, threshold: f64) -> Estimate {
        let n = self.sorted.len();
        let below = self.sorted.partition_point(|&s| s < threshold);
        let p = (n - below) as f64 / n as f64;
        let stderr = if self.exact {
            0.0
        } else {
            (p * (1.0 - p) / n as f64).sqrt()
        };
        Estimate {
            estimate: p,
            stderr,
            count: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailMode {
    Exact,
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailReport {
    pub t: Vec<f64>,
    /// `Pr[⟨a, x⟩ ≥ t‖a‖₂]` per grid value.
    pub probability: Vec<Estimate>,
    /// `exp(−t²/2)` per grid value.
    pub hoeffding: Vec<f64>,
    pub hoeffding_violations: usize,
    pub good: bool,
    /// Smallest `c` with `probability ≥ exp(−c t²)` on the positive grid.
    pub fitted_lower: Option<f64>,
    pub notice: Option<String>,
}

pub fn rademacher_tail<R: Rng + ?Sized>(
    a: &[f64],
    t: &[f64],
    mode: TailMode,
    rng: &mut R,
) -> Result<TailReport> {
    if a.is_empty() {
        return Err(invalid("empty coefficient vector"));
    }
    if t.iter().any(|x| !(*x >= 0.0)) {
        return Err(invalid("tail grid must be non-negative"));
    }
    let sums = match mode {
        TailMode::Exact => RademacherSums::exact(a)?,
        TailMode::MonteCarlo { samples } => RademacherSums::sample(a, samples.max(1), rng),
    };
    let l2 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let probability: Vec<Estimate> = t.iter().map(|&s| sums.tail(s * l2)).collect();
    let hoeffding: Vec<f64> = t.iter().map(|&s| (-s * s / 2.0).exp()).collect();
    let hoeffding_violations = probability
        .iter()
        .zip(&hoeffding)
        .filter(|(p, &h)| p.estimate > h + STDERR_SLACK * p.stderr + 1e-12)
        .count();
    let good = is_good_vector(a);
    let (fitted_lower, notice) = if good {
        let fit = t
            .iter()
            .zip(&probability)
            .filter(|(&s, _)| s > 0.0)
            .map(|(&s, p)| -p.estimate.ln() / (s * s))
            .fold(0.0, f64::max);
        (Some(fit), None)
    } else {
        (
            None,
            Some("vector is not good; lower-bound fit skipped".to_string()),
        )
    };
    Ok(TailReport {
        t: t.to_vec(),
        probability,
        hoeffding,
        hoeffding_violations,
        good,
        fitted_lower,
        notice,
    })
}

/// Largest `c` with `c·t·‖a‖₂ ≤ K_{1,2}(a, t)` on the positive grid.
pub fn k12_sandwich_constant(a: &[f64], t: &[f64]) -> Result<f64> {
    let l2 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut c = f64::INFINITY;
    for &s in t.iter().filter(|&&s| s > 0.0) {
        c = c.min(k12(a, s)? / (s * l2));
    }
    Ok(c)
}

/// One cell of the K-functional tail fit.
#[derive(Debug, Clone, Copy)]
pub struct K12TailCase<'a> {
    pub sums: &'a RademacherSums,
    pub k12: f64,
    pub t: f64,
}

fn k12_tail_holds(case: &K12TailCase<'_>, c: f64) -> bool {
    case.sums.tail(case.k12 / c).estimate >= (-c * case.t * case.t).exp() / c
}

/// Smallest `c ≥ 1` with `Pr[⟨a, x⟩ ≥ K/c] ≥ e^{−c t²}/c` for every case.
/// Infinite if no `c` up to `1e6` works.
pub fn fit_k12_tail_constant(cases: &[K12TailCase<'_>]) -> f64 {
    let ok = |c: f64| cases.iter().all(|case| k12_tail_holds(case, c));
    let (mut lo, mut hi) = (1.0, 1e6);
    if ok(lo) {
        return lo;
    }
    if !ok(hi) {
        return f64::INFINITY;
    }
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    hi
}

/// `floor(fraction · d / ln N)`.
pub fn column_sum_limit(rows: usize, cols: usize, fraction: f64) -> usize {
    if cols < 2 {
        return rows;
    }
    (fraction * rows as f64 / (cols as f64).ln()).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnSumReport {
    pub k: usize,
    pub trials: usize,
    /// Largest `‖Σ‖₂ / √(kd)`.
    pub max_ratio: f64,
    /// Subsets with `‖Σ‖₂ > √(2kd)`.
    pub violations: usize,
    pub mean_sq: Estimate,
    /// `kd`.
    pub expected_sq: f64,
}

/// Samples `trials` random `k`-subsets of columns and measures their sums.
pub fn check_column_sums<R: Rng + ?Sized>(
    a: &SignMatrix,
    k: usize,
    trials: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<ColumnSumReport> {
    let (d, n) = (a.rows(), a.cols());
    let limit = column_sum_limit(d, n, fraction);
    if k == 0 || k > limit || k > n {
        return Err(invalid(format!(
            "k = {k} outside 1..={} for d = {d}, N = {n}",
            limit.min(n)
        )));
    }
    let kd = (k * d) as f64;
    let mut sum = vec![0i64; d];
    let mut sq = RunningStats::new();
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..trials {
        sum.iter_mut().for_each(|s| *s = 0);
        for c in index::sample(rng, n, k) {
            for (s, &x) in sum.iter_mut().zip(a.column(c)) {
                *s += x as i64;
            }
        }
        let norm_sq = sum.iter().map(|s| s * s).sum::<i64>() as f64;
        sq.push(norm_sq);
        max_ratio = max_ratio.max((norm_sq / kd).sqrt());
        if norm_sq > 2.0 * kd {
            violations += 1;
        }
    }
    Ok(ColumnSumReport {
        k,
        trials,
        max_ratio,
        violations,
        mean_sq: sq.estimate(),
        expected_sq: kd,
    })
}

fn dense(a: &SignMatrix) -> DMatrix<f64> {
    DMatrix::from_vec(a.rows(), a.cols(), a.to_f64())
}

const THETA_BATCH: usize = 256;

/// Draws θ in batches and hands each draw with its column scores `Aᵀθ`.
fn for_each_theta<R, F>(
    a: &SignMatrix,
    region: Region,
    trials: usize,
    rng: &mut R,
    mut f: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &[f64]),
{
    let sampler = ThetaSampler::new(region, a.rows())?;
    let at = dense(a).transpose();
    let mut done = 0;
    while done < trials {
        let batch = THETA_BATCH.min(trials - done);
        let mut thetas = DMatrix::zeros(a.rows(), batch);
        for b in 0..batch {
            thetas.set_column(b, &DVector::from_vec(sampler.sample(rng).theta().to_vec()));
        }
        let scores = &at * &thetas;
        for b in 0..batch {
            f(thetas.column(b).as_slice(), scores.column(b).as_slice());
        }
        done += batch;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandingReport {
    pub draws: usize,
    /// Draws with `E⟨v, θ⟩ < η_probe`.
    pub failures: usize,
    pub failure_fraction: f64,
    pub eta_probe: f64,
    pub min_inner: f64,
    pub mean_inner: f64,
}

/// For θ uniform on the sphere of the given radius, computes `E_{v∼D_θ}⟨v, θ⟩`
/// exactly over the columns and counts draws below `eta_probe`.
pub fn check_expanding<R: Rng + ?Sized>(
    a: &SignMatrix,
    radius: f64,
    eta_probe: f64,
    trials: usize,
    rng: &mut R,
) -> Result<ExpandingReport> {
    if !(radius > 0.0) {
        return Err(invalid("expansion radius must be positive"));
    }
    let mut failures = 0;
    let mut stats = RunningStats::new();
    let mut min_inner = f64::INFINITY;
    for_each_theta(a, Region::L2Sphere(radius), trials, rng, |_, scores| {
        let p = softmax(scores);
        let inner: f64 = p.iter().zip(scores).map(|(p, s)| p * s).sum();
        stats.push(inner);
        min_inner = min_inner.min(inner);
        if inner < eta_probe {
            failures += 1;
        }
    })?;
    Ok(ExpandingReport {
        draws: trials,
        failures,
        failure_fraction: if trials == 0 {
            0.0
        } else {
            failures as f64 / trials as f64
        },
        eta_probe,
        min_inner,
        mean_inner: stats.mean(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularReport {
    pub draws: usize,
    /// Draws with `λ_max > 2`.
    pub exceed: usize,
    pub exceed_fraction: f64,
    pub max_lambda: f64,
    pub fallbacks: usize,
    pub unconverged: usize,
}

/// Exact column covariance of the tilt `softmax(Aᵀθ)`.
pub fn column_covariance(a: &DMatrix<f64>, probs: &[f64]) -> DMatrix<f64> {
    let mut b = a.clone();
    for (mut col, &p) in b.column_iter_mut().zip(probs) {
        col *= p.sqrt();
    }
    let mean = a * DVector::from_column_slice(probs);
    &b * b.transpose() - &mean * mean.transpose()
}

/// For θ uniform in the ball of the given radius, counts tilts whose
/// covariance has `λ_max > 2`.
pub fn check_regular<R: Rng + ?Sized>(
    a: &SignMatrix,
    radius: f64,
    trials: usize,
    rng: &mut R,
) -> Result<RegularReport> {
    let dense_a = dense(a);
    let mut exceed = 0;
    let mut max_lambda: f64 = 0.0;
    let (mut fallbacks, mut unconverged) = (0, 0);
    for_each_theta(a, Region::L2Ball(radius), trials, rng, |_, scores| {
        let cov = column_covariance(&dense_a, &softmax(scores));
        let eig = lambda_max(&cov);
        match eig.method {
            EigenMethod::PowerIteration => {}
            EigenMethod::FullEigensolve => fallbacks += 1,
            EigenMethod::Unconverged => unconverged += 1,
        }
        max_lambda = max_lambda.max(eig.lambda_max);
        if eig.lambda_max > REGULAR_THRESHOLD {
            exceed += 1;
        }
    })?;
    Ok(RegularReport {
        draws: trials,
        exceed,
        exceed_fraction: if trials == 0 {
            0.0
        } else {
            exceed as f64 / trials as f64
        },
        max_lambda,
        fallbacks,
        unconverged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltShiftReport {
    /// Empirical `Pr[X ≥ η]`.
    pub premise_mass: f64,
    pub premise_holds: bool,
    /// Mean of the `e^x`-reweighted variable.
    pub tilted_mean: Estimate,
    /// `η − 2 ln(1/δ)`.
    pub bound: f64,
    pub holds: bool,
    pub notice: Option<String>,
}

/// Reweights samples by `e^x` and compares the tilted mean to `η − 2 ln(1/δ)`.
pub fn tilt_shift_check(samples: &[f64], eta: f64, delta_mass: f64) -> Result<TiltShiftReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(delta_mass > 0.0 && delta_mass <= 1.0) {
        return Err(invalid(format!("δ must lie in (0, 1], got {delta_mass}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(invalid("samples must be finite"));
    }
    let n = samples.len() as f64;
    let premise_mass = samples.iter().filter(|&&x| x >= eta).count() as f64 / n;
    let bound = eta - 2.0 * (1.0 / delta_mass).ln();
    let top = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = samples.iter().map(|x| (x - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mean = weights.iter().zip(samples).map(|(w, x)| w * x).sum::<f64>() / total;
    // Delta-method standard error of the self-normalized mean.
    let var = weights
        .iter()
        .zip(samples)
        .map(|(w, x)| (w * (x - mean)).powi(2))
        .sum::<f64>()
        / (total * total);
    let tilted_mean = Estimate {
        estimate: mean,
        stderr: var.sqrt(),
        count: samples.len(),
    };
    let premise_holds = premise_mass >= delta_mass;
    let (holds, notice) = if premise_holds {
        (mean + STDERR_SLACK * tilted_mean.stderr >= bound, None)
    } else {
        (
            true,
            Some(format!(
                "premise fails: Pr[X ≥ η] = {premise_mass} < {delta_mass}; check skipped"
            )),
        )
    };
    Ok(TiltShiftReport {
        premise_mass,
        premise_holds,
        tilted_mean,
        bound,
        holds,
        notice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;
    use proptest::prelude::*;
    use rand::Rng;

    /// Brute-force grid over `a″`, re-centred and halved around the best
    /// cell a fixed number of times. The objective is convex.
    fn k12_grid(a: &[f64], t: f64) -> f64 {
        let d = a.len();
        let steps = 20usize;
        let mut center: Vec<f64> = a.iter().map(|x| x / 2.0).collect();
        let mut half: Vec<f64> = a.iter().map(|x| x.abs() / 2.0 + 1e-12).collect();
        let objective = |second: &[f64]| {
            let l1: f64 = (0..d).map(|i| (a[i] - second[i]).abs()).sum();
            l1 + t * second.iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        let mut best = f64::INFINITY;
        for _ in 0..40 {
            let mut idx = vec![0usize; d];
            let mut arg = center.clone();
            'grid: loop {
                let point: Vec<f64> = (0..d)
                    .map(|i| center[i] - half[i] + 2.0 * half[i] * idx[i] as f64 / steps as f64)
                    .collect();
                let v = objective(&point);
                if v < best {
                    best = v;
                    arg = point;
                }
                let mut pos = 0;
                loop {
                    if pos == d {
                        break 'grid;
                    }
                    idx[pos] += 1;
                    if idx[pos] <= steps {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
            }
            center = arg;
            half.iter_mut().for_each(|h| *h *= 0.5);
        }
        best
    }

    #[test]
    fn k12_examples() {
        assert_eq!(k12(&[1.0, -2.0, 3.0], 0.0).unwrap(), 0.0);
        assert!((k12(&[1.0; 4], 10.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((k12(&[1.0, 0.0, 0.0, 0.0], 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(k12(&[1.0], -1.0).is_err());
    }

    #[test]
    fn k12_matches_grid_oracle() {
        let mut rng = Seed(20).rng();
        for _ in 0..200 {
            let d = rng.random_range(1..=3);
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = rng.random_range(0.0..3.0);
            let fast = k12(&a, t).unwrap();
            let grid = k12_grid(&a, t);
            assert!((fast - grid).abs() <= 1e-4, "{a:?} {t}: {fast} vs {grid}");
        }
    }

    #[test]
    fn all_ones_tail_at_one() {
        let a = [1.0; 20];
        let r = rademacher_tail(&a, &[0.0, 1.0], TailMode::Exact, &mut Seed(1).rng()).unwrap();
        let p = r.probability[1].estimate;
        assert!(p <= (-0.5f64).exp());
        assert!(r.fitted_lower.unwrap() <= 4.0);
        assert!(p > (-4.0f64).exp());
        // Median of a symmetric sum.
        assert!(r.probability[0].estimate >= 0.5 - 1.0 / (20f64).sqrt());
        assert_eq!(r.hoeffding_violations, 0);
    }

    #[test]
    fn exact_tail_matches_binomial() {
        // Sum of d unit signs equals 2·Binomial(d, 1/2) − d.
        let d = 10;
        let sums = RademacherSums::exact(&[1.0; 10]).unwrap();
        let binom = |j: u64| (0..j).fold(1.0, |acc, i| acc * (d - i) as f64 / (i + 1) as f64);
        let ge_four: f64 = (7..=10).map(binom).sum::<f64>() / 1024.0;
        assert!((sums.tail(4.0).estimate - ge_four).abs() < 1e-15);
    }

    #[test]
    fn bad_vector_skips_fit() {
        let mut a = vec![0.0; 16];
        a[0] = 1.0;
        let r = rademacher_tail(&a, &[1.0], TailMode::Exact, &mut Seed(1).rng()).unwrap();
        assert!(!r.good && r.fitted_lower.is_none() && r.notice.is_some());
    }

    #[test]
    fn exact_refuses_long_vectors() {
        assert!(matches!(
            RademacherSums::exact(&[1.0; 23]),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn hoeffding_holds_on_good_vectors() {
        let mut rng = Seed(21).rng();
        let mut checked = 0;
        while checked < 100 {
            let a: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            if !is_good_vector(&a) {
                continue;
            }
            let r = rademacher_tail(&a, &[0.5, 1.0, 2.0], TailMode::Exact, &mut rng).unwrap();
            assert_eq!(r.hoeffding_violations, 0);
            checked += 1;
        }
    }

    #[test]
    fn mc_tail_tracks_exact() {
        let a: Vec<f64> = (1..=12).map(|i| i as f64).collect();
        let exact = RademacherSums::exact(&a).unwrap();
        let mc = RademacherSums::sample(&a, 50_000, &mut Seed(22).rng());
        for th in [0.0, 10.0, 25.0] {
            let e = exact.tail(th).estimate;
            assert!(mc.tail(th).within(e, 5.0));
        }
    }

    #[test]
    fn tilt_shift_examples() {
        let flat = tilt_shift_check(&[5.0; 10], 5.0, 0.1).unwrap();
        assert!(flat.holds && (flat.tilted_mean.estimate - 5.0).abs() < 1e-12);

        let mut two = vec![0.0; 900];
        two.extend([5.0; 100]);
        let r = tilt_shift_check(&two, 5.0, 0.1).unwrap();
        let e5 = 5f64.exp();
        let closed = 5.0 * 0.1 * e5 / (0.9 + 0.1 * e5);
        assert!((r.tilted_mean.estimate - closed).abs() < 1e-12);
        assert!((closed - 4.70).abs() < 0.02);
        assert!((r.bound - (5.0 - 2.0 * 10f64.ln())).abs() < 1e-12);
        assert!(r.holds);

        let mut rng = Seed(23).rng();
        let u: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let r = tilt_shift_check(&u, 0.9, 0.1).unwrap();
        assert!(r.premise_holds && r.holds);

        let skip = tilt_shift_check(&[0.0; 10], 1.0, 0.5).unwrap();
        assert!(!skip.premise_holds && skip.notice.is_some());
    }

    #[test]
    fn single_columns_have_unit_ratio() {
        let a = SignMatrix::random(32, 64, 3);
        let r = check_column_sums(&a, 1, 200, 1.0, &mut Seed(3).rng()).unwrap();
        assert_eq!(r.max_ratio, 1.0);
        assert_eq!(r.violations, 0);
        assert_eq!(r.mean_sq.estimate, 32.0);
        assert!(check_column_sums(&a, 0, 1, 1.0, &mut Seed(3).rng()).is_err());
        assert!(check_column_sums(&a, 9, 1, 1.0, &mut Seed(3).rng()).is_err());
    }

    #[test]
    fn column_sum_mean_matches_kd() {
        // k = 8 sits outside the default range; widen it for this identity.
        let a = SignMatrix::random(256, 1024, 4);
        let r = check_column_sums(&a, 8, 10_000, 0.25, &mut Seed(4).rng()).unwrap();
        assert!(r.mean_sq.within(r.expected_sq, 4.0), "{:?}", r.mean_sq);
    }

    #[test]
    fn single_column_expansion_is_linear() {
        let a = SignMatrix::random(5, 1, 6);
        let mut rng = Seed(6).rng();
        let r = check_expanding(&a, 1.0, 0.0, 400, &mut rng).unwrap();
        // ⟨A_1, θ⟩ is sign-symmetric in θ.
        assert!(r.failures > 100 && r.failures < 300);
        let small =
            check_expanding(&SignMatrix::random(8, 16, 6), 1e-9, 0.0, 20, &mut rng).unwrap();
        assert!(small.min_inner.abs() < 1e-8 && small.mean_inner.abs() < 1e-8);
    }

    #[test]
    fn full_cube_at_zero_is_isotropic() {
        let d = 6;
        let cols: Vec<Vec<i8>> = (0..1u32 << d)
            .map(|m| {
                (0..d)
                    .map(|b| if m >> b & 1 == 0 { 1 } else { -1 })
                    .collect()
            })
            .collect();
        let a = SignMatrix::from_columns(&cols).unwrap();
        let probs = vec![1.0 / 64.0; 64];
        let cov = column_covariance(&dense(&a), &probs);
        assert!((cov - DMatrix::<f64>::identity(d, d)).abs().max() < 1e-12);
        let r = check_regular(&a, 1e-12, 5, &mut Seed(7).rng()).unwrap();
        assert!((r.max_lambda - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lambda_dominates_diagonal() {
        let a = SignMatrix::random(16, 128, 8);
        let dense_a = dense(&a);
        let mut rng = Seed(8).rng();
        for _ in 0..20 {
            let scores: Vec<f64> = (0..128).map(|_| rng.random_range(-2.0..2.0)).collect();
            let cov = column_covariance(&dense_a, &softmax(&scores));
            let top = lambda_max(&cov).lambda_max;
            let diag = cov.diagonal().max();
            assert!(top >= diag - 1e-9);
        }
    }

    proptest! {
        #[test]
        fn k12_shape(a in prop::collection::vec(-5.0f64..5.0, 1..8), t1 in 0.0f64..6.0, t2 in 0.0f64..6.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let l1: f64 = a.iter().map(|x| x.abs()).sum();
            let l2 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let (klo, khi) = (k12(&a, lo).unwrap(), k12(&a, hi).unwrap());
            prop_assert!(klo <= khi + 1e-9);
            prop_assert!(khi <= l1.min(hi * l2) + 1e-9);
            // Concavity at the midpoint.
            let kmid = k12(&a, (lo + hi) / 2.0).unwrap();
            prop_assert!(kmid + 1e-9 >= (klo + khi) / 2.0);
        }

        #[test]
        fn tails_are_probabilities(a in prop::collection::vec(-3.0f64..3.0, 1..10), t in 0.0f64..3.0) {
            let s = RademacherSums::exact(&a).unwrap();
            let p = s.tail(t).estimate;
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
