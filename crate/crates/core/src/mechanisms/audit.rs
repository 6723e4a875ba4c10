//! Empirical frequency-ratio audit of an (ε, δ) claim.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};

/// Default family-wise significance of the audit.
pub const AUDIT_SIGNIFICANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub runs: usize,
    pub bins: usize,
    /// Bonferroni-corrected one-sided critical value.
    pub critical: f64,
    /// Largest z-score of `p̂ − e^ε p̂′ − δ` over bins and both directions.
    pub max_z: f64,
    /// Bin holding `max_z`, and whether the direction was reversed.
    pub worst: (usize, bool),
    pub rejected: bool,
}

/// Tests `Pr[M(x) ∈ B] ≤ e^ε Pr[M(x′) ∈ B] + δ` in both directions on
/// equal-width bins spanning the pooled outputs.
///
/// `left` and `right` are scalar summaries of the mechanism's output on the
/// two neighbouring inputs, one per run.
pub fn frequency_ratio_audit(
    left: &[f64],
    right: &[f64],
    epsilon: f64,
    delta: f64,
    bins: usize,
    significance: f64,
) -> Result<AuditReport> {
    if left.len() != right.len() || left.is_empty() {
        return Err(invalid("audit needs equally many non-zero runs per side"));
    }
    if bins == 0 || !(significance > 0.0 && significance < 1.0) {
        return Err(invalid(
            "audit needs at least one bin and a significance in (0, 1)",
        ));
    }
    let runs = left.len();
    let (lo, hi) = left
        .iter()
        .chain(right)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let width = (hi - lo) / bins as f64;
    let bin_of = |x: f64| {
        if width > 0.0 {
            (((x - lo) / width) as usize).min(bins - 1)
        } else {
            0
        }
    };
    let mut counts = vec![[0usize; 2]; bins];
    for &x in left {
        counts[bin_of(x)][0] += 1;
    }
    for &x in right {
        counts[bin_of(x)][1] += 1;
    }
    let normal = Normal::standard();
    let tests = 2 * bins;
    let critical = normal.inverse_cdf(1.0 - significance / tests as f64);
    let ratio = epsilon.exp();
    let mut max_z = f64::NEG_INFINITY;
    let mut worst = (0, false);
    for (b, c) in counts.iter().enumerate() {
        for reversed in [false, true] {
            let (num, den) = if reversed { (c[1], c[0]) } else { (c[0], c[1]) };
            let p = num as f64 / runs as f64;
            let q = den as f64 / runs as f64;
            let excess = p - ratio * q - delta;
            let var = (p * (1.0 - p) + ratio * ratio * q * (1.0 - q)) / runs as f64;
            let z = if var > 0.0 {
                excess / var.sqrt()
            } else if excess > 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            if z > max_z {
                max_z = z;
                worst = (b, reversed);
            }
        }
    }
    Ok(AuditReport {
        runs,
        bins,
        critical,
        max_z,
        worst,
        rejected: max_z > critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;
    use rand::Rng;
    use rand_distr::{Distribution, Exp1};

    fn laplace<R: Rng>(rng: &mut R, scale: f64) -> f64 {
        let e: f64 = Exp1.sample(rng);
        if rng.random::<bool>() {
            scale * e
        } else {
            -scale * e
        }
    }

    #[test]
    fn laplace_passes_its_own_claim() {
        let mut rng = Seed(30).rng();
        let left: Vec<f64> = (0..200_000).map(|_| laplace(&mut rng, 1.0)).collect();
        let right: Vec<f64> = (0..200_000).map(|_| 1.0 + laplace(&mut rng, 1.0)).collect();
        let r = frequency_ratio_audit(&left, &right, 1.0, 0.0, 20, AUDIT_SIGNIFICANCE).unwrap();
        assert!(!r.rejected, "{r:?}");
    }

    #[test]
    fn understated_epsilon_is_caught() {
        let mut rng = Seed(31).rng();
        let left: Vec<f64> = (0..200_000).map(|_| laplace(&mut rng, 1.0)).collect();
        let right: Vec<f64> = (0..200_000).map(|_| 3.0 + laplace(&mut rng, 1.0)).collect();
        let r = frequency_ratio_audit(&left, &right, 1.0, 0.0, 20, AUDIT_SIGNIFICANCE).unwrap();
        assert!(r.rejected);
    }

    #[test]
    fn critical_value_is_bonferroni() {
        let r = frequency_ratio_audit(&[0.0, 1.0], &[0.0, 1.0], 0.0, 0.0, 5, 0.01).unwrap();
        // Φ⁻¹(1 − 0.001) ≈ 3.0902.
        assert!((r.critical - 3.0902).abs() < 1e-3);
        assert!(!r.rejected);
    }
}
