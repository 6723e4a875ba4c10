//! Slice reconstruction from predicate answers and the projection onto the
//! box spanned by the orthogonal basis.

use crate::error::{invalid, Error, Result};
use crate::families::bit_sign;
use crate::lp;

/// Largest m accepted by `reconstruct_slice`.
pub const MAX_SLICE_BLOCKS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceMethod {
    /// Clamped Walsh inversion already met the tolerance.
    Inversion,
    /// Chebyshev linear program.
    Chebyshev,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceFit {
    /// Estimate in `[−1/m, 1/m]^m`.
    pub mu: Vec<f64>,
    /// `max_h |⟨μ, h⟩ − â_h|`.
    pub max_violation: f64,
    pub method: SliceMethod,
}

fn max_violation(mu: &[f64], answers: &[f64]) -> f64 {
    answers
        .iter()
        .enumerate()
        .map(|(h, a)| {
            let ip: f64 = mu
                .iter()
                .enumerate()
                .map(|(i, x)| x * bit_sign(h as u64, i))
                .sum();
            (ip - a).abs()
        })
        .fold(0.0, f64::max)
}

/// Finds `μ ∈ [−1/m, 1/m]^m` with `|⟨μ, h⟩ − â_h| ≤ α` for all `2^m` sign
/// vectors `h` (indexed by mask). When no such point exists, the maximum
/// violation is minimized instead.
pub fn reconstruct_slice(answers: &[f64], alpha: f64, m: usize) -> Result<SliceFit> {
    if m == 0 {
        return Err(invalid("m must be positive"));
    }
    if m > MAX_SLICE_BLOCKS {
        return Err(Error::Capacity {
            what: "slice reconstruction blocks",
            requested: m as f64,
            limit: MAX_SLICE_BLOCKS as f64,
        });
    }
    let count = 1usize << m;
    if answers.len() != count {
        return Err(invalid(format!(
            "expected {count} answers, got {}",
            answers.len()
        )));
    }
    let box_half = 1.0 / m as f64;

    // Walsh inversion recovers μ exactly from consistent answers.
    let inverted: Vec<f64> = (0..m)
        .map(|i| {
            let s: f64 = answers
                .iter()
                .enumerate()
                .map(|(h, a)| bit_sign(h as u64, i) * a)
                .sum();
            (s / count as f64).clamp(-box_half, box_half)
        })
        .collect();
    let v = max_violation(&inverted, answers);
    if v <= alpha {
        return Ok(SliceFit {
            mu: inverted,
            max_violation: v,
            method: SliceMethod::Inversion,
        });
    }

    // Variables y = μ + 1/m ∈ [0, 2/m] and z = T0 − t with t the violation.
    let s = |h: usize| (0..m).map(|i| bit_sign(h as u64, i)).sum::<f64>() * box_half;
    let shifted: Vec<f64> = (0..count).map(|h| answers[h] + s(h)).collect();
    let t0 = shifted.iter().map(|x| x.abs()).fold(0.0, f64::max) + box_half * m as f64;
    let nvar = m + 1;
    let mut rows = Vec::with_capacity(2 * count + nvar);
    let mut rhs = Vec::with_capacity(2 * count + nvar);
    for (h, &b) in shifted.iter().enumerate() {
        let signs: Vec<f64> = (0..m).map(|i| bit_sign(h as u64, i)).collect();
        let mut up = signs.clone();
        up.push(1.0);
        rows.push(up);
        rhs.push(b + t0);
        let mut down: Vec<f64> = signs.iter().map(|x| -x).collect();
        down.push(1.0);
        rows.push(down);
        rhs.push(t0 - b);
    }
    for i in 0..m {
        let mut row = vec![0.0; nvar];
        row[i] = 1.0;
        rows.push(row);
        rhs.push(2.0 * box_half);
    }
    let mut cap = vec![0.0; nvar];
    cap[m] = 1.0;
    rows.push(cap);
    rhs.push(t0);
    let mut objective = vec![0.0; nvar];
    objective[m] = 1.0;
    let sol = lp::maximize(&objective, &rows, &rhs)?;
    let mu: Vec<f64> = sol.x[..m]
        .iter()
        .map(|y| (y - box_half).clamp(-box_half, box_half))
        .collect();
    let v = max_violation(&mu, answers);
    Ok(SliceFit {
        mu,
        max_violation: v,
        method: SliceMethod::Chebyshev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// ℓ2 projection: clamp the basis coefficients.
    Fast,
    /// Minimum ℓ1 movement via a linear program.
    ExactL1,
}

fn check_basis(basis: &[Vec<i8>]) -> Result<usize> {
    let k = basis.len();
    if k == 0
        || basis
            .iter()
            .any(|u| u.len() != k || u.iter().any(|&x| x != 1 && x != -1))
    {
        return Err(invalid("basis must be k vectors of k signs"));
    }
    for a in 0..k {
        for b in a + 1..k {
            let ip: i64 = basis[a]
                .iter()
                .zip(&basis[b])
                .map(|(&x, &y)| (x * y) as i64)
                .sum();
            if ip != 0 {
                return Err(invalid(format!(
                    "basis vectors {a} and {b} are not orthogonal"
                )));
            }
        }
    }
    Ok(k)
}

/// Projects `w` onto `H = {(s/k) Σ_j λ_j u^j : λ ∈ [−1, 1]^k}`.
pub fn project_to_h(
    w: &[f64],
    basis: &[Vec<i8>],
    scale: f64,
    mode: Projection,
) -> Result<Vec<f64>> {
    let k = check_basis(basis)?;
    if w.len() != k {
        return Err(invalid(format!(
            "vector has length {}, basis has {k}",
            w.len()
        )));
    }
    if !(scale > 0.0) {
        return Err(invalid("box scale must be positive"));
    }
    let lambda: Vec<f64> = match mode {
        Projection::Fast => basis
            .iter()
            .map(|u| {
                let ip: f64 = u.iter().zip(w).map(|(&a, b)| a as f64 * b).sum();
                (ip / scale).clamp(-1.0, 1.0)
            })
            .collect(),
        Projection::ExactL1 => exact_l1_coefficients(w, basis, scale)?,
    };
    Ok(combine(&lambda, basis, scale))
}

fn combine(lambda: &[f64], basis: &[Vec<i8>], scale: f64) -> Vec<f64> {
    let k = basis.len();
    let mut out = vec![0.0; k];
    for (l, u) in lambda.iter().zip(basis) {
        for (o, &a) in out.iter_mut().zip(u) {
            *o += scale / k as f64 * l * a as f64;
        }
    }
    out
}

/// Variables `λ' = λ + 1 ∈ [0, 2]` and slack `f` with movement `e = E − f`.
fn exact_l1_coefficients(w: &[f64], basis: &[Vec<i8>], scale: f64) -> Result<Vec<f64>> {
    let k = basis.len();
    let g = |p: usize, j: usize| scale / k as f64 * basis[j][p] as f64;
    let offsets: Vec<f64> = (0..k)
        .map(|p| w[p] + (0..k).map(|j| g(p, j)).sum::<f64>())
        .collect();
    let nvar = 2 * k;
    let mut rows = Vec::with_capacity(3 * k);
    let mut rhs = Vec::with_capacity(3 * k);
    for p in 0..k {
        let e = offsets[p].abs() + (0..k).map(|j| 2.0 * g(p, j).abs()).sum::<f64>();
        let mut up = vec![0.0; nvar];
        let mut down = vec![0.0; nvar];
        for j in 0..k {
            up[j] = g(p, j);
            down[j] = -g(p, j);
        }
        up[k + p] = 1.0;
        down[k + p] = 1.0;
        rows.push(up);
        rhs.push(offsets[p] + e);
        rows.push(down);
        rhs.push(e - offsets[p]);
    }
    for j in 0..k {
        let mut row = vec![0.0; nvar];
        row[j] = 1.0;
        rows.push(row);
        rhs.push(2.0);
    }
    let mut objective = vec![0.0; nvar];
    objective[k..].iter_mut().for_each(|c| *c = 1.0);
    let sol = lp::maximize(&objective, &rows, &rhs)?;
    Ok(sol.x[..k]
        .iter()
        .map(|l| (l - 1.0).clamp(-1.0, 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::hadamard_orthogonal_set;
    use crate::seed::Seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn answers_of(mu: &[f64]) -> Vec<f64> {
        let m = mu.len();
        (0..1usize << m)
            .map(|h| {
                mu.iter()
                    .enumerate()
                    .map(|(i, x)| x * bit_sign(h as u64, i))
                    .sum()
            })
            .collect()
    }

    /// Grid search for the minimum max-violation over the box, m ≤ 3.
    fn grid_optimum(answers: &[f64], m: usize, steps: usize) -> f64 {
        let half = 1.0 / m as f64;
        let axis: Vec<f64> = (0..=steps)
            .map(|s| -half + 2.0 * half * s as f64 / steps as f64)
            .collect();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; m];
        loop {
            let mu: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            best = best.min(max_violation(&mu, answers));
            let mut pos = 0;
            loop {
                if pos == m {
                    return best;
                }
                idx[pos] += 1;
                if idx[pos] <= steps {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn exact_answers_pin_mu() {
        let mut rng = Seed(1).rng();
        for m in 1..=3 {
            for _ in 0..50 {
                let half = 1.0 / m as f64;
                let mu: Vec<f64> = (0..m).map(|_| rng.random_range(-half..half)).collect();
                let fit = reconstruct_slice(&answers_of(&mu), 0.0, m).unwrap();
                assert!(fit.max_violation < 1e-12);
                let l1: f64 = fit.mu.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
                assert!(l1 < 1e-12);
            }
        }
    }

    #[test]
    fn zero_answers_alpha_one() {
        let fit = reconstruct_slice(&[0.0; 8], 1.0, 3).unwrap();
        assert!(fit.mu.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn noisy_answers_within_two_alpha() {
        let mut rng = Seed(2).rng();
        for m in 1..=6 {
            for _ in 0..40 {
                let half = 1.0 / m as f64;
                let alpha = 0.05;
                let mu: Vec<f64> = (0..m).map(|_| rng.random_range(-half..half)).collect();
                let noisy: Vec<f64> = answers_of(&mu)
                    .into_iter()
                    .map(|a| a + rng.random_range(-alpha..alpha))
                    .collect();
                let fit = reconstruct_slice(&noisy, alpha, m).unwrap();
                assert!(fit.max_violation <= alpha + 1e-9);
                let l1: f64 = fit.mu.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
                assert!(l1 <= 2.0 * alpha + 1e-9, "m = {m}, l1 = {l1}");
            }
        }
    }

    #[test]
    fn chebyshev_matches_grid_when_infeasible() {
        let mut rng = Seed(3).rng();
        for m in 1..=3 {
            for _ in 0..30 {
                let answers: Vec<f64> = (0..1 << m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fit = reconstruct_slice(&answers, 0.0, m).unwrap();
                let grid = grid_optimum(&answers, m, 120);
                assert!(
                    fit.max_violation <= grid + 1e-9,
                    "m = {m}: {} vs {grid}",
                    fit.max_violation
                );
                let half = 1.0 / m as f64;
                assert!(fit.mu.iter().all(|x| x.abs() <= half + 1e-12));
            }
        }
    }

    #[test]
    fn reconstruct_limits() {
        assert!(matches!(
            reconstruct_slice(&[0.0; 8192], 0.1, 13),
            Err(Error::Capacity { .. })
        ));
        assert!(reconstruct_slice(&[0.0; 3], 0.1, 2).is_err());
    }

    #[test]
    fn projection_examples() {
        let basis = hadamard_orthogonal_set(4).unwrap();
        let s = 0.5;
        let inside = combine(&[0.3, -1.0, 0.0, 0.9], &basis, s);
        for mode in [Projection::Fast, Projection::ExactL1] {
            let out = project_to_h(&inside, &basis, s, mode).unwrap();
            for (a, b) in out.iter().zip(&inside) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let twice: Vec<f64> = basis[0].iter().map(|&u| s / 4.0 * 2.0 * u as f64).collect();
        let out = project_to_h(&twice, &basis, s, Projection::Fast).unwrap();
        let expect: Vec<f64> = basis[0].iter().map(|&u| s / 4.0 * u as f64).collect();
        assert_eq!(out, expect);
        assert!(project_to_h(&[0.0; 2], &[vec![1, 1], vec![1, 1]], 1.0, Projection::Fast).is_err());
    }

    #[test]
    fn exact_l1_beats_grid() {
        let basis = hadamard_orthogonal_set(2).unwrap();
        let mut rng = Seed(4).rng();
        for _ in 0..20 {
            let s = rng.random_range(0.2..2.0);
            let w: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let out = project_to_h(&w, &basis, s, Projection::ExactL1).unwrap();
            let moved: f64 = out.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
            let steps = 2000;
            let mut best = f64::INFINITY;
            for a in 0..=steps {
                for b in 0..=steps {
                    let l = [
                        -1.0 + 2.0 * a as f64 / steps as f64,
                        -1.0 + 2.0 * b as f64 / steps as f64,
                    ];
                    let y = combine(&l, &basis, s);
                    best = best.min(y.iter().zip(&w).map(|(p, q)| (p - q).abs()).sum());
                }
            }
            assert!(moved <= best + 1e-3, "{moved} vs grid {best}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn projections_land_in_h(w in proptest::collection::vec(-3.0f64..3.0, 8), s in 0.1f64..2.0) {
            let basis = hadamard_orthogonal_set(8).unwrap();
            for mode in [Projection::Fast, Projection::ExactL1] {
                let out = project_to_h(&w, &basis, s, mode).unwrap();
                for u in &basis {
                    let ip: f64 = u.iter().zip(&out).map(|(&a, b)| a as f64 * b).sum();
                    prop_assert!((ip / s).abs() <= 1.0 + 1e-9);
                }
            }
            let fast = project_to_h(&w, &basis, s, Projection::Fast).unwrap();
            let exact = project_to_h(&w, &basis, s, Projection::ExactL1).unwrap();
            let l1 = |y: &[f64]| y.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum::<f64>();
            prop_assert!(l1(&exact) <= l1(&fast) + 1e-6);
            prop_assert!(l1(&fast) <= (8f64).sqrt() * l1(&exact) + 1e-6);
        }
    }
}
