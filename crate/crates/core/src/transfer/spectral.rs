use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::PuncturedOperator;
use crate::error::{OdxError, Result};

/// Leading spectral data of a (punctured) Ulam matrix.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralData {
    pub lambda: f64,
    /// Cell densities, `∫ g dm = 1`.
    pub g: Vec<f64>,
    /// Estimate of the second eigenvalue modulus.
    pub rho: f64,
    /// `‖M̊g − λg‖₁` for the mass-normalised eigenvector.
    pub residual: f64,
    pub iterations: usize,
}

impl SpectralData {
    /// Cell masses `g_j |I_j|`.
    pub fn masses(&self, widths: &[f64]) -> Vec<f64> {
        self.g.iter().zip(widths).map(|(g, w)| g * w).collect()
    }
}

/// Power iteration in L1 on cell masses, followed by one deflated
/// subspace pass for `ρ`.
pub fn power_leading(op: &PuncturedOperator, tol: f64, max_iter: usize) -> Result<SpectralData> {
    let n = op.n();
    let widths = op.base.partition.widths();
    let mut x = widths.clone();
    let mut y = vec![0.0; n];
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=max_iter {
        op.apply(&x, &mut y);
        lambda = y.iter().sum::<f64>();
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(OdxError::NumericalFailure(
                "punctured operator annihilates the iterate".into(),
            ));
        }
        residual = y.iter().zip(&x).map(|(a, b)| (a - lambda * b).abs()).sum::<f64>();
        y.iter_mut().for_each(|v| *v /= lambda);
        std::mem::swap(&mut x, &mut y);
        iterations = it;
        if residual <= tol * lambda {
            break;
        }
    }
    if residual > tol * lambda {
        return Err(OdxError::NoConvergence(max_iter));
    }
    let rho = second_modulus(op, &x, lambda, max_iter.min(400));
    let g = x.iter().zip(&widths).map(|(m, w)| m / w).collect();
    Ok(SpectralData { lambda, g, rho, residual, iterations })
}

fn second_modulus(op: &PuncturedOperator, right: &[f64], lambda: f64, iters: usize) -> f64 {
    let n = op.n();
    // left eigenvector by power iteration on the transpose
    let mut l = vec![1.0; n];
    let mut tmp = vec![0.0; n];
    for _ in 0..iters {
        op.apply_transpose(&l, &mut tmp);
        let s = tmp.iter().cloned().fold(0.0, f64::max);
        if !(s > 0.0) {
            break;
        }
        tmp.iter_mut().for_each(|v| *v /= s);
        std::mem::swap(&mut l, &mut tmp);
    }
    let lr: f64 = l.iter().zip(right).map(|(a, b)| a * b).sum();
    let deflate = |v: &mut Vec<f64>| {
        let c: f64 = l.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() / lr;
        v.iter_mut().zip(right).for_each(|(vi, r)| *vi -= c * r);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    deflate(&mut v);
    let warm = iters / 4;
    let mut log_growth = 0.0;
    let mut counted = 0;
    for k in 0..iters.min(120) {
        let before: f64 = v.iter().map(|a| a.abs()).sum();
        if before == 0.0 || !before.is_finite() {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= before);
        op.apply(&v, &mut tmp);
        std::mem::swap(&mut v, &mut tmp);
        deflate(&mut v);
        let after: f64 = v.iter().map(|a| a.abs()).sum();
        if after <= 1e-300 {
            return 0.0;
        }
        if k >= warm.min(40) {
            log_growth += after.ln();
            counted += 1;
        }
    }
    if counted == 0 {
        return 0.0;
    }
    (log_growth / counted as f64).exp().min(lambda)
}

/// `log Σ (M̊^t x₀)` at the requested times, with per-step L1
/// renormalisation. Once the normalised iterate is stationary to `tol`,
/// further steps add `log λ` each.
pub fn survival_log_series(op: &PuncturedOperator, x0: &[f64], times: &[usize], tol: f64) -> Result<Vec<f64>> {
    survival_log_series_capped(op, x0, times, tol, usize::MAX).map(|(v, _)| v)
}

/// As [`survival_log_series`], but performs at most `max_steps` matrix
/// applications. Times that could not be reached are `NaN`; the second
/// value is the number of applications used.
pub fn survival_log_series_capped(
    op: &PuncturedOperator,
    x0: &[f64],
    times: &[usize],
    tol: f64,
    max_steps: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by_key(|&i| times[i]);
    let mut out = vec![f64::NAN; times.len()];
    let total: f64 = x0.iter().sum();
    if !(total > 0.0) {
        return Err(OdxError::Degenerate("initial mass is zero".into()));
    }
    let mut x: Vec<f64> = x0.iter().map(|v| v / total).collect();
    let mut y = vec![0.0; x.len()];
    let mut log_mass = total.ln();
    let mut t = 0usize;
    let mut steps = 0usize;
    let mut settled: Option<f64> = None;
    'outer: for &i in &order {
        let target = times[i];
        while t < target {
            if let Some(ll) = settled {
                log_mass += ll * (target - t) as f64;
                t = target;
                break;
            }
            if steps >= max_steps {
                break 'outer;
            }
            op.apply(&x, &mut y);
            steps += 1;
            let s: f64 = y.iter().sum();
            if !(s > 0.0) {
                log_mass = f64::NEG_INFINITY;
                settled = Some(f64::NEG_INFINITY);
                t = target;
                break;
            }
            let res: f64 = y.iter().zip(&x).map(|(a, b)| (a - s * b).abs()).sum();
            y.iter_mut().for_each(|v| *v /= s);
            std::mem::swap(&mut x, &mut y);
            log_mass += s.ln();
            t += 1;
            if res <= tol * s {
                settled = Some(s.ln());
            }
        }
        out[i] = log_mass;
    }
    Ok((out, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::doubling;
    use crate::open_systems::Hole;
    use crate::transfer::{build_ulam, puncture, Partition};

    #[test]
    fn doubling_eigenvalues() {
        let d = doubling();
        let op2 = build_ulam(&d, &Partition::uniform(2)).unwrap();
        let s = power_leading(&puncture(&op2, Some(&Hole::one_sided(0.0, 0.5))), 1e-14, 1000).unwrap();
        assert!((s.lambda - 0.5).abs() < 1e-14);
        let op4 = build_ulam(&d, &Partition::uniform(4)).unwrap();
        let s = power_leading(&puncture(&op4, Some(&Hole::one_sided(0.0, 0.25))), 1e-14, 1000).unwrap();
        assert!((s.lambda - (1.0 + 5f64.sqrt()) / 4.0).abs() < 1e-12);
        let s = power_leading(&puncture(&op4, None), 1e-14, 1000).unwrap();
        assert!((s.lambda - 1.0).abs() < 1e-14);
        assert!(s.g.iter().all(|&g| (g - 1.0).abs() < 1e-12));
        assert!(s.rho < 1e-6);
    }

    #[test]
    fn survival_series_matches_powers() {
        let d = doubling();
        let op2 = build_ulam(&d, &Partition::uniform(2)).unwrap();
        let p = puncture(&op2, Some(&Hole::one_sided(0.0, 0.5)));
        let ls = survival_log_series(&p, &[0.5, 0.5], &[10, 0, 3, 1000], 1e-14).unwrap();
        let l2 = 2f64.ln();
        assert_eq!(ls[1], 0.0);
        assert!((ls[2] + 3.0 * l2).abs() < 1e-13);
        assert!((ls[0] + 10.0 * l2).abs() < 1e-12);
        assert!((ls[3] + 1000.0 * l2).abs() < 1e-9);
    }
}
