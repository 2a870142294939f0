use serde::Serialize;

use super::{BranchCount, IntervalMap, Potential};
use crate::error::OdxError;

/// Sampled distortion constant for `|e^{S_nφ(x)−S_nφ(y)} − 1| ≤ C |fⁿx − fⁿy|^θ`.
#[derive(Clone, Debug, Serialize)]
pub struct DistortionEstimate {
    pub exponent: f64,
    /// Largest sampled ratio for each `n = 1..=n_max`.
    pub per_n: Vec<f64>,
    pub c_hat: f64,
    /// The estimate on the full sample agrees with the nested half sample
    /// and does not grow with `n`.
    pub bounded: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionsReport {
    pub map: String,
    pub potential: String,
    pub lipschitz: DistortionEstimate,
    pub holder: DistortionEstimate,
    /// `C_d` used for `n₁`: the Lipschitz estimate when bounded, else Hölder.
    pub c_d: f64,
    pub c_d_exponent: f64,
    /// `(n, sup_I e^{S_nφ})`.
    pub sup_table: Vec<(usize, f64)>,
    /// `(J, Σ_{j<J} sup_{Z_j} e^φ)`.
    pub f2_partial_sums: Vec<(usize, f64)>,
    pub f2_pass: bool,
    pub n0: Option<usize>,
    pub f3_pass: bool,
    pub n1: Option<usize>,
    pub n1_pass: bool,
    pub warnings: Vec<String>,
}

/// Samples the distortion, contraction and summability conditions on `map`.
pub fn assumptions_report(map: &IntervalMap, pot: &Potential, n_max: usize, grid: usize) -> AssumptionsReport {
    let fam = map.family();
    let mut warnings = Vec::new();
    if let BranchCount::Truncated { depth, omitted_mass } = fam.count() {
        warnings.push(OdxError::TruncationWarning { depth, omitted_mass }.to_string());
    }
    let pts = sample_points(map, grid);

    let mut sup_table = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let s = pts
            .iter()
            .filter_map(|&x| map.birkhoff_sum(pot, x, n).ok())
            .map(f64::exp)
            .fold(0.0, f64::max);
        sup_table.push((n, s));
    }
    let n0 = sup_table.iter().find(|(_, s)| *s < 1.0).map(|(n, _)| *n);

    let lipschitz = distortion(map, pot, n_max, &pts, 1.0);
    let holder = distortion(map, pot, n_max, &pts, 0.5);
    let (c_d, c_d_exponent) = if lipschitz.bounded || !holder.bounded {
        (lipschitz.c_hat, 1.0)
    } else {
        (holder.c_hat, 0.5)
    };
    let n1 = sup_table
        .iter()
        .find(|(_, s)| (2.0 + 2.0 * c_d) * s < 1.0)
        .map(|(n, _)| *n);

    let (f2_partial_sums, f2_pass) = f2_sums(map, pot);

    AssumptionsReport {
        map: map.name.clone(),
        potential: pot.tag().to_string(),
        lipschitz,
        holder,
        c_d,
        c_d_exponent,
        sup_table,
        f2_partial_sums,
        f2_pass,
        n0,
        f3_pass: n0.is_some(),
        n1,
        n1_pass: n1.is_some(),
        warnings,
    }
}

/// Uniform grid plus the closed endpoints of the first branches.
fn sample_points(map: &IntervalMap, grid: usize) -> Vec<f64> {
    let fam = map.family();
    let mut pts: Vec<f64> = (0..grid).map(|i| (i as f64 + 0.5) / grid as f64).collect();
    let (nb, first) = match fam.count() {
        BranchCount::Finite(n) => (n, 0),
        BranchCount::Truncated { depth, .. } => (depth.min(1000), 1),
    };
    for j in first..first + nb {
        let (a, b) = fam.domain(j);
        for e in [a, b] {
            if fam.locate(e) == Some(j) {
                pts.push(e);
            }
        }
    }
    pts
}

fn distortion(map: &IntervalMap, pot: &Potential, n_max: usize, pts: &[f64], theta: f64) -> DistortionEstimate {
    const TARGETS: usize = 8;
    let fam = map.family();
    let mut per_n = Vec::with_capacity(n_max);
    let mut per_n_half = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut best = 0.0f64;
        let mut best_half = 0.0f64;
        for (i, &x) in pts.iter().enumerate() {
            let Ok((orb, itin)) = map.orbit(x, n) else { continue };
            let Ok(sx) = map.birkhoff_sum(pot, x, n) else { continue };
            let u = orb[n];
            for k in 0..TARGETS {
                let v = (k as f64 + 0.5) / TARGETS as f64;
                // pull v back along the itinerary of x
                let mut y = v;
                let mut ok = true;
                for &j in itin.iter().rev() {
                    match fam.inverse(j, y) {
                        Some(w) => y = w,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok || y == x {
                    continue;
                }
                let same = map.orbit(y, n).map(|(_, it)| it == itin).unwrap_or(false);
                if !same {
                    continue;
                }
                let Ok(sy) = map.birkhoff_sum(pot, y, n) else { continue };
                let d = (u - v).abs();
                if d < 1e-9 {
                    continue;
                }
                let ratio = (sx - sy).exp_m1().abs() / d.powf(theta);
                best = best.max(ratio);
                if i % 2 == 0 {
                    best_half = best_half.max(ratio);
                }
            }
        }
        per_n.push(best);
        per_n_half.push(best_half);
    }
    let c_hat = per_n.iter().cloned().fold(0.0, f64::max);
    let c_half = per_n_half.iter().cloned().fold(0.0, f64::max);
    let h = n_max / 2;
    let early = per_n[..h.max(1)].iter().cloned().fold(0.0, f64::max);
    let late = per_n[h..].iter().cloned().fold(0.0, f64::max);
    let bounded = c_hat.is_finite() && late <= 1.5 * early + 1e-12 && c_hat <= 1.5 * c_half + 1e-12;
    DistortionEstimate { exponent: theta, per_n, c_hat, bounded }
}

/// Partial sums of `sup_{Z_j} e^φ` at `J = 1, 2, 4, …`.
fn f2_sums(map: &IntervalMap, pot: &Potential) -> (Vec<(usize, f64)>, bool) {
    let fam = map.family();
    let (nb, finite) = match fam.count() {
        BranchCount::Finite(n) => (n, true),
        BranchCount::Truncated { depth, .. } => (depth.min(1 << 16), false),
    };
    let first = if finite { 0 } else { 1 };
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut next = 1;
    for k in 0..nb {
        let j = first + k;
        let (a, b) = fam.domain(j);
        let mut s = 0.0f64;
        for i in 0..=32 {
            let x = a + (b - a) * i as f64 / 32.0;
            if fam.locate(x) == Some(j) || (i > 0 && i < 32) {
                s = s.max(pot.eval(map, j, x).exp());
            }
        }
        acc += s;
        if k + 1 == next || k + 1 == nb {
            out.push((k + 1, acc));
            next *= 2;
        }
    }
    let pass = acc.is_finite()
        && (finite || {
            let n = out.len();
            n >= 2 && (out[n - 1].1 - out[n - 2].1) < 1e-3 * out[n - 1].1
        });
    (out, pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::{doubling, gauss, ly_tent};

    #[test]
    fn doubling_constants() {
        let r = assumptions_report(&doubling(), &Potential::Geometric, 8, 200);
        assert_eq!(r.c_d, 0.0);
        assert_eq!(r.n1, Some(2));
        assert_eq!(r.n0, Some(1));
        assert!(r.f2_pass);
        assert!((r.f2_partial_sums.last().unwrap().1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tent_n1_is_seven() {
        let r = assumptions_report(&ly_tent(1.0 / 0.9).unwrap(), &Potential::Geometric, 12, 200);
        assert!(r.c_d < 1e-9, "{}", r.c_d);
        assert_eq!(r.n1, Some(7));
    }

    #[test]
    fn gauss_contracts_at_two() {
        let r = assumptions_report(&gauss(), &Potential::Geometric, 6, 400);
        assert_eq!(r.n0, Some(2));
        assert!((r.sup_table[0].1 - 1.0).abs() < 1e-12);
        assert!(r.f2_pass);
        assert!(!r.warnings.is_empty());
        // Σ 1/j² partial sums
        let (j, s) = *r.f2_partial_sums.last().unwrap();
        let exact: f64 = (1..=j).map(|k| 1.0 / (k * k) as f64).sum();
        assert!((s - exact).abs() < 1e-9);
        // Hölder-1/2 constant stays bounded in n
        assert!(r.holder.bounded, "{:?}", r.holder.per_n);
    }
}
