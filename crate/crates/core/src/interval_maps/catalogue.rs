use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Zero};

use super::{Acip, AffinePiece, Branch, BranchCount, BranchFamily, Closed, IntervalMap};
use crate::error::{OdxError, Result};
use crate::numeric::digamma_diff;

/// Golden mean `(√5 − 1)/2`, the fixed point of the Gauss map on `Z_1`.
pub const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// `x ↦ 2x mod 1` on `[0, 1)`.
pub fn doubling() -> IntervalMap {
    let branches = vec![
        Branch::new((0.0, 0.5), Closed::Left, |x| 2.0 * x, |_| 2.0).with_inverse(|y| 0.5 * y),
        Branch::new((0.5, 1.0), Closed::Left, |x| 2.0 * x - 1.0, |_| 2.0)
            .with_inverse(|y| 0.5 * (y + 1.0)),
    ];
    let two = BigRational::from_integer(2.into());
    let half = BigRational::new(1.into(), 2.into());
    IntervalMap::new("doubling", Arc::new(branches))
        .with_acip(Acip::Lebesgue)
        .with_exact(vec![
            AffinePiece::new(BigRational::zero(), half.clone(), two.clone(), BigRational::zero()),
            AffinePiece::new(half, BigRational::one(), two, -BigRational::one()),
        ])
}

/// Piecewise-linear Lasota–Yorke map with constant `|Df| = slope`:
/// `x ↦ slope·x` on `[0, 1/slope)` and `x ↦ slope·(1 − x)` on `[1/slope, 1)`.
/// The first branch is onto, which gives the covering property.
pub fn ly_tent(slope: f64) -> Result<IntervalMap> {
    if !(slope > 1.0 && slope <= 2.0) {
        return Err(OdxError::ConfigInvalid(format!(
            "ly_tent slope must lie in (1, 2], got {slope}"
        )));
    }
    let s = slope;
    let cut = 1.0 / s;
    let branches = vec![
        Branch::new((0.0, cut), Closed::Left, move |x| s * x, move |_| s).with_inverse(move |y| y / s),
        Branch::new((cut, 1.0), Closed::Left, move |x| s * (1.0 - x), move |_| s)
            .with_inverse(move |y| 1.0 - y / s),
    ];
    let rs = rat(s);
    let rcut = BigRational::one() / rs.clone();
    Ok(IntervalMap::new("ly_tent", Arc::new(branches))
        .with_param("slope", s)
        .with_exact(vec![
            AffinePiece::new(BigRational::zero(), rcut.clone(), rs.clone(), BigRational::zero()),
            AffinePiece::new(rcut, BigRational::one(), -rs.clone(), rs),
        ]))
}

/// Manneville–Pomeau / LSV map: `x + 2^γ x^{1+γ}` on `[0, 1/2)`, `2x − 1`
/// on `[1/2, 1]`.
pub fn lsv(gamma: f64) -> Result<IntervalMap> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OdxError::ConfigInvalid(format!(
            "lsv gamma must lie in (0, 1), got {gamma}"
        )));
    }
    let c = 2f64.powf(gamma);
    let branches = vec![
        Branch::new(
            (0.0, 0.5),
            Closed::Left,
            move |x| x + c * x.powf(1.0 + gamma),
            move |x| 1.0 + c * (1.0 + gamma) * x.powf(gamma),
        )
        .with_inverse(move |y| lsv_left_inverse(gamma, y)),
        Branch::new((0.5, 1.0), Closed::Both, |x| 2.0 * x - 1.0, |_| 2.0)
            .with_inverse(|y| 0.5 * (y + 1.0)),
    ];
    Ok(IntervalMap::new("lsv", Arc::new(branches)).with_param("gamma", gamma))
}

/// Solves `x + 2^γ x^{1+γ} = y` on `[0, 1/2]`.
pub(crate) fn lsv_left_inverse(gamma: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let c = 2f64.powf(gamma);
    let g = |x: f64| x + c * x.powf(1.0 + gamma) - y;
    let (mut lo, mut hi) = (0.0f64, y.min(0.5));
    let mut x = (y - c * y.powf(1.0 + gamma)).clamp(lo, hi);
    for _ in 0..100 {
        let gx = g(x);
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = 1.0 + c * (1.0 + gamma) * x.powf(gamma);
        let mut nx = x - gx / d;
        if !(nx > lo && nx < hi) {
            nx = 0.5 * (lo + hi);
        }
        if (nx - x).abs() <= 1e-17 * x.max(1e-300) {
            return nx;
        }
        x = nx;
    }
    x
}

/// `a_k = f_L^{-k}(1/2)` for `k = 0..=k_max`; `J_k = [a_k, a_{k-1})`.
pub fn lsv_preimage_sequence(gamma: f64, k_max: usize) -> Vec<f64> {
    let mut a = Vec::with_capacity(k_max + 1);
    let mut x = 0.5;
    a.push(x);
    for _ in 0..k_max {
        x = lsv_left_inverse(gamma, x);
        a.push(x);
    }
    a
}

/// Gauss map `x ↦ 1/x mod 1`. Branch `j ≥ 1` lives on `(1/(j+1), 1/j]`.
pub fn gauss() -> IntervalMap {
    IntervalMap::new("gauss", Arc::new(GaussFamily { depth: GAUSS_DEPTH }))
        .with_acip(Acip::Gauss)
}

/// Omitted mass `1/(J+1) < 1e-10`.
const GAUSS_DEPTH: usize = 10_000_000_000;

struct GaussFamily {
    depth: usize,
}

impl GaussFamily {
    fn index_of(&self, x: f64) -> Option<usize> {
        if !(x > 0.0 && x <= 1.0) {
            return None;
        }
        let inv = 1.0 / x;
        if inv > self.depth as f64 + 1.0 {
            return None;
        }
        let mut j = inv.floor() as usize;
        while j > 1 && x > 1.0 / j as f64 {
            j -= 1;
        }
        while x <= 1.0 / (j + 1) as f64 {
            j += 1;
        }
        (j >= 1 && j <= self.depth).then_some(j)
    }
}

impl BranchFamily for GaussFamily {
    fn count(&self) -> BranchCount {
        BranchCount::Truncated {
            depth: self.depth,
            omitted_mass: 1.0 / (self.depth + 1) as f64,
        }
    }

    fn locate(&self, x: f64) -> Option<usize> {
        self.index_of(x)
    }

    fn domain(&self, j: usize) -> (f64, f64) {
        if j == 0 {
            return (1.0, 1.0);
        }
        (1.0 / (j + 1) as f64, 1.0 / j as f64)
    }

    fn forward(&self, j: usize, x: f64) -> f64 {
        (1.0 / x - j as f64).max(0.0)
    }

    fn derivative(&self, _j: usize, x: f64) -> f64 {
        1.0 / (x * x)
    }

    fn inverse(&self, j: usize, y: f64) -> Option<f64> {
        Some(1.0 / (y + j as f64))
    }

    fn increasing(&self, _j: usize) -> bool {
        false
    }

    fn branches_meeting(&self, a: f64, b: f64, limit: usize) -> Vec<usize> {
        // increasing position = decreasing j
        let j_right = if b >= 1.0 { 1 } else { (1.0 / b).floor().max(1.0) as usize };
        let j_left = if a <= 0.0 {
            self.depth
        } else {
            ((1.0 / a).floor() as usize).min(self.depth)
        };
        let mut out = Vec::new();
        let mut j = j_left;
        while j >= j_right.max(1) && out.len() < limit {
            let (lo, hi) = self.domain(j);
            if lo < b && hi > a {
                out.push(j);
            }
            if j == 1 {
                break;
            }
            j -= 1;
        }
        out
    }

    fn full_branch_range(&self, a: f64, b: f64) -> Option<(usize, Option<usize>)> {
        // j with [1/(j+1), 1/j] ⊂ [a, b]
        let mut k0 = (1.0 / b).ceil().max(1.0) as usize;
        while k0 > 1 && 1.0 / (k0 - 1) as f64 <= b {
            k0 -= 1;
        }
        while 1.0 / k0 as f64 > b {
            k0 += 1;
        }
        let k1 = if a <= 0.0 {
            None
        } else {
            let mut k1 = (1.0 / a).floor() as usize;
            while 1.0 / (k1 as f64) < a {
                k1 -= 1;
            }
            while 1.0 / (k1 + 1) as f64 >= a {
                k1 += 1;
            }
            Some(k1.max(k0))
        };
        Some((k0, k1))
    }

    fn full_branch_mass(&self, k0: usize, k1: Option<usize>, c: f64, d: f64) -> Option<f64> {
        // Σ_{k ∈ [k0, k1)} (1/(k+c) − 1/(k+d)) = [ψ(k0+d) − ψ(k0+c)] − [ψ(k1+d) − ψ(k1+c)]
        let head = digamma_diff(k0 as f64 + c, k0 as f64 + d);
        let tail = match k1 {
            Some(k1) if k1 > k0 => digamma_diff(k1 as f64 + c, k1 as f64 + d),
            Some(_) => return Some(0.0),
            None => 0.0,
        };
        Some(head - tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalogue_evaluations() {
        assert_eq!(doubling().evaluate(0.3).unwrap(), (0.6, 0));
        let (y, j) = gauss().evaluate(0.4).unwrap();
        assert!((y - 0.5).abs() < 1e-15);
        assert_eq!(j, 2);
        let (y, j) = lsv(0.5).unwrap().evaluate(0.25).unwrap();
        let expect = 0.25 + 2f64.sqrt() * 0.25f64.powf(1.5);
        assert!((y - expect).abs() < 1e-15);
        assert!((y - 0.426_776_7).abs() < 1e-7);
        assert_eq!(j, 0);
    }

    #[test]
    fn boundary_and_domain_errors() {
        assert!(matches!(
            gauss().evaluate(0.0),
            Err(OdxError::BoundaryPoint { .. })
        ));
        assert!(matches!(doubling().evaluate(1.0), Err(OdxError::BoundaryPoint { .. })));
        assert!(matches!(doubling().evaluate(-0.1), Err(OdxError::OutOfDomain(_))));
        assert!(matches!(doubling().evaluate(1.5), Err(OdxError::OutOfDomain(_))));
    }

    #[test]
    fn gauss_branch_location_at_endpoints() {
        let g = gauss();
        for j in 1..200usize {
            let x = 1.0 / j as f64;
            assert_eq!(g.family().locate(x), Some(j));
            assert!(g.evaluate(x).unwrap().0 < 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(lsv(1.5).is_err());
        assert!(lsv(0.0).is_err());
        assert!(ly_tent(0.9).is_err());
        assert!(ly_tent(2.5).is_err());
    }

    #[test]
    fn lsv_inverse_and_preimages() {
        let m = lsv(0.5).unwrap();
        for &x in &[1e-9, 1e-4, 0.1, 0.3, 0.49] {
            let y = m.evaluate(x).unwrap().0;
            assert!((lsv_left_inverse(0.5, y) - x).abs() < 1e-15);
        }
        let a = lsv_preimage_sequence(0.5, 2000);
        assert!(a.windows(2).all(|w| w[1] < w[0]));
        // a_k ≈ C k^{-1/γ}
        let slope = (a[2000] / a[1000]).ln() / 2f64.ln();
        assert!((slope + 2.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn gauss_full_branch_mass_matches_enumeration() {
        let fam = GaussFamily { depth: GAUSS_DEPTH };
        let (c, d) = (0.3, 0.45);
        let direct: f64 = (5..5000).map(|k| 1.0 / (k as f64 + c) - 1.0 / (k as f64 + d)).sum();
        let agg = fam.full_branch_mass(5, Some(5000), c, d).unwrap();
        assert!((direct - agg).abs() < 1e-13, "{direct} vs {agg}");
        // all branches from k0 on: Σ_j |Z_j ∩ f^{-1}[0,1)| = 1/k0
        let all = fam.full_branch_mass(7, None, 0.0, 1.0).unwrap();
        assert!((all - 1.0 / 7.0).abs() < 1e-14);
    }
}
