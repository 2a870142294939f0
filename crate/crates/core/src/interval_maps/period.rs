use num_rational::BigRational;

use super::{ExactOrbit, IntervalMap};
use crate::error::{OdxError, Result};

/// Prime period of `z` in double precision: the smallest `p ≤ p_max` with
/// `|f^p z − z| < tol` such that `f^p` is monotone on a one-sided
/// neighbourhood of `z`.
pub fn detect_period(map: &IntervalMap, z: f64, p_max: usize, tol: f64) -> Result<Option<usize>> {
    let (pts, itin) = map.orbit(z, p_max)?;
    let mut passing = Vec::new();
    for p in 1..=p_max {
        if (pts[p] - z).abs() < tol && monotone_near(map, z, &itin[..p]) {
            passing.push(p);
        }
    }
    let Some(&p) = passing.first() else {
        return Ok(None);
    };
    if let Some(&q) = passing.iter().find(|&&q| q % p != 0) {
        return Err(OdxError::ToleranceAmbiguous(p, q));
    }
    Ok(Some(p))
}

/// Some side of `z` follows the same itinerary for `p` steps, so `f^p` is a
/// composition of monotone branches there.
fn monotone_near(map: &IntervalMap, z: f64, itin: &[usize]) -> bool {
    let h = 1e-9 / 2f64.powi(itin.len().min(20) as i32);
    [z - h, z + h].iter().any(|&w| {
        (0.0..=1.0).contains(&w)
            && map
                .orbit(w, itin.len())
                .map(|(_, it)| it == itin)
                .unwrap_or(false)
    })
}

/// Exact prime period for maps carrying rational affine pieces.
pub fn detect_period_exact(map: &IntervalMap, z: &BigRational, p_max: usize) -> Result<Option<usize>> {
    ExactOrbit::new(map)?.period(z, p_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::{doubling, gauss, GOLDEN};

    #[test]
    fn catalogue_periods() {
        let d = doubling();
        assert_eq!(detect_period(&d, 1.0 / 3.0, 32, 1e-9).unwrap(), Some(2));
        assert_eq!(detect_period(&d, 0.0, 32, 1e-9).unwrap(), Some(1));
        assert_eq!(detect_period(&d, 2f64.sqrt() - 1.0, 32, 1e-9).unwrap(), None);
        assert_eq!(detect_period(&gauss(), GOLDEN, 32, 1e-9).unwrap(), Some(1));
    }

    #[test]
    fn loose_tolerance_is_ambiguous() {
        // orbit of 0.3 under doubling: 0.6, 0.2, 0.4, 0.8, 0.6, ...
        let r = detect_period(&doubling(), 0.3, 8, 0.15);
        assert!(matches!(r, Err(OdxError::ToleranceAmbiguous(_, _))), "{r:?}");
    }

    #[test]
    fn exact_period_of_rational() {
        let z = BigRational::new(2.into(), 7.into());
        assert_eq!(detect_period_exact(&doubling(), &z, 10).unwrap(), Some(3));
    }
}
