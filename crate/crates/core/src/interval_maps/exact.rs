use num_rational::BigRational;
use num_traits::Signed;

use super::IntervalMap;
use crate::error::{OdxError, Result};

/// `x ↦ slope·x + offset` on `[lo, hi)`, in exact rational arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePiece {
    pub lo: BigRational,
    pub hi: BigRational,
    pub slope: BigRational,
    pub offset: BigRational,
}

impl AffinePiece {
    pub fn new(lo: BigRational, hi: BigRational, slope: BigRational, offset: BigRational) -> Self {
        AffinePiece { lo, hi, slope, offset }
    }

    pub fn contains(&self, x: &BigRational) -> bool {
        &self.lo <= x && x < &self.hi
    }

    pub fn apply(&self, x: &BigRational) -> BigRational {
        &self.slope * x + &self.offset
    }
}

/// Exact orbits of a piecewise-affine map with rational data.
#[derive(Clone, Debug)]
pub struct ExactOrbit {
    pieces: Vec<AffinePiece>,
}

impl ExactOrbit {
    pub fn new(map: &IntervalMap) -> Result<Self> {
        map.exact_pieces()
            .map(|p| ExactOrbit { pieces: p.to_vec() })
            .ok_or_else(|| OdxError::NoExactInverse(map.name.clone()))
    }

    pub fn step(&self, x: &BigRational, iterate: usize) -> Result<(BigRational, usize)> {
        if x.is_negative() || x > &BigRational::from_integer(1.into()) {
            return Err(OdxError::OutOfDomain(to_f64(x)));
        }
        let j = self
            .pieces
            .iter()
            .position(|p| p.contains(x))
            .ok_or(OdxError::BoundaryPoint { x: to_f64(x), iterate })?;
        Ok((self.pieces[j].apply(x), j))
    }

    pub fn iterate(&self, x: &BigRational, n: usize) -> Result<BigRational> {
        let mut y = x.clone();
        for i in 0..n {
            y = self.step(&y, i)?.0;
        }
        Ok(y)
    }

    /// Smallest `p ≤ max_p` with `f^p(x) = x`.
    pub fn period(&self, x: &BigRational, max_p: usize) -> Result<Option<usize>> {
        let mut y = x.clone();
        for p in 1..=max_p {
            y = self.step(&y, p - 1)?.0;
            if &y == x {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }

    /// First `n ∈ [start, t_max]` with `|f^n(x) − z| < r`, with `r` and `z`
    /// rational.
    pub fn first_entry(
        &self,
        x: &BigRational,
        z: &BigRational,
        r: &BigRational,
        start: usize,
        t_max: usize,
    ) -> Result<Option<usize>> {
        let mut y = x.clone();
        for n in 0..=t_max {
            if n >= start && (&y - z).abs() < *r {
                return Ok(Some(n));
            }
            if n < t_max {
                y = self.step(&y, n)?.0;
            }
        }
        Ok(None)
    }
}

pub fn to_f64(x: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap_or(f64::NAN)
}

/// Exact binary value of a finite `f64`.
pub fn from_f64(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::{doubling, gauss, ly_tent};

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn doubling_exact_periods() {
        let e = ExactOrbit::new(&doubling()).unwrap();
        assert_eq!(e.period(&q(1, 3), 10).unwrap(), Some(2));
        assert_eq!(e.period(&q(1, 7), 10).unwrap(), Some(3));
        assert_eq!(e.period(&q(0, 1), 10).unwrap(), Some(1));
        assert_eq!(e.period(&q(1, 6), 10).unwrap(), None);
        assert_eq!(e.iterate(&q(7, 8), 3).unwrap(), q(0, 1));
    }

    #[test]
    fn exact_orbit_of_one_third_never_enters_small_hole_elsewhere() {
        let e = ExactOrbit::new(&doubling()).unwrap();
        // 1/3 ↔ 2/3 never meets (1/2 − 1/100, 1/2 + 1/100)
        let hit = e.first_entry(&q(1, 3), &q(1, 2), &q(1, 100), 1, 1000).unwrap();
        assert_eq!(hit, None);
    }

    #[test]
    fn tent_exact_matches_float() {
        let m = ly_tent(1.5).unwrap();
        let e = ExactOrbit::new(&m).unwrap();
        let x = 0.3;
        let yf = m.iterate(x, 10).unwrap();
        let ye = to_f64(&e.iterate(&from_f64(x).unwrap(), 10).unwrap());
        assert!((yf - ye).abs() < 1e-10);
    }

    #[test]
    fn gauss_has_no_exact_pieces() {
        assert!(matches!(ExactOrbit::new(&gauss()), Err(OdxError::NoExactInverse(_))));
    }
}
