//! Holes, hitting and escape times, preimage interval arithmetic.

mod exact_sets;
mod intervals;
mod returns;

use num_rational::BigRational;
use num_traits::Signed;
use serde::{Deserialize, Serialize};

use crate::error::{OdxError, Result};
use crate::interval_maps::{detect_period, Acip, ExactOrbit, IntervalMap};

pub use intervals::{preimage_set, IntervalSet};
pub use returns::{return_ratio_q, union_measure_periodic, union_measures_periodic, QEstimate, QMode, UnionMeasure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleShape {
    /// `(z − r, z + r) ∩ [0, 1]`.
    Symmetric,
    /// `[z, z + r)`.
    OneSided,
}

/// A single interval hole `U`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hole {
    pub centre: f64,
    pub radius: f64,
    pub shape: HoleShape,
}

impl Hole {
    pub fn new(centre: f64, radius: f64, shape: HoleShape) -> Self {
        Hole { centre, radius, shape }
    }

    pub fn symmetric(centre: f64, radius: f64) -> Self {
        Hole::new(centre, radius, HoleShape::Symmetric)
    }

    pub fn one_sided(centre: f64, radius: f64) -> Self {
        Hole::new(centre, radius, HoleShape::OneSided)
    }

    /// Endpoints `(lo, hi)` clipped to `[0, 1]`.
    pub fn bounds(&self) -> (f64, f64) {
        match self.shape {
            HoleShape::Symmetric => ((self.centre - self.radius).max(0.0), (self.centre + self.radius).min(1.0)),
            HoleShape::OneSided => (self.centre, (self.centre + self.radius).min(1.0)),
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        match self.shape {
            HoleShape::Symmetric => (x - self.centre).abs() < self.radius,
            HoleShape::OneSided => x >= self.centre && x < self.centre + self.radius,
        }
    }

    pub fn diameter(&self) -> f64 {
        let (a, b) = self.bounds();
        b - a
    }

    pub fn as_set(&self) -> IntervalSet {
        let (a, b) = self.bounds();
        IntervalSet::single(a, b, "U")
    }

    /// `μ(U)` for the given invariant density (Lebesgue when absent).
    pub fn measure(&self, acip: Option<&Acip>) -> f64 {
        let (a, b) = self.bounds();
        match acip {
            Some(d) => d.measure(a, b),
            None => b - a,
        }
    }
}

/// Nested holes `U_{r_1} ⊃ U_{r_2} ⊃ …` around a common centre.
#[derive(Clone, Debug, PartialEq)]
pub struct HoleFamily {
    pub centre: f64,
    pub shape: HoleShape,
    pub radii: Vec<f64>,
    pub period: Option<usize>,
}

impl HoleFamily {
    pub fn new(centre: f64, shape: HoleShape, radii: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&centre) {
            return Err(OdxError::OutOfDomain(centre));
        }
        if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
            return Err(OdxError::ConfigInvalid(
                "hole radii must be positive and strictly decreasing".into(),
            ));
        }
        Ok(HoleFamily { centre, shape, radii, period: None })
    }

    pub fn with_period(mut self, p: Option<usize>) -> Self {
        self.period = p;
        self
    }

    /// Fills the period metadata from [`detect_period`].
    pub fn detect(self, map: &IntervalMap, p_max: usize, tol: f64) -> Result<Self> {
        let p = detect_period(map, self.centre, p_max, tol)?;
        Ok(self.with_period(p))
    }

    pub fn hole(&self, i: usize) -> Hole {
        Hole::new(self.centre, self.radii[i], self.shape)
    }

    pub fn holes(&self) -> impl Iterator<Item = Hole> + '_ {
        self.radii.iter().map(|&r| Hole::new(self.centre, r, self.shape))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum HittingOutcome {
    Hit { time: usize, entered_at: f64 },
    Censored { horizon: usize },
}

impl HittingOutcome {
    pub fn time(&self) -> Option<usize> {
        match self {
            HittingOutcome::Hit { time, .. } => Some(*time),
            HittingOutcome::Censored { .. } => None,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, HittingOutcome::Censored { .. })
    }

    /// `1{τ > t}`, treating censoring beyond `t` as survival.
    pub fn survives(&self, t: usize) -> Option<bool> {
        match *self {
            HittingOutcome::Hit { time, .. } => Some(time > t),
            HittingOutcome::Censored { horizon } if horizon >= t => Some(true),
            HittingOutcome::Censored { .. } => None,
        }
    }
}

/// `τ_U(x) = min{n ≥ 1 : fⁿx ∈ U}`, or censored at `horizon`.
pub fn hitting_time(map: &IntervalMap, hole: &Hole, x: f64, horizon: usize) -> Result<HittingOutcome> {
    if !(0.0..=1.0).contains(&x) || x.is_nan() {
        return Err(OdxError::OutOfDomain(x));
    }
    let fam = map.family();
    let mut y = x;
    for n in 1..=horizon {
        let j = fam.locate(y).ok_or(OdxError::BoundaryPoint { x: y, iterate: n - 1 })?;
        y = fam.forward(j, y);
        if hole.contains(y) {
            return Ok(HittingOutcome::Hit { time: n, entered_at: y });
        }
    }
    Ok(HittingOutcome::Censored { horizon })
}

/// `e_U(x)`: `0` on `U`, otherwise the hitting time.
pub fn escape_time(map: &IntervalMap, hole: &Hole, x: f64, horizon: usize) -> Result<HittingOutcome> {
    if hole.contains(x) {
        if !(0.0..=1.0).contains(&x) {
            return Err(OdxError::OutOfDomain(x));
        }
        return Ok(HittingOutcome::Hit { time: 0, entered_at: x });
    }
    hitting_time(map, hole, x, horizon)
}

/// A hole with rational centre and radius, for exact orbits.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactHole {
    pub centre: BigRational,
    pub radius: BigRational,
    pub shape: HoleShape,
}

impl ExactHole {
    pub fn contains(&self, x: &BigRational) -> bool {
        match self.shape {
            HoleShape::Symmetric => (x - &self.centre).abs() < self.radius,
            HoleShape::OneSided => x >= &self.centre && *x < &self.centre + &self.radius,
        }
    }
}

/// [`hitting_time`] along the exact rational orbit of `x`.
pub fn hitting_time_exact(
    orbit: &ExactOrbit,
    hole: &ExactHole,
    x: &BigRational,
    horizon: usize,
) -> Result<HittingOutcome> {
    let mut y = x.clone();
    for n in 1..=horizon {
        y = orbit.step(&y, n - 1)?.0;
        if hole.contains(&y) {
            return Ok(HittingOutcome::Hit {
                time: n,
                entered_at: crate::interval_maps::rational_to_f64(&y),
            });
        }
    }
    Ok(HittingOutcome::Censored { horizon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::doubling;

    #[test]
    fn hitting_time_examples() {
        let d = doubling();
        let u = Hole::one_sided(0.0, 0.25);
        assert_eq!(hitting_time(&d, &u, 7.0 / 8.0, 100).unwrap().time(), Some(3));
        assert_eq!(hitting_time(&d, &u, 0.1, 100).unwrap().time(), Some(1));
        assert_eq!(escape_time(&d, &u, 0.1, 100).unwrap().time(), Some(0));
        assert_eq!(escape_time(&d, &u, 7.0 / 8.0, 100).unwrap().time(), Some(3));
    }

    #[test]
    fn one_third_is_censored_exactly() {
        let e = ExactOrbit::new(&doubling()).unwrap();
        let u = ExactHole {
            centre: BigRational::from_integer(0.into()),
            radius: BigRational::new(1.into(), 4.into()),
            shape: HoleShape::OneSided,
        };
        let x = BigRational::new(1.into(), 3.into());
        for h in [1, 10, 1000] {
            assert!(hitting_time_exact(&e, &u, &x, h).unwrap().is_censored());
        }
    }

    #[test]
    fn hole_family_validation() {
        assert!(HoleFamily::new(0.3, HoleShape::Symmetric, vec![0.1, 0.01]).is_ok());
        assert!(HoleFamily::new(0.3, HoleShape::Symmetric, vec![0.01, 0.1]).is_err());
        assert!(HoleFamily::new(1.3, HoleShape::Symmetric, vec![0.1]).is_err());
        let f = HoleFamily::new(1.0 / 3.0, HoleShape::Symmetric, vec![0.1, 0.01])
            .unwrap()
            .detect(&doubling(), 16, 1e-9)
            .unwrap();
        assert_eq!(f.period, Some(2));
        let u = Hole::symmetric(0.0, 0.1);
        assert_eq!(u.bounds(), (0.0, 0.1));
        assert!(u.contains(0.0) && !u.contains(0.1));
    }
}
