//! Piecewise-monotone maps of the unit interval.
//!
//! A map is a family of branches. Each branch lives on a half-open domain
//! (the side that is closed follows the usual formula for the map, e.g.
//! `[0, 1/2)` and `[1/2, 1)` for the doubling map, `(1/(j+1), 1/j]` for the
//! Gauss map). Points of `[0, 1]` that belong to no domain form the
//! boundary set `D` and are reported as [`OdxError::BoundaryPoint`].

mod assumptions;
mod catalogue;
mod exact;
mod period;

use std::fmt;
use std::sync::Arc;

use crate::error::{OdxError, Result};

pub use assumptions::{assumptions_report, AssumptionsReport, DistortionEstimate};
pub use catalogue::{doubling, gauss, ly_tent, lsv, lsv_preimage_sequence, GOLDEN};
pub use exact::{from_f64 as rational_from_f64, to_f64 as rational_to_f64, AffinePiece, ExactOrbit};
pub use period::{detect_period, detect_period_exact};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One monotone branch supplied as closures.
#[derive(Clone)]
pub struct Branch {
    pub domain: (f64, f64),
    /// Which end of `domain` belongs to the branch.
    pub closed: Closed,
    forward: RealFn,
    derivative: RealFn,
    inverse: Option<RealFn>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Closed {
    Left,
    Right,
    Both,
}

impl Branch {
    pub fn new(
        domain: (f64, f64),
        closed: Closed,
        forward: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Branch {
            domain,
            closed,
            forward: Arc::new(forward),
            derivative: Arc::new(derivative),
            inverse: None,
        }
    }

    pub fn with_inverse(mut self, inverse: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.inverse = Some(Arc::new(inverse));
        self
    }

    pub fn contains(&self, x: f64) -> bool {
        let (a, b) = self.domain;
        match self.closed {
            Closed::Left => a <= x && x < b,
            Closed::Right => a < x && x <= b,
            Closed::Both => a <= x && x <= b,
        }
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }
}

impl fmt::Debug for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Branch")
            .field("domain", &self.domain)
            .field("closed", &self.closed)
            .field("inverse", &self.inverse.is_some())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BranchCount {
    Finite(usize),
    /// Countably many branches; `depth` branches are used and the rest of
    /// the domain (of Lebesgue mass `omitted_mass`) is ignored.
    Truncated { depth: usize, omitted_mass: f64 },
}

/// The branch structure of a map. Implemented by closure lists and by the
/// countable families (Gauss, Farey) that locate branches analytically.
pub trait BranchFamily: Send + Sync {
    fn count(&self) -> BranchCount;
    /// Index of the branch whose domain contains `x`.
    fn locate(&self, x: f64) -> Option<usize>;
    fn domain(&self, j: usize) -> (f64, f64);
    fn forward(&self, j: usize, x: f64) -> f64;
    /// `|Df|` on branch `j`.
    fn derivative(&self, j: usize, x: f64) -> f64;
    fn inverse(&self, j: usize, y: f64) -> Option<f64>;
    fn increasing(&self, j: usize) -> bool;
    /// Branch indices meeting the open interval `(a, b)`, in increasing
    /// position order. Countable families may stop after `limit` items.
    fn branches_meeting(&self, a: f64, b: f64, limit: usize) -> Vec<usize>;
    /// For families with infinitely many full branches accumulating at a
    /// point, the Lebesgue mass of `∪_{k ∈ [k0, k1)} Z_k ∩ f^{-1}(c, d)`.
    /// Range `[k0, k1)` of full branches whose closed domain lies inside
    /// `[a, b]`, for families that support [`BranchFamily::full_branch_mass`].
    fn full_branch_range(&self, _a: f64, _b: f64) -> Option<(usize, Option<usize>)> {
        None
    }
    fn full_branch_mass(&self, _k0: usize, _k1: Option<usize>, _c: f64, _d: f64) -> Option<f64> {
        None
    }
}

impl BranchFamily for Vec<Branch> {
    fn count(&self) -> BranchCount {
        BranchCount::Finite(self.len())
    }

    fn locate(&self, x: f64) -> Option<usize> {
        self.iter().position(|b| b.contains(x))
    }

    fn domain(&self, j: usize) -> (f64, f64) {
        self[j].domain
    }

    fn forward(&self, j: usize, x: f64) -> f64 {
        (self[j].forward)(x)
    }

    fn derivative(&self, j: usize, x: f64) -> f64 {
        (self[j].derivative)(x)
    }

    fn inverse(&self, j: usize, y: f64) -> Option<f64> {
        self[j].inverse.as_ref().map(|g| g(y))
    }

    fn increasing(&self, j: usize) -> bool {
        let (a, b) = self[j].domain;
        let w = b - a;
        (self[j].forward)(a + 0.75 * w) > (self[j].forward)(a + 0.25 * w)
    }

    fn branches_meeting(&self, a: f64, b: f64, _limit: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len())
            .filter(|&j| self[j].domain.0 < b && self[j].domain.1 > a)
            .collect();
        idx.sort_by(|&i, &j| self[i].domain.0.total_cmp(&self[j].domain.0));
        idx
    }
}

/// Absolutely continuous invariant probability density, when known.
#[derive(Clone, Debug)]
pub enum Acip {
    Lebesgue,
    /// `1/(ln 2 (1+x))`.
    Gauss,
    /// Constant `values[i]` on `(breaks[i], breaks[i+1])`; `cum[i]` is the
    /// mass left of `breaks[i]`.
    PiecewiseConstant { breaks: Vec<f64>, values: Vec<f64>, cum: Vec<f64> },
}

impl Acip {
    /// Piecewise-constant density from increasing breaks, renormalised to
    /// unit mass.
    pub fn piecewise_constant(breaks: Vec<f64>, mut values: Vec<f64>) -> Result<Acip> {
        let ok = breaks.len() == values.len() + 1
            && breaks.first() == Some(&0.0)
            && breaks.last() == Some(&1.0)
            && breaks.windows(2).all(|w| w[1] > w[0])
            && values.iter().all(|v| *v >= 0.0 && v.is_finite());
        if !ok {
            return Err(OdxError::ConfigInvalid("bad piecewise-constant density".into()));
        }
        let mut cum = Vec::with_capacity(breaks.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for (i, v) in values.iter().enumerate() {
            acc += v * (breaks[i + 1] - breaks[i]);
            cum.push(acc);
        }
        if !(acc > 0.0) {
            return Err(OdxError::ConfigInvalid("density has zero mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= acc);
        cum.iter_mut().for_each(|v| *v /= acc);
        Ok(Acip::PiecewiseConstant { breaks, values, cum })
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            Acip::Lebesgue => 1.0,
            Acip::Gauss => 1.0 / (std::f64::consts::LN_2 * (1.0 + x)),
            Acip::PiecewiseConstant { breaks, values, .. } => {
                let i = breaks.partition_point(|&b| b <= x);
                if i == 0 || i > values.len() {
                    0.0
                } else {
                    values[i - 1]
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            Acip::Lebesgue => x,
            Acip::Gauss => (1.0 + x).ln() / std::f64::consts::LN_2,
            Acip::PiecewiseConstant { breaks, values, cum } => {
                let i = breaks.partition_point(|&b| b <= x).clamp(1, values.len()) - 1;
                (cum[i] + values[i] * (x - breaks[i])).min(1.0)
            }
        }
    }

    /// Inverse of [`Acip::cdf`], by closed form or bisection.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Acip::Lebesgue => u,
            Acip::Gauss => 2f64.powf(u) - 1.0,
            Acip::PiecewiseConstant { breaks, values, cum } => {
                let i = cum.partition_point(|&c| c <= u).clamp(1, values.len()) - 1;
                if values[i] > 0.0 {
                    (breaks[i] + (u - cum[i]) / values[i]).clamp(breaks[i], breaks[i + 1])
                } else {
                    breaks[i]
                }
            }
        }
    }

    pub fn measure(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            0.0
        } else {
            self.cdf(b) - self.cdf(a)
        }
    }
}

/// A potential `φ`, evaluated branch-wise on the natural-log scale.
#[derive(Clone)]
pub enum Potential {
    /// `φ = -log|Df|`.
    Geometric,
    Custom {
        tag: String,
        eval: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>,
    },
}

impl Potential {
    pub fn tag(&self) -> &str {
        match self {
            Potential::Geometric => "geometric",
            Potential::Custom { tag, .. } => tag,
        }
    }

    pub fn eval(&self, map: &IntervalMap, branch: usize, x: f64) -> f64 {
        match self {
            Potential::Geometric => -map.family.derivative(branch, x).ln(),
            Potential::Custom { eval, .. } => eval(branch, x),
        }
    }
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Potential({})", self.tag())
    }
}

/// A piecewise-monotone map of `[0, 1]` with catalogue metadata.
#[derive(Clone)]
pub struct IntervalMap {
    pub name: String,
    pub params: Vec<(String, f64)>,
    family: Arc<dyn BranchFamily>,
    acip: Option<Acip>,
    exact: Option<Arc<Vec<AffinePiece>>>,
}

impl fmt::Debug for IntervalMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntervalMap")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("count", &self.family.count())
            .finish()
    }
}

impl IntervalMap {
    pub fn new(name: impl Into<String>, family: Arc<dyn BranchFamily>) -> Self {
        IntervalMap {
            name: name.into(),
            params: Vec::new(),
            family,
            acip: None,
            exact: None,
        }
    }

    /// A map from user-supplied branches. Branch sanity is checked on a
    /// sample of `10^4` points per branch.
    pub fn from_branches(name: impl Into<String>, branches: Vec<Branch>) -> Result<Self> {
        for (j, b) in branches.iter().enumerate() {
            check_branch(j, b)?;
        }
        Ok(IntervalMap::new(name, Arc::new(branches)))
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.push((key.to_string(), value));
        self
    }

    pub fn with_acip(mut self, acip: Acip) -> Self {
        self.acip = Some(acip);
        self
    }

    pub fn with_exact(mut self, pieces: Vec<AffinePiece>) -> Self {
        self.exact = Some(Arc::new(pieces));
        self
    }

    pub fn family(&self) -> &dyn BranchFamily {
        self.family.as_ref()
    }

    pub fn acip(&self) -> Option<&Acip> {
        self.acip.as_ref()
    }

    pub fn exact_pieces(&self) -> Option<&[AffinePiece]> {
        self.exact.as_deref().map(|v| v.as_slice())
    }

    pub fn branch_count(&self) -> BranchCount {
        self.family.count()
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// `(f(x), branch)`.
    pub fn evaluate(&self, x: f64) -> Result<(f64, usize)> {
        self.step(x, 0)
    }

    fn step(&self, x: f64, iterate: usize) -> Result<(f64, usize)> {
        if !(0.0..=1.0).contains(&x) || x.is_nan() {
            return Err(OdxError::OutOfDomain(x));
        }
        let j = self
            .family
            .locate(x)
            .ok_or(OdxError::BoundaryPoint { x, iterate })?;
        Ok((self.family.forward(j, x), j))
    }

    /// `f^n(x)`.
    pub fn iterate(&self, x: f64, n: usize) -> Result<f64> {
        let mut y = x;
        for i in 0..n {
            y = self.step(y, i)?.0;
        }
        Ok(y)
    }

    /// Orbit `x, f x, ..., f^n x` together with the branch itinerary of the
    /// first `n` points.
    pub fn orbit(&self, x: f64, n: usize) -> Result<(Vec<f64>, Vec<usize>)> {
        let mut pts = Vec::with_capacity(n + 1);
        let mut itin = Vec::with_capacity(n);
        let mut y = x;
        pts.push(y);
        for i in 0..n {
            let (z, j) = self.step(y, i)?;
            itin.push(j);
            y = z;
            pts.push(y);
        }
        Ok((pts, itin))
    }

    /// Birkhoff sum `S_n φ(x) = Σ_{i<n} φ(f^i x)`.
    pub fn birkhoff_sum(&self, pot: &Potential, x: f64, n: usize) -> Result<f64> {
        let mut y = x;
        let mut s = 0.0;
        for i in 0..n {
            let (z, j) = self.step(y, i)?;
            s += pot.eval(self, j, y);
            y = z;
        }
        Ok(s)
    }

    /// `e^{S_n φ(x)}` accumulated as a product of `e^{φ}` factors.
    pub fn weight_product(&self, pot: &Potential, x: f64, n: usize) -> Result<f64> {
        let mut y = x;
        let mut w = 1.0;
        for i in 0..n {
            let (z, j) = self.step(y, i)?;
            w *= pot.eval(self, j, y).exp();
            y = z;
        }
        Ok(w)
    }

    /// Lebesgue mass of the branch domains actually represented.
    pub fn represented_mass(&self) -> f64 {
        match self.family.count() {
            BranchCount::Finite(n) => (0..n)
                .map(|j| {
                    let (a, b) = self.family.domain(j);
                    b - a
                })
                .sum(),
            BranchCount::Truncated { omitted_mass, .. } => 1.0 - omitted_mass,
        }
    }
}

fn check_branch(j: usize, b: &Branch) -> Result<()> {
    let (a, c) = b.domain;
    if !(a < c) || a < 0.0 || c > 1.0 {
        return Err(OdxError::NonMonotoneBranch(j));
    }
    const SAMPLES: usize = 10_000;
    let xs: Vec<f64> = (1..SAMPLES)
        .map(|i| a + (c - a) * i as f64 / SAMPLES as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| (b.forward)(x)).collect();
    let up = ys[ys.len() - 1] > ys[0];
    let monotone = ys
        .windows(2)
        .all(|w| if up { w[1] > w[0] } else { w[1] < w[0] });
    let positive = xs.iter().all(|&x| (b.derivative)(x) > 0.0);
    if !monotone || !positive {
        return Err(OdxError::NonMonotoneBranch(j));
    }
    if let Some(inv) = &b.inverse {
        for (&x, &y) in xs.iter().zip(&ys).step_by(10) {
            if (inv(y) - x).abs() > 1e-12 {
                return Err(OdxError::NonMonotoneBranch(j));
            }
        }
    }
    Ok(())
}
