use num_rational::BigRational;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::error::{OdxError, Result};
use crate::interval_maps::{Acip, AffinePiece};

/// Sorted disjoint rational intervals.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct RationalSet(Vec<(BigRational, BigRational)>);

impl RationalSet {
    pub(crate) fn new(mut v: Vec<(BigRational, BigRational)>) -> Self {
        v.retain(|(a, b)| b > a);
        v.sort_by(|p, q| p.0.cmp(&q.0));
        let mut out: Vec<(BigRational, BigRational)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match out.last_mut() {
                Some(last) if a <= last.1 => {
                    if b > last.1 {
                        last.1 = b;
                    }
                }
                _ => out.push((a, b)),
            }
        }
        RationalSet(out)
    }

    pub(crate) fn union(&self, other: &RationalSet) -> RationalSet {
        let (mut i, mut j) = (0, 0);
        let mut out: Vec<(BigRational, BigRational)> = Vec::with_capacity(self.0.len() + other.0.len());
        while i < self.0.len() || j < other.0.len() {
            let next = if j == other.0.len() || (i < self.0.len() && self.0[i].0 <= other.0[j].0) {
                i += 1;
                &self.0[i - 1]
            } else {
                j += 1;
                &other.0[j - 1]
            };
            match out.last_mut() {
                Some(last) if next.0 <= last.1 => {
                    if next.1 > last.1 {
                        last.1 = next.1.clone();
                    }
                }
                _ => out.push(next.clone()),
            }
        }
        RationalSet(out)
    }

    pub(crate) fn intersect(&self, other: &RationalSet) -> RationalSet {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.0.len() && j < other.0.len() {
            let (a, b) = &self.0[i];
            let (c, d) = &other.0[j];
            let lo = a.max(c);
            let hi = b.min(d);
            if hi > lo {
                out.push((lo.clone(), hi.clone()));
            }
            if b < d {
                i += 1;
            } else {
                j += 1;
            }
        }
        RationalSet(out)
    }

    /// `self ⊂ other`, exactly. Both sets are merged, so each interval of
    /// `self` must sit inside a single interval of `other`.
    pub(crate) fn subset_of(&self, other: &RationalSet) -> bool {
        let mut j = 0;
        for (a, b) in &self.0 {
            while j < other.0.len() && &other.0[j].1 < b {
                j += 1;
            }
            match other.0.get(j) {
                Some((c, _)) if c <= a => {}
                _ => return false,
            }
        }
        true
    }

    /// Summed over a common denominator; adding rationals one by one
    /// spends most of its time in gcds.
    pub(crate) fn lebesgue(&self) -> BigRational {
        let mut den = BigInt::one();
        for (a, b) in &self.0 {
            for x in [a, b] {
                if !(&den % x.denom()).is_zero() {
                    den = den.lcm(x.denom());
                }
            }
        }
        let num = self.0.iter().fold(BigInt::zero(), |s, (a, b)| {
            s + b.numer() * (&den / b.denom()) - a.numer() * (&den / a.denom())
        });
        BigRational::new(num, den)
    }

    /// Exact for Lebesgue, otherwise the density is integrated over the
    /// rounded endpoints.
    pub(crate) fn measure_with(&self, acip: Option<&Acip>) -> f64 {
        match acip {
            None | Some(Acip::Lebesgue) => crate::interval_maps::rational_to_f64(&self.lebesgue()),
            Some(d) => {
                let f = crate::interval_maps::rational_to_f64;
                self.0.iter().map(|(a, b)| d.measure(f(a), f(b))).sum()
            }
        }
    }

    /// `f^{-n}` through the affine pieces.
    pub(crate) fn preimage(&self, pieces: &[AffinePiece], n: usize, budget: usize) -> Result<RationalSet> {
        let images: Vec<(BigRational, BigRational)> = pieces
            .iter()
            .map(|p| {
                let (u, v) = (p.apply(&p.lo), p.apply(&p.hi));
                if u <= v { (u, v) } else { (v, u) }
            })
            .collect();
        let mut cur = self.clone();
        for _ in 0..n {
            // one run per piece, so the merge in `new` sees sorted runs
            let mut runs: Vec<Vec<(BigRational, BigRational)>> = vec![Vec::new(); pieces.len()];
            let mut count = 0;
            for (p, ((ilo, ihi), run)) in pieces.iter().zip(images.iter().zip(runs.iter_mut())) {
                for (a, b) in &cur.0 {
                    let lo = a.max(ilo);
                    let hi = b.min(ihi);
                    if hi <= lo {
                        continue;
                    }
                    let x0 = (lo - &p.offset) / &p.slope;
                    let x1 = (hi - &p.offset) / &p.slope;
                    run.push(if p.slope.is_negative() { (x1, x0) } else { (x0, x1) });
                    count += 1;
                    if count > budget {
                        return Err(OdxError::BudgetExceeded(budget));
                    }
                }
                if p.slope.is_negative() {
                    run.reverse();
                }
            }
            cur = RationalSet::new(runs.concat());
        }
        Ok(cur)
    }
}
