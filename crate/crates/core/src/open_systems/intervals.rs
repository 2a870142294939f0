use crate::error::{OdxError, Result};
use crate::interval_maps::{Acip, BranchCount, IntervalMap};

/// Finite union of disjoint intervals, kept sorted. Endpoint closedness is
/// not tracked; only measures and inclusions are computed.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalSet {
    pub intervals: Vec<(f64, f64)>,
    /// Expression that generated the set, e.g. `f^-2(U)`.
    pub provenance: String,
    /// Upper bound on the Lebesgue mass dropped by branch truncation.
    pub omitted_mass: f64,
}

impl IntervalSet {
    pub fn new(intervals: Vec<(f64, f64)>, provenance: impl Into<String>) -> Self {
        let mut s = IntervalSet {
            intervals,
            provenance: provenance.into(),
            omitted_mass: 0.0,
        };
        s.normalize();
        s
    }

    pub fn single(a: f64, b: f64, provenance: impl Into<String>) -> Self {
        IntervalSet::new(vec![(a, b)], provenance)
    }

    pub fn empty() -> Self {
        IntervalSet::new(Vec::new(), "∅")
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    fn normalize(&mut self) {
        self.intervals.retain(|&(a, b)| b > a);
        self.intervals.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(self.intervals.len());
        for &(a, b) in &self.intervals {
            match out.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        self.intervals = out;
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    /// Measure against an invariant density.
    pub fn measure_with(&self, acip: Option<&Acip>) -> f64 {
        match acip {
            None | Some(Acip::Lebesgue) => self.measure(),
            Some(d) => self.intervals.iter().map(|&(a, b)| d.measure(a, b)).sum(),
        }
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        let mut v = self.intervals.clone();
        v.extend_from_slice(&other.intervals);
        let mut s = IntervalSet::new(v, format!("{} ∪ {}", self.provenance, other.provenance));
        s.omitted_mass = self.omitted_mass + other.omitted_mass;
        s
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.len() && j < other.len() {
            let (a, b) = self.intervals[i];
            let (c, d) = other.intervals[j];
            let lo = a.max(c);
            let hi = b.min(d);
            if hi > lo {
                out.push((lo, hi));
            }
            if b < d {
                i += 1;
            } else {
                j += 1;
            }
        }
        let mut s = IntervalSet::new(out, format!("{} ∩ {}", self.provenance, other.provenance));
        s.omitted_mass = self.omitted_mass.min(other.omitted_mass);
        s
    }

    /// Complement within `[0, 1]`.
    pub fn complement(&self) -> IntervalSet {
        let mut out = Vec::new();
        let mut cur = 0.0;
        for &(a, b) in &self.intervals {
            if a > cur {
                out.push((cur, a));
            }
            cur = cur.max(b);
        }
        if cur < 1.0 {
            out.push((cur, 1.0));
        }
        let mut s = IntervalSet::new(out, format!("[0,1] \\ {}", self.provenance));
        s.omitted_mass = self.omitted_mass;
        s
    }

    pub fn difference(&self, other: &IntervalSet) -> IntervalSet {
        let mut s = self.intersect(&other.complement());
        s.provenance = format!("{} \\ {}", self.provenance, other.provenance);
        s
    }

    /// `self ⊂ other` up to Lebesgue mass `tol`.
    pub fn subset_of(&self, other: &IntervalSet, tol: f64) -> bool {
        self.difference(other).measure() <= tol
    }
}

/// `f^{-n}(S)` through the inverse branches. Countable families are
/// enumerated up to the branch count allowed by `budget`; the dropped mass
/// is recorded in `omitted_mass`.
pub fn preimage_set(map: &IntervalMap, s: &IntervalSet, n: usize, budget: usize) -> Result<IntervalSet> {
    let fam = map.family();
    let branches: Vec<usize> = match fam.count() {
        BranchCount::Finite(k) => (0..k).collect(),
        BranchCount::Truncated { depth, .. } => (1..=depth.min(budget)).collect(),
    };
    let tail_mass = match fam.count() {
        BranchCount::Finite(_) => 0.0,
        BranchCount::Truncated { .. } => {
            let last = *branches.last().unwrap_or(&0);
            (1..=last).map(|j| fam.domain(j).0).fold(1.0, f64::min)
        }
    };
    let images: Vec<(usize, f64, f64)> = branches
        .iter()
        .map(|&j| {
            let (a, b) = fam.domain(j);
            let (u, v) = (fam.forward(j, a), fam.forward(j, b));
            (j, u.min(v), u.max(v))
        })
        .collect();
    let mut cur = s.clone();
    for step in 0..n {
        let mut out = Vec::new();
        for &(a, b) in &cur.intervals {
            for &(j, ilo, ihi) in &images {
                let lo = a.max(ilo);
                let hi = b.min(ihi);
                if hi <= lo {
                    continue;
                }
                let x0 = fam
                    .inverse(j, lo)
                    .ok_or_else(|| OdxError::NoExactInverse(map.name.clone()))?;
                let x1 = fam
                    .inverse(j, hi)
                    .ok_or_else(|| OdxError::NoExactInverse(map.name.clone()))?;
                out.push((x0.min(x1), x0.max(x1)));
                if out.len() > budget {
                    return Err(OdxError::BudgetExceeded(budget));
                }
            }
        }
        let omitted = cur.omitted_mass + tail_mass;
        cur = IntervalSet::new(out, format!("f^-{}({})", step + 1, s.provenance));
        cur.omitted_mass = omitted;
    }
    Ok(cur)
}
