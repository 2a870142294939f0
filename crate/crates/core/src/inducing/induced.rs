use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{OdxError, Result};
use crate::hitting_stats::dithered_step;
use crate::interval_maps::{lsv, lsv_preimage_sequence, Acip, IntervalMap};
use crate::open_systems::Hole;
use crate::transfer::{build_ulam, power_leading, puncture, Partition};

use super::farey::{build_farey, TailSpec};

/// Default unresolved-mass budget, relative to `μ(Y)`.
pub const DEFAULT_UNRESOLVED_TOL: f64 = 1e-6;

const PIECE_BUDGET: usize = 2_000_000;

/// One cylinder of `Y` on which the first return time is constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReturnBranch {
    pub lo: f64,
    pub hi: f64,
    pub r: usize,
    /// `μ_Y` of the cylinder.
    pub mass: f64,
}

/// `F = f^R` on `Y = [lo, hi]`, with `μ_Y` the normalised restriction of
/// the invariant measure.
#[derive(Clone)]
pub struct InducedMap {
    map: IntervalMap,
    density: Acip,
    pub base: (f64, f64),
    /// Sorted by position.
    pub branches: Vec<ReturnBranch>,
    pub mu_base: f64,
    /// `μ_Y` of the points whose return was not resolved within `depth`.
    pub unresolved: f64,
    pub depth: usize,
    /// `tail[u] = μ_Y(R ≥ u)` for `u = 0..=depth+1`.
    pub tail: Vec<f64>,
}

impl InducedMap {
    fn assemble(
        map: IntervalMap,
        density: Acip,
        base: (f64, f64),
        mut branches: Vec<ReturnBranch>,
        unresolved: f64,
        depth: usize,
    ) -> Self {
        branches.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mu_base = density.measure(base.0, base.1);
        let mut by_r = vec![0.0; depth + 2];
        for b in &branches {
            by_r[b.r.min(depth + 1)] += b.mass;
        }
        let mut tail = vec![0.0; depth + 2];
        let mut acc = unresolved;
        for u in (0..=depth + 1).rev() {
            acc += by_r[u];
            tail[u] = acc;
        }
        InducedMap { map, density, base, branches, mu_base, unresolved, depth, tail }
    }

    pub fn map(&self) -> &IntervalMap {
        &self.map
    }

    /// The invariant density used for `μ_Y` (closed form, or Ulam when the
    /// map has none).
    pub fn density(&self) -> &Acip {
        &self.density
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.base.0 && x <= self.base.1
    }

    pub fn branch_at(&self, y: f64) -> Option<&ReturnBranch> {
        let i = self.branches.partition_point(|b| b.hi <= y);
        self.branches.get(i).filter(|b| b.lo <= y && y < b.hi || (y == b.hi && y == self.base.1))
    }

    /// `μ_Y(R ≥ u)`; `None` beyond the resolved depth.
    pub fn tail_at(&self, u: usize) -> Option<f64> {
        self.tail.get(u).copied()
    }

    /// `(Σ k μ_Y(R = k), 1/μ(Y))`. The first is a lower bound when mass is
    /// unresolved.
    pub fn kac(&self) -> (f64, f64) {
        let mean = self.branches.iter().map(|b| b.r as f64 * b.mass).sum();
        (mean, 1.0 / self.mu_base)
    }

    /// `Σ μ_Y(R = k) + unresolved`, which should be one.
    pub fn total_mass(&self) -> f64 {
        self.branches.iter().map(|b| b.mass).sum::<f64>() + self.unresolved
    }

    /// A point of `Y` drawn from `μ_Y`.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (a, b) = (self.density.cdf(self.base.0), self.density.cdf(self.base.1));
        let u = a + (b - a) * rng.random::<f64>();
        self.density.quantile(u).clamp(self.base.0, self.base.1)
    }

    /// Iterates `f` (with reflected dither) until the orbit is back in `Y`.
    pub fn return_orbit(&self, y: f64, cap: usize, dither: f64, rng: &mut ChaCha8Rng) -> Excursion {
        let fam = self.map.family();
        let mut x = y;
        for k in 1..=cap {
            x = match dithered_step(fam, x, dither, rng) {
                Some(z) => z,
                None => return Excursion::Boundary,
            };
            if self.contains(x) {
                return Excursion::Return(k, x);
            }
        }
        Excursion::Capped
    }

    pub fn write_tail_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "u,mu_R_ge_u")?;
        for (u, v) in self.tail.iter().enumerate().skip(1) {
            writeln!(w, "{u},{v:e}")?;
        }
        Ok(())
    }
}

impl std::fmt::Debug for InducedMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InducedMap")
            .field("map", &self.map)
            .field("base", &self.base)
            .field("branches", &self.branches.len())
            .field("mu_base", &self.mu_base)
            .field("unresolved", &self.unresolved)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Excursion {
    /// Return time and landing point.
    Return(usize, f64),
    Boundary,
    Capped,
}

/// The closed-form invariant density, or a 4096-cell Ulam density.
pub fn invariant_density(map: &IntervalMap) -> Result<Acip> {
    if let Some(a) = map.acip() {
        return Ok(a.clone());
    }
    let part = Partition::uniform(4096);
    let op = build_ulam(map, &part)?;
    let s = power_leading(&puncture(&op, None), 1e-13, 500_000)?;
    let w = part.widths();
    let values: Vec<f64> = s.masses(&w).iter().zip(&w).map(|(m, w)| m.max(0.0) / w).collect();
    Acip::piecewise_constant(part.boundaries.clone(), values)
}

struct Piece {
    /// Endpoints in `Y`, matched with `img` endpoint by endpoint.
    ends: (f64, f64),
    img: (f64, f64),
    itin: Vec<usize>,
}

/// First-return map to `Y = [base.0, base.1]`, resolving cylinders to
/// return time `depth_max`.
pub fn first_return_map(map: &IntervalMap, base: (f64, f64), depth_max: usize) -> Result<InducedMap> {
    first_return_map_with(map, base, depth_max, DEFAULT_UNRESOLVED_TOL)
}

pub fn first_return_map_with(map: &IntervalMap, base: (f64, f64), depth_max: usize, tol: f64) -> Result<InducedMap> {
    let (ylo, yhi) = base;
    if !(0.0 <= ylo && ylo < yhi && yhi <= 1.0) {
        return Err(OdxError::ConfigInvalid(format!("bad base interval {base:?}")));
    }
    let density = invariant_density(map)?;
    let mu_y = density.measure(ylo, yhi);
    if !(mu_y > 0.0) {
        return Err(OdxError::Degenerate("base has zero invariant mass".into()));
    }
    let fam = map.family();
    let pull = |itin: &[usize], c: f64| -> Result<f64> {
        let mut x = c;
        for &j in itin.iter().rev() {
            x = fam
                .inverse(j, x)
                .ok_or_else(|| OdxError::NoExactInverse(format!("branch {j} of `{}`", map.name)))?;
        }
        Ok(x)
    };
    let mut active = vec![Piece { ends: (ylo, yhi), img: (ylo, yhi), itin: Vec::new() }];
    let mut branches = Vec::new();
    for k in 1..=depth_max {
        let mut next = Vec::new();
        for p in &active {
            let (a, b) = (p.img.0.min(p.img.1), p.img.0.max(p.img.1));
            for j in fam.branches_meeting(a, b, usize::MAX) {
                let (da, db) = fam.domain(j);
                let (sa, sb) = (a.max(da), b.min(db));
                if sb <= sa {
                    continue;
                }
                let mut itin = p.itin.clone();
                itin.push(j);
                let (fa, fb) = (fam.forward(j, sa), fam.forward(j, sb));
                let (lo, hi) = (fa.min(fb), fa.max(fb));
                // split the image at the ends of Y
                let cuts = [(lo, hi.min(ylo)), (lo.max(ylo), hi.min(yhi)), (lo.max(yhi), hi)];
                for (ci, &(c0, c1)) in cuts.iter().enumerate() {
                    if c1 <= c0 {
                        continue;
                    }
                    if ci == 1 {
                        let (e0, e1) = (pull(&itin, c0)?, pull(&itin, c1)?);
                        let (lo, hi) = (e0.min(e1), e0.max(e1));
                        branches.push(ReturnBranch { lo, hi, r: k, mass: density.measure(lo, hi) / mu_y });
                    } else {
                        next.push(Piece { ends: (pull(&itin, c0)?, pull(&itin, c1)?), img: (c0, c1), itin: itin.clone() });
                    }
                }
            }
        }
        active = next;
        if active.len() > PIECE_BUDGET {
            return Err(OdxError::BudgetExceeded(active.len()));
        }
        if active.is_empty() {
            break;
        }
    }
    let unresolved: f64 = active
        .iter()
        .map(|p| density.measure(p.ends.0.min(p.ends.1), p.ends.0.max(p.ends.1)) / mu_y)
        .sum();
    if unresolved > tol {
        return Err(OdxError::UnresolvedMassExceeds(unresolved));
    }
    Ok(InducedMap::assemble(map.clone(), density, base, branches, unresolved, depth_max))
}

/// The generalised Farey map induced on `Y = A₁`: `R = n` on
/// `[1 − a₁t_n, 1 − a₁t_{n+1})`, of `μ_Y`-mass `a_n`.
pub fn farey_induced(spec: &TailSpec) -> Result<InducedMap> {
    let map = build_farey(spec)?;
    let t = spec.sequence()?;
    let d = spec.depth;
    let a1 = t[1] - t[2];
    let branches = (1..=d)
        .map(|n| ReturnBranch { lo: 1.0 - a1 * t[n], hi: 1.0 - a1 * t[n + 1], r: n, mass: t[n] - t[n + 1] })
        .collect();
    let density = map.acip().cloned().expect("farey map carries its density");
    Ok(InducedMap::assemble(map, density, (t[2], 1.0), branches, t[d + 1], d))
}

/// LSV induced on `Y = [1/2, 1]`: `R = k + 1` on the right-branch preimage
/// of `J_k = [x_k, x_{k−1})`, where `x_k` are the left-branch preimages of
/// `1/2`.
pub fn lsv_induced(gamma: f64, depth: usize) -> Result<InducedMap> {
    let map = lsv(gamma)?;
    let density = invariant_density(&map)?;
    let x = lsv_preimage_sequence(gamma, depth);
    let mu_y = density.measure(0.5, 1.0);
    let mut branches = vec![ReturnBranch { lo: 0.75, hi: 1.0, r: 1, mass: density.measure(0.75, 1.0) / mu_y }];
    for k in 1..depth {
        let (lo, hi) = ((x[k] + 1.0) / 2.0, (x[k - 1] + 1.0) / 2.0);
        branches.push(ReturnBranch { lo, hi, r: k + 1, mass: density.measure(lo, hi) / mu_y });
    }
    let unresolved = density.measure(0.5, (x[depth - 1] + 1.0) / 2.0) / mu_y;
    Ok(InducedMap::assemble(map, density, (0.5, 1.0), branches, unresolved, depth))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum InducedHit {
    /// `τ_{Y,r}` and the matching `f`-time `Σ_{i<τ_{Y,r}} R(F^i y)`.
    Hit { tau_y: usize, f_time: usize },
    Censored { horizon: usize, f_time: usize },
}

/// First `u ≥ 1` with `F^u(y) ∈ U`. `F` is evaluated along the `f`-orbit,
/// with the return time of each step read from the branch table and
/// checked against the orbit. `noise` adds reflected dither to each `f`
/// step.
pub fn induced_hitting(
    induced: &InducedMap,
    hole: &Hole,
    y: f64,
    horizon: usize,
    mut noise: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<InducedHit> {
    let (a, b) = hole.bounds();
    if a < induced.base.0 || b > induced.base.1 {
        return Err(OdxError::ConfigInvalid("hole must lie inside the base".into()));
    }
    let fam = induced.map.family();
    let mut x = y;
    let mut f_time = 0;
    for u in 1..=horizon {
        let br = induced.branch_at(x).ok_or(OdxError::UnresolvedBranchHit(u - 1))?;
        let r = br.r;
        for i in 0..r {
            x = match noise.as_mut() {
                Some((rng, d)) => dithered_step(fam, x, *d, rng),
                None => fam.locate(x).map(|j| fam.forward(j, x)),
            }
            .ok_or(OdxError::BoundaryPoint { x, iterate: f_time + i })?;
            if i + 1 < r && induced.contains(x) {
                // the orbit came back early: the table disagrees with f
                return Err(OdxError::UnresolvedBranchHit(u - 1));
            }
        }
        f_time += r;
        if hole.contains(x) {
            return Ok(InducedHit::Hit { tau_y: u, f_time });
        }
    }
    Ok(InducedHit::Censored { horizon, f_time })
}

/// Rokhlin tower levels `μ_Δ(Δ_ℓ) = μ_Y(R > ℓ) μ(Y)`.
#[derive(Clone, Debug, Serialize)]
pub struct TowerProfile {
    pub levels: Vec<f64>,
    /// `c = μ(Y) = 1/E_{μ_Y}[R]`.
    pub normalization: f64,
    /// Mass above the resolved levels.
    pub truncation: f64,
}

impl TowerProfile {
    /// `μ(π(Δ^{(n)}))`, the mass of the first `n` levels.
    pub fn exhaustion(&self, n: usize) -> f64 {
        self.levels.iter().take(n).sum()
    }
}

pub fn tower_profile(induced: &InducedMap) -> TowerProfile {
    let c = induced.mu_base;
    let levels: Vec<f64> = (0..=induced.depth).map(|l| c * induced.tail[l + 1]).collect();
    let truncation = 1.0 - levels.iter().sum::<f64>();
    TowerProfile { levels, normalization: c, truncation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inducing::TailClass;
    use crate::interval_maps::doubling;
    use rand::SeedableRng;

    #[test]
    fn doubling_return_law_is_geometric() {
        let ind = first_return_map(&doubling(), (0.5, 1.0), 40).unwrap();
        for k in 1..=30 {
            let m: f64 = ind.branches.iter().filter(|b| b.r == k).map(|b| b.mass).sum();
            assert!((m - 0.5f64.powi(k as i32)).abs() < 1e-15, "k={k}: {m}");
        }
        assert!((ind.total_mass() - 1.0).abs() < 1e-14);
        let (kac, inv) = ind.kac();
        assert!((kac - inv).abs() < 1e-9 && (inv - 2.0).abs() < 1e-15);
        assert!(ind.tail.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn generic_refinement_matches_farey_bookkeeping() {
        let spec = TailSpec { class: TailClass::Exponential { theta: 0.6 }, depth: 60 };
        let exact = farey_induced(&spec).unwrap();
        let t = spec.sequence().unwrap();
        for u in 2..40 {
            assert!((exact.tail[u] - t[u]).abs() < 1e-12);
        }
        let generic = first_return_map_with(exact.map(), exact.base, 60, 1e-6).unwrap();
        for u in 1..40 {
            assert!((generic.tail[u] - exact.tail[u]).abs() < 1e-10, "u={u}");
        }
    }

    #[test]
    fn lsv_table_agrees_with_refinement() {
        let a = lsv_induced(0.5, 400).unwrap();
        let b = first_return_map_with(a.map(), (0.5, 1.0), 400, 1e-4).unwrap();
        for u in [1, 2, 5, 20, 100, 300] {
            assert!((a.tail[u] - b.tail[u]).abs() < 1e-9 * a.tail[u].max(1e-3), "u={u}");
        }
        let (kac, inv) = a.kac();
        assert!((kac - inv).abs() / inv < 0.02, "{kac} vs {inv}");
    }

    #[test]
    fn unresolved_mass_is_enforced() {
        let err = first_return_map(&doubling(), (0.5, 1.0), 10).unwrap_err();
        assert!(matches!(err, OdxError::UnresolvedMassExceeds(_)));
    }

    #[test]
    fn tower_levels_follow_tail() {
        let ind = first_return_map(&doubling(), (0.5, 1.0), 50).unwrap();
        let tw = tower_profile(&ind);
        for l in 0..20 {
            assert!((tw.levels[l] - 0.5f64.powi(l as i32 + 1)).abs() < 1e-15);
        }
        assert!(tw.truncation.abs() < 1e-12);
        let f = farey_induced(&TailSpec { class: TailClass::Exponential { theta: 0.5 }, depth: 50 }).unwrap();
        let tf = tower_profile(&f);
        for l in 0..20 {
            assert!((tf.levels[l] - 0.5 * 0.5f64.powi(l as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn induced_hitting_walks_the_orbit() {
        let ind = first_return_map(&doubling(), (0.5, 1.0), 50).unwrap();
        let hole = Hole::new(0.7, 0.1, crate::open_systems::HoleShape::OneSided);
        // 0.75 -> 0.5 (R = 1) -> 0 ... never returns without noise
        match induced_hitting(&ind, &hole, 0.75, 5, None) {
            Err(OdxError::UnresolvedBranchHit(_)) => {}
            other => panic!("{other:?}"),
        }
        // 0.9 -> 0.8 (R = 1, not in [0.7, 0.8)) -> 0.6 -> 0.2, 0.4, 0.8 (R = 3)
        let r = induced_hitting(&ind, &hole, 0.9, 3, None).unwrap();
        assert_eq!(r, InducedHit::Censored { horizon: 3, f_time: 5 });
        let r = induced_hitting(&ind, &hole, 0.875, 3, None).unwrap();
        // 0.875 -> 0.75 hit
        assert_eq!(r, InducedHit::Hit { tau_y: 1, f_time: 1 });
    }

    #[test]
    fn induced_and_direct_hitting_times_agree() {
        let ind = first_return_map(&doubling(), (0.5, 1.0), 60).unwrap();
        let hole = Hole::symmetric(0.75, 0.02);
        let map = doubling();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..10_000u64 {
            let y = ind.sample(&mut rng);
            let mut r1 = ChaCha8Rng::seed_from_u64(i);
            let mut r2 = r1.clone();
            let ih = induced_hitting(&ind, &hole, y, 10_000, Some((&mut r1, 1e-12))).unwrap();
            let mut x = y;
            let mut n = 0;
            let direct = loop {
                n += 1;
                x = dithered_step(map.family(), x, 1e-12, &mut r2).unwrap();
                if hole.contains(x) {
                    break n;
                }
            };
            match ih {
                InducedHit::Hit { f_time, .. } => assert_eq!(f_time, direct),
                InducedHit::Censored { .. } => panic!("censored"),
            }
        }
    }
}
