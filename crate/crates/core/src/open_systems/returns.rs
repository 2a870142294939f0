use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::exact_sets::RationalSet;
use super::{preimage_set, Hole, IntervalSet};
use crate::error::{OdxError, Result};
use crate::interval_maps::{rational_from_f64, IntervalMap, Potential};
use crate::numeric::wilson;

const NEST_TOL: f64 = 1e-15;

#[derive(Clone, Debug, Serialize)]
pub struct UnionMeasure {
    /// `μ(∪_{i≤k} f^{-ip} U)` from interval arithmetic.
    pub exact: f64,
    /// `μ(U)(k + 1 − k e^{S_pφ(z)})`.
    pub prediction: f64,
    pub weight: f64,
    pub mu_u: f64,
    pub diameter: f64,
    pub k: usize,
}

/// Measure of the union of the first `k` period-`p` preimages of `hole`,
/// after checking that `U ∩ f^{-ip}U` decreases in `i`. Maps with exact
/// affine pieces are handled in rational arithmetic, since the roundoff of
/// float preimages grows with the number of pieces.
pub fn union_measure_periodic(
    map: &IntervalMap,
    hole: &Hole,
    p: usize,
    k: usize,
    budget: usize,
) -> Result<UnionMeasure> {
    let mut all = union_measures_periodic(map, hole, p, k, budget)?;
    Ok(all.pop().expect("k ≥ 1"))
}

/// [`union_measure_periodic`] for every `k = 1..=k_max` in one pass.
pub fn union_measures_periodic(
    map: &IntervalMap,
    hole: &Hole,
    p: usize,
    k_max: usize,
    budget: usize,
) -> Result<Vec<UnionMeasure>> {
    if k_max == 0 {
        return Err(OdxError::ConfigInvalid("k must be ≥ 1".into()));
    }
    if p == 0 {
        return Err(OdxError::ConfigInvalid("period must be ≥ 1".into()));
    }
    let acip = map.acip();
    let nesting = |i: usize| {
        OdxError::HypothesisFailed(format!("U ∩ f^-{}(U) is not contained in U ∩ f^-{}(U)", i * p, (i - 1) * p))
    };
    let u = hole.as_set();
    let mut unions = Vec::with_capacity(k_max);
    match map.exact_pieces() {
        Some(pieces) => {
            let (a, b) = hole.bounds();
            let q = |x: f64| rational_from_f64(x).ok_or(OdxError::OutOfDomain(x));
            let ue = RationalSet::new(vec![(q(a)?, q(b)?)]);
            let (mut union, mut pre, mut prev_cap) = (ue.clone(), ue.clone(), ue.clone());
            for i in 1..=k_max {
                pre = pre.preimage(pieces, p, budget)?;
                let cap = ue.intersect(&pre);
                if !cap.subset_of(&prev_cap) {
                    return Err(nesting(i));
                }
                prev_cap = cap;
                union = union.union(&pre);
                unions.push(union.measure_with(acip));
            }
        }
        None => {
            let (mut union, mut pre, mut prev_cap) = (u.clone(), u.clone(), u.clone());
            for i in 1..=k_max {
                pre = preimage_set(map, &pre, p, budget)?;
                let cap = u.intersect(&pre);
                if !cap.subset_of(&prev_cap, NEST_TOL) {
                    return Err(nesting(i));
                }
                prev_cap = cap;
                union = union.union(&pre);
                unions.push(union.measure_with(acip));
            }
        }
    }
    let weight = map.weight_product(&Potential::Geometric, hole.centre, p)?;
    let mu_u = u.measure_with(acip);
    Ok(unions
        .into_iter()
        .enumerate()
        .map(|(i, exact)| UnionMeasure {
            exact,
            prediction: mu_u * ((i + 2) as f64 - (i + 1) as f64 * weight),
            weight,
            mu_u,
            diameter: hole.diameter(),
            k: i + 1,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QMode {
    Exact { budget: usize },
    MonteCarlo { samples: u64, seed: u64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct QEstimate {
    pub q: f64,
    pub ci: Option<(f64, f64)>,
}

/// `q_k = μ(E^k)/μ(U)` with
/// `E^k = {x ∈ U : f^i x ∉ U for 1 ≤ i ≤ k, f^{k+1}x ∈ U}`.
pub fn return_ratio_q(map: &IntervalMap, hole: &Hole, k: usize, mode: QMode) -> Result<QEstimate> {
    match mode {
        QMode::Exact { budget } => {
            let u = hole.as_set();
            // W_j: points outside U whose first entry to U is at time j
            let mut w = u.clone();
            for _ in 0..k {
                w = preimage_set(map, &w, 1, budget)?.difference(&u);
            }
            let e: IntervalSet = u.intersect(&preimage_set(map, &w, 1, budget)?);
            let acip = map.acip();
            Ok(QEstimate {
                q: e.measure_with(acip) / u.measure_with(acip),
                ci: None,
            })
        }
        QMode::MonteCarlo { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = hole.bounds();
            let (ca, cb) = match map.acip() {
                Some(d) => (d.cdf(a), d.cdf(b)),
                None => (a, b),
            };
            let mut hits = 0u64;
            let mut used = 0u64;
            for _ in 0..samples {
                let v = ca + (cb - ca) * rng.random::<f64>();
                let x = match map.acip() {
                    Some(d) => d.quantile(v),
                    None => v,
                };
                if !hole.contains(x) {
                    continue;
                }
                let Ok((orb, _)) = map.orbit(x, k + 1) else { continue };
                used += 1;
                if orb[1..=k].iter().all(|&y| !hole.contains(y)) && hole.contains(orb[k + 1]) {
                    hits += 1;
                }
            }
            if used == 0 {
                return Err(OdxError::Degenerate("no usable samples in the hole".into()));
            }
            Ok(QEstimate {
                q: hits as f64 / used as f64,
                ci: Some(wilson(hits, used)),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::doubling;

    #[test]
    fn union_examples() {
        let d = doubling();
        let r = 1e-3;
        let u = Hole::one_sided(0.0, r);
        let m1 = union_measure_periodic(&d, &u, 1, 1, 1 << 20).unwrap();
        assert!((m1.exact - 1.5 * r).abs() < 1e-15);
        let m9 = union_measure_periodic(&d, &u, 1, 9, 1 << 20).unwrap();
        assert!((m9.exact - 5.5 * r).abs() < 1e-14);
        assert!((m9.prediction - 5.5 * r).abs() < 1e-14);

        let v = Hole::symmetric(1.0 / 3.0, r);
        let m = union_measure_periodic(&d, &v, 2, 1, 1 << 20).unwrap();
        assert!((m.exact - 3.5 * r).abs() < 1e-12, "{}", m.exact);
    }

    #[test]
    fn nesting_failure_reported() {
        // a big hole around a non-periodic point: preimages spill out of U
        let d = doubling();
        let u = Hole::symmetric(0.3, 0.2);
        assert!(matches!(
            union_measure_periodic(&d, &u, 1, 3, 1 << 16),
            Err(OdxError::HypothesisFailed(_))
        ));
    }

    #[test]
    fn q_ratios_one_third() {
        let d = doubling();
        let u = Hole::symmetric(1.0 / 3.0, 1e-4);
        let q = |k| return_ratio_q(&d, &u, k, QMode::Exact { budget: 1 << 16 }).unwrap().q;
        assert!((q(1) - 0.25).abs() < 1e-6);
        assert_eq!(q(0), 0.0);
        assert_eq!(q(2), 0.0);
        let mc = return_ratio_q(&d, &u, 1, QMode::MonteCarlo { samples: 20_000, seed: 1 }).unwrap();
        let (lo, hi) = mc.ci.unwrap();
        assert!(lo < 0.25 && 0.25 < hi, "{lo} {hi}");
    }
}
