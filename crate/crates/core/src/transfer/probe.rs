use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{build_ulam, puncture, Partition};
use crate::error::Result;
use crate::interval_maps::IntervalMap;
use crate::open_systems::Hole;

#[derive(Clone, Debug, Serialize)]
pub struct LyProbe {
    pub c: f64,
    pub sigma: f64,
    pub pass: bool,
    /// `(trial, n, Var(L̊ⁿψ), Var ψ, |ψ|₁)`.
    pub samples: Vec<(usize, usize, f64, f64, f64)>,
}

fn variation(g: &[f64]) -> f64 {
    g.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Fits `Var(L̊ⁿψ) ≤ C σⁿ Var ψ + C |ψ|₁` over random step functions.
///
/// For each `σ` on a grid the least admissible `C(σ)` is found; the pair
/// reported minimises the summed log of the bound over all samples.
pub fn ly_probe(
    map: &IntervalMap,
    hole: Option<&Hole>,
    partition: &Partition,
    n_max: usize,
    trials: usize,
    seed: u64,
) -> Result<LyProbe> {
    let op = build_ulam(map, partition)?;
    let p = puncture(&op, hole);
    let widths = partition.widths();
    let n = partition.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(trials * (n_max + 1));
    for trial in 0..trials {
        let pieces = 1 + rng.random_range(0..(n / 4).max(1));
        let mut cuts: Vec<usize> = (0..pieces).map(|_| rng.random_range(0..n)).collect();
        cuts.sort_unstable();
        let mut psi = vec![0.0; n];
        let mut level = rng.random_range(-1.0..1.0);
        let mut c = 0;
        for (i, v) in psi.iter_mut().enumerate() {
            while c < cuts.len() && cuts[c] == i {
                level = rng.random_range(-1.0..1.0);
                c += 1;
            }
            *v = level;
        }
        let var0 = variation(&psi);
        let l1 = psi.iter().zip(&widths).map(|(g, w)| g.abs() * w).sum::<f64>();
        let mut mass: Vec<f64> = psi.iter().zip(&widths).map(|(g, w)| g * w).collect();
        let mut next = vec![0.0; n];
        samples.push((trial, 0, var0, var0, l1));
        for k in 1..=n_max {
            p.apply(&mass, &mut next);
            std::mem::swap(&mut mass, &mut next);
            let dens: Vec<f64> = mass.iter().zip(&widths).map(|(m, w)| m / w).collect();
            samples.push((trial, k, variation(&dens), var0, l1));
        }
    }
    let mut best = (f64::INFINITY, 1.0, f64::INFINITY);
    for i in 1..=1500 {
        let sigma = i as f64 * 0.001;
        let c = samples
            .iter()
            .map(|&(_, k, v, v0, l1)| v / (sigma.powi(k as i32) * v0 + l1))
            .fold(0.0, f64::max);
        let obj: f64 = samples
            .iter()
            .map(|&(_, k, _, v0, l1)| (c * (sigma.powi(k as i32) * v0 + l1)).ln())
            .sum();
        if obj < best.0 {
            best = (obj, sigma, c);
        }
    }
    let (_, sigma, c) = best;
    Ok(LyProbe { c, sigma, pass: sigma < 1.0, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::doubling;

    #[test]
    fn doubling_contracts_at_half() {
        let hole = Hole::one_sided(0.0, 0.25);
        let r = ly_probe(&doubling(), Some(&hole), &Partition::uniform(1024), 8, 30, 7).unwrap();
        assert!(r.pass);
        assert!(r.sigma <= 0.55, "σ̂ = {}", r.sigma);
    }

    #[test]
    fn indicator_of_left_half_is_flattened() {
        let op = build_ulam(&doubling(), &Partition::uniform(64)).unwrap();
        let p = puncture(&op, None);
        let psi: Vec<f64> = (0..64).map(|i| if i < 32 { 1.0 / 64.0 } else { 0.0 }).collect();
        let mut out = vec![0.0; 64];
        p.apply(&psi, &mut out);
        let dens: Vec<f64> = out.iter().map(|m| m * 64.0).collect();
        assert!(variation(&dens) < 1e-15);
        assert!(dens.iter().all(|&g| (g - 0.5).abs() < 1e-15));
    }
}
