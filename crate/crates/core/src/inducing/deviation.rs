use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{OdxError, Result};
use crate::hitting_stats::{dithered_step, scaled_time, DEFAULT_DITHER};
use crate::numeric::wilson;
use crate::open_systems::Hole;
use crate::par;

use super::induced::{Excursion, InducedMap};

const CHUNK: usize = 4096;
/// Longest single excursion followed before it is declared a deviation.
const EXCURSION_CAP: usize = 50_000_000;

/// `n_max = max(10u, 1000)`.
pub fn default_horizon(u: usize) -> usize {
    (10 * u).max(1000)
}

#[derive(Clone, Debug, Serialize)]
pub struct DeviationRow {
    pub eps: f64,
    pub u: usize,
    pub n_max: usize,
    /// `μ̂_Y(∃ n ∈ [u, n_max] : |R_{Y,n} − n/μ(Y)| > nε)`, a lower bound for
    /// `μ_Y(A_u)`.
    pub mu_a_lo: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// The same with horizon `n_max/2`.
    pub mu_a_half: f64,
    /// Two-point extrapolation `2·mu_a_lo − mu_a_half`.
    pub richardson: f64,
    pub count: u64,
    pub samples: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeviationTable {
    pub rows: Vec<DeviationRow>,
    /// Samples dropped after their orbit met a branch boundary.
    pub dropped: u64,
}

impl DeviationTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "eps,u,n_max,mu_A_lo,ci")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{:e},{:e}", r.eps, r.u, r.n_max, r.mu_a_lo, 0.5 * (r.ci_hi - r.ci_lo))?;
        }
        Ok(())
    }
}

/// Walks `F` along a dithered `f`-orbit and reports the first deviating
/// `n ≥ from` up to `to`, or `None`. `Err(())` on a branch boundary.
fn first_deviation(
    induced: &InducedMap,
    y: f64,
    eps: f64,
    from: usize,
    to: usize,
    rng: &mut ChaCha8Rng,
    mut each: impl FnMut(usize, bool),
) -> std::result::Result<(), ()> {
    let mean = 1.0 / induced.mu_base;
    let mut x = y;
    let mut s = 0usize;
    for n in 1..=to {
        match induced.return_orbit(x, EXCURSION_CAP, DEFAULT_DITHER, rng) {
            Excursion::Return(r, z) => {
                s += r;
                x = z;
            }
            Excursion::Boundary => return Err(()),
            Excursion::Capped => {
                for m in n.max(from)..=to {
                    each(m, true);
                }
                return Ok(());
            }
        }
        if n >= from {
            each(n, (s as f64 - n as f64 * mean).abs() > n as f64 * eps);
        }
    }
    Ok(())
}

/// `μ_Y(A_u)` estimates for each `u` in `u_grid`, with horizons
/// [`default_horizon`].
pub fn deviation_table(
    induced: &InducedMap,
    eps: f64,
    u_grid: &[usize],
    samples: usize,
    seed: u64,
) -> Result<DeviationTable> {
    if u_grid.is_empty() || u_grid.contains(&0) || !(eps > 0.0) {
        return Err(OdxError::ConfigInvalid("deviation table needs u ≥ 1 and ε > 0".into()));
    }
    let horizon = u_grid.iter().map(|&u| default_horizon(u)).max().unwrap();
    let u_min = *u_grid.iter().min().unwrap();
    let g = u_grid.len();
    let chunks = samples.div_ceil(CHUNK);
    let tallies: Vec<(Vec<u64>, Vec<u64>, u64)> = par::map_indexed(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut full = vec![0u64; g];
        let mut half = vec![0u64; g];
        let mut dropped = 0;
        for _ in 0..CHUNK.min(samples - c * CHUNK) {
            let y = induced.sample(&mut rng);
            let mut hit_full = vec![false; g];
            let mut hit_half = vec![false; g];
            let res = first_deviation(induced, y, eps, u_min, horizon, &mut rng, |n, dev| {
                if !dev {
                    return;
                }
                for (i, &u) in u_grid.iter().enumerate() {
                    let nm = default_horizon(u);
                    if n >= u && n <= nm {
                        hit_full[i] = true;
                        if n <= nm / 2 {
                            hit_half[i] = true;
                        }
                    }
                }
            });
            if res.is_err() {
                dropped += 1;
                continue;
            }
            for i in 0..g {
                full[i] += hit_full[i] as u64;
                half[i] += hit_half[i] as u64;
            }
        }
        (full, half, dropped)
    });
    let mut full = vec![0u64; g];
    let mut half = vec![0u64; g];
    let mut dropped = 0;
    for (f, h, d) in tallies {
        for i in 0..g {
            full[i] += f[i];
            half[i] += h[i];
        }
        dropped += d;
    }
    let n = samples as u64 - dropped;
    let rows = u_grid
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let p = full[i] as f64 / n as f64;
            let ph = half[i] as f64 / n as f64;
            let (lo, hi) = wilson(full[i], n);
            DeviationRow {
                eps,
                u,
                n_max: default_horizon(u),
                mu_a_lo: p,
                ci_lo: lo,
                ci_hi: hi,
                mu_a_half: ph,
                richardson: 2.0 * p - ph,
                count: full[i],
                samples: n,
            }
        })
        .collect();
    Ok(DeviationTable { rows, dropped })
}

/// Single-`u` form of [`deviation_table`].
pub fn deviation_measure(induced: &InducedMap, u: usize, eps: f64, samples: usize, seed: u64) -> Result<DeviationRow> {
    Ok(deviation_table(induced, eps, &[u], samples, seed)?.rows.remove(0))
}

#[derive(Clone, Debug, Serialize)]
pub struct ObstructionReport {
    pub alpha: f64,
    pub s: f64,
    pub r: f64,
    pub mu_u: f64,
    pub t: u64,
    pub u: usize,
    pub eps: f64,
    /// `μ̂_Y(τ_r > t ∧ A_u)`.
    pub p_survive_and_deviate: f64,
    /// `μ̂_Y(R_Y > t)`.
    pub p_long_return: f64,
    /// `p_survive_and_deviate / (s μ(U_r)^{1−α})`.
    pub ratio: f64,
    /// Samples with `R_Y > t`, each checked for `τ_r > t` and `A_u`.
    pub containment_checked: u64,
    pub containment_violations: u64,
    pub samples: u64,
}

/// Monte Carlo probe of the error term coming from long returns: estimates
/// `μ_Y(τ_r > t ∧ A_u)` and `μ_Y(R_Y > t)` at `t = ⌊s μ(U)^{-α}⌋`,
/// `u = max(1, ⌊μ(Y) t⌋)`, and checks `{R_Y > t} ⊂ {τ_r > t} ∩ A_u`
/// sample by sample.
pub fn polynomial_obstruction_probe(
    induced: &InducedMap,
    hole: &Hole,
    alpha: f64,
    s: f64,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<ObstructionReport> {
    let (a, b) = hole.bounds();
    if a <= induced.base.0 || b > induced.base.1 {
        return Err(OdxError::ConfigInvalid("hole must lie inside the base".into()));
    }
    let mu_u = induced.density().measure(a, b);
    let t = scaled_time(s, mu_u, alpha).ok_or_else(|| OdxError::ConfigInvalid("scaled time out of range".into()))?;
    if t > 1_000_000_000 {
        return Err(OdxError::BudgetExceeded(t as usize));
    }
    let tt = t as usize;
    let u = ((induced.mu_base * t as f64).floor() as usize).max(1);
    let n_max = default_horizon(u);
    let fam = induced.map().family();
    let chunks = samples.div_ceil(CHUNK);
    let tallies: Vec<[u64; 5]> = par::map_indexed(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        // joint, long, checked, violations, dropped
        let mut k = [0u64; 5];
        'sample: for _ in 0..CHUNK.min(samples - c * CHUNK) {
            let y = induced.sample(&mut rng);
            let long = match induced.branch_at(y) {
                Some(br) => br.r > tt,
                None => true,
            };
            let mut x = y;
            let mut survived = true;
            for _ in 0..tt {
                match dithered_step(fam, x, DEFAULT_DITHER, &mut rng) {
                    Some(z) => x = z,
                    None => {
                        k[4] += 1;
                        continue 'sample;
                    }
                }
                if hole.contains(x) {
                    survived = false;
                    break;
                }
            }
            let mut deviates = false;
            if survived || long {
                let mut found = false;
                let res = first_deviation(induced, y, eps, u, n_max, &mut rng, |_, dev| found |= dev);
                if res.is_err() {
                    k[4] += 1;
                    continue;
                }
                deviates = found;
            }
            if survived && deviates {
                k[0] += 1;
            }
            if long {
                k[1] += 1;
                k[2] += 1;
                if !(survived && deviates) {
                    k[3] += 1;
                }
            }
        }
        k
    });
    let mut k = [0u64; 5];
    for tl in tallies {
        for i in 0..5 {
            k[i] += tl[i];
        }
    }
    let n = (samples as u64 - k[4]).max(1);
    let p_joint = k[0] as f64 / n as f64;
    Ok(ObstructionReport {
        alpha,
        s,
        r: hole.radius,
        mu_u,
        t,
        u,
        eps,
        p_survive_and_deviate: p_joint,
        p_long_return: k[1] as f64 / n as f64,
        ratio: p_joint / (s * mu_u.powf(1.0 - alpha)),
        containment_checked: k[2],
        containment_violations: k[3],
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inducing::{first_return_map, lsv_induced};
    use crate::interval_maps::doubling;

    #[test]
    fn trivial_limits() {
        let ind = first_return_map(&doubling(), (0.5, 1.0), 50).unwrap();
        // |R_n/n − 2| can never exceed a huge ε
        let r = deviation_measure(&ind, 5, 1e9, 2000, 1).unwrap();
        assert_eq!(r.count, 0);
        let r = deviation_measure(&ind, 1, 1e-9, 2000, 1).unwrap();
        assert!(r.mu_a_lo > 0.999);
    }

    #[test]
    fn monotone_in_u_and_horizon() {
        let ind = first_return_map(&doubling(), (0.5, 1.0), 50).unwrap();
        let t = deviation_table(&ind, 0.5, &[5, 10, 20, 40], 20_000, 3).unwrap();
        for w in t.rows.windows(2) {
            assert!(w[1].mu_a_lo <= w[0].mu_a_lo);
        }
        for r in &t.rows {
            assert!(r.mu_a_half <= r.mu_a_lo);
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("eps,u,n_max,mu_A_lo,ci\n"));
    }

    #[test]
    fn long_returns_sit_inside_survival_and_deviation() {
        let ind = lsv_induced(0.5, 4000).unwrap();
        let hole = Hole::symmetric(0.5 + 1.0 / std::f64::consts::PI, 1e-2);
        let rep = polynomial_obstruction_probe(&ind, &hole, 0.2, 10.0, 0.1 / ind.mu_base, 20_000, 7).unwrap();
        assert!(rep.u >= 2, "{rep:?}");
        assert!(rep.containment_checked > 0);
        assert_eq!(rep.containment_violations, 0);
    }
}
