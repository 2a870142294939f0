use std::io::Write;

use serde::{Deserialize, Serialize};

use super::sampler::{dithered_step, Sampler, SamplerConfig};
use crate::error::{OdxError, Result};
use crate::interval_maps::IntervalMap;
use crate::numeric::wilson;
use crate::open_systems::Hole;
use crate::par;
use crate::transfer::{survival_log_series, PuncturedOperator};

const CHUNK: usize = 16_384;
/// Residual below which the operator iterate counts as stationary.
const SETTLE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalMethod {
    Mc,
    Operator,
}

impl SurvivalMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            SurvivalMethod::Mc => "mc",
            SurvivalMethod::Operator => "operator",
        }
    }
}

/// `p̂(t) = μ(τ > t)` on a grid of times.
#[derive(Clone, Debug, Serialize)]
pub struct SurvivalCurve {
    pub t: Vec<usize>,
    pub p_hat: Vec<f64>,
    /// `log p̂`, kept separately since operator values underflow.
    pub log_p: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    /// Fraction of samples whose status at `t` is unknown.
    pub censored: Vec<f64>,
    pub method: SurvivalMethod,
    pub n_samples: u64,
    pub resampled: u64,
    /// Raw estimates were not monotone and were pooled.
    pub isotonic_adjusted: bool,
    /// Some raw increase exceeded the CI width.
    pub monotonicity_flag: bool,
}

impl SurvivalCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,p_hat,ci_lo,ci_hi,censored,method")?;
        for i in 0..self.t.len() {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{}",
                self.t[i],
                self.p_hat[i],
                self.ci_lo[i],
                self.ci_hi[i],
                self.censored[i],
                self.method.tag()
            )?;
        }
        Ok(())
    }

    pub fn at(&self, t: usize) -> Option<usize> {
        self.t.iter().position(|&s| s == t)
    }
}

/// Pool-adjacent-violators for a nonincreasing fit. Returns whether anything
/// changed.
fn isotonic_nonincreasing(v: &mut [f64]) -> bool {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    let mut changed = false;
    for &x in v.iter() {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if b <= a {
                break;
            }
            changed = true;
            blocks.pop();
            let n = na + nb;
            *blocks.last_mut().unwrap() = ((a * na as f64 + b * nb as f64) / n as f64, n);
        }
    }
    let mut i = 0;
    for (x, n) in blocks {
        v[i..i + n].iter_mut().for_each(|y| *y = x);
        i += n;
    }
    changed
}

fn sorted_grid(t_grid: &[usize]) -> Vec<usize> {
    let mut t = t_grid.to_vec();
    t.sort_unstable();
    t.dedup();
    t
}

/// Per-sample outcome of the dithered orbit.
enum Fate {
    Hit(usize),
    Survived,
    /// Orbit hit a branch boundary at this step; status unknown afterwards.
    Lost(usize),
}

#[inline]
fn dithered_hitting(sampler: &Sampler, hole: &Hole, x: f64, horizon: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Fate {
    let fam = sampler.family();
    let d = sampler.config().dither;
    let mut y = x;
    for n in 1..=horizon {
        match dithered_step(fam, y, d, rng) {
            Some(z) => y = z,
            None => return Fate::Lost(n),
        }
        if hole.contains(y) {
            return Fate::Hit(n);
        }
    }
    Fate::Survived
}

/// Counts over the sorted grid: survivors with `τ > t`, and unknowns.
struct Tally {
    alive: Vec<u64>,
    unknown: Vec<u64>,
    resampled: u64,
}

/// Monte Carlo hitting times for `n_samples` stationary starts, tallied on
/// the grid. Chunk `c` always uses stream `c`.
fn mc_tally(map: &IntervalMap, hole: &Hole, grid: &[usize], n_samples: usize, config: &SamplerConfig) -> Result<Tally> {
    let sampler = Sampler::new(map, config)?;
    let horizon = *grid.last().unwrap_or(&0);
    let chunks = n_samples.div_ceil(CHUNK);
    let parts: Vec<Result<Tally>> = par::map_indexed(chunks, |c| {
        let mut st = sampler.stream(c as u64);
        let len = CHUNK.min(n_samples - c * CHUNK);
        let mut tally = Tally { alive: vec![0; grid.len()], unknown: vec![0; grid.len()], resampled: 0 };
        // k-th slot of these counts how many grid times precede the event
        let mut hit_at = vec![0u64; grid.len() + 1];
        let mut lost_at = vec![0u64; grid.len() + 1];
        for _ in 0..len {
            let x = st.next_point()?;
            match dithered_hitting(&sampler, hole, x, horizon, &mut st.rng) {
                Fate::Hit(n) => hit_at[grid.partition_point(|&t| t < n)] += 1,
                Fate::Lost(n) => lost_at[grid.partition_point(|&t| t < n)] += 1,
                Fate::Survived => hit_at[grid.len()] += 1,
            }
        }
        // τ > t_i iff the hit slot index is > i
        let mut alive = 0u64;
        for i in (0..grid.len()).rev() {
            alive += hit_at[i + 1] + lost_at[i + 1];
            tally.alive[i] = alive;
        }
        // lost at or before t_i
        let mut acc = 0u64;
        for i in 0..grid.len() {
            acc += lost_at[i];
            tally.unknown[i] = acc;
        }
        tally.resampled = st.resampled;
        Ok(tally)
    });
    let mut total = Tally { alive: vec![0; grid.len()], unknown: vec![0; grid.len()], resampled: 0 };
    for p in parts {
        let p = p?;
        for i in 0..grid.len() {
            total.alive[i] += p.alive[i];
            total.unknown[i] += p.unknown[i];
        }
        total.resampled += p.resampled;
    }
    Ok(total)
}

/// Survival by direct simulation from stationary starts (`τ ≥ 1`).
pub fn survival_curve_mc(
    map: &IntervalMap,
    hole: &Hole,
    t_grid: &[usize],
    n_samples: usize,
    config: &SamplerConfig,
) -> Result<SurvivalCurve> {
    if n_samples == 0 {
        return Err(OdxError::ConfigInvalid("n_samples must be positive".into()));
    }
    let grid = sorted_grid(t_grid);
    let tally = mc_tally(map, hole, &grid, n_samples, config)?;
    let n = n_samples as u64;
    let mut p_hat = Vec::with_capacity(grid.len());
    let mut ci_lo = Vec::with_capacity(grid.len());
    let mut ci_hi = Vec::with_capacity(grid.len());
    let mut censored = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let known = n - tally.unknown[i];
        let (lo, hi) = wilson(tally.alive[i], known);
        p_hat.push(if known > 0 { tally.alive[i] as f64 / known as f64 } else { f64::NAN });
        ci_lo.push(lo);
        ci_hi.push(hi);
        censored.push(tally.unknown[i] as f64 / n as f64);
    }
    let mut flag = false;
    for i in 1..grid.len() {
        if p_hat[i] - p_hat[i - 1] > (ci_hi[i - 1] - ci_lo[i - 1]).max(ci_hi[i] - ci_lo[i]) {
            flag = true;
        }
    }
    let adjusted = isotonic_nonincreasing(&mut p_hat);
    if let (Some(&c), Some(&p)) = (censored.last(), p_hat.last()) {
        if c > 1e-3 * p {
            return Err(OdxError::ExcessCensoring { censored: c, p_hat: p });
        }
    }
    let log_p = p_hat.iter().map(|p| p.ln()).collect();
    Ok(SurvivalCurve {
        t: grid,
        p_hat,
        log_p,
        ci_lo,
        ci_hi,
        censored,
        method: SurvivalMethod::Mc,
        n_samples: n,
        resampled: tally.resampled,
        isotonic_adjusted: adjusted,
        monotonicity_flag: flag,
    })
}

/// Survival `Σ (M̊ᵗ g₀)` by renormalised iteration of the punctured matrix.
pub fn survival_curve_operator(punctured: &PuncturedOperator, g0: &[f64], t_grid: &[usize]) -> Result<SurvivalCurve> {
    let part = &punctured.base.partition;
    if g0.len() != part.len() {
        return Err(OdxError::PartitionMismatch(format!(
            "density has {} cells, operator has {}",
            g0.len(),
            part.len()
        )));
    }
    let grid = sorted_grid(t_grid);
    let mass: Vec<f64> = g0.iter().zip(part.widths()).map(|(g, w)| g * w).collect();
    let log_p = survival_log_series(punctured, &mass, &grid, SETTLE_TOL)?;
    let p_hat: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    Ok(SurvivalCurve {
        t: grid.clone(),
        ci_lo: p_hat.clone(),
        ci_hi: p_hat.clone(),
        p_hat,
        log_p,
        censored: vec![0.0; grid.len()],
        method: SurvivalMethod::Operator,
        n_samples: 0,
        resampled: 0,
        isotonic_adjusted: false,
        monotonicity_flag: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hitting_stats::SampleSource;
    use crate::interval_maps::doubling;
    use crate::transfer::{build_ulam, puncture, Partition};

    #[test]
    fn pava_pools_violators() {
        let mut v = vec![1.0, 0.5, 0.7, 0.2];
        assert!(isotonic_nonincreasing(&mut v));
        assert_eq!(v, vec![1.0, 0.6, 0.6, 0.2]);
        let mut w = vec![1.0, 0.9];
        assert!(!isotonic_nonincreasing(&mut w));
    }

    #[test]
    fn doubling_half_hole_is_binary_digits() {
        let cfg = SamplerConfig::new(1, SampleSource::Acip);
        let grid: Vec<usize> = (0..=15).collect();
        let c = survival_curve_mc(&doubling(), &Hole::one_sided(0.0, 0.5), &grid, 1_000_000, &cfg).unwrap();
        assert_eq!(c.p_hat[0], 1.0);
        for (i, &t) in c.t.iter().enumerate() {
            let exact = 0.5f64.powi(t as i32);
            let half = 0.5 * (c.ci_hi[i] - c.ci_lo[i]);
            assert!((c.p_hat[i] - exact).abs() <= 3.0 * half.max(1e-6), "t={t}: {} vs {exact}", c.p_hat[i]);
        }
    }

    #[test]
    fn operator_two_cells_exact() {
        let op = build_ulam(&doubling(), &Partition::uniform(2)).unwrap();
        let p = puncture(&op, Some(&Hole::one_sided(0.0, 0.5)));
        let c = survival_curve_operator(&p, &[1.0, 1.0], &[0, 1, 5, 20]).unwrap();
        for (i, &t) in c.t.iter().enumerate() {
            assert!((c.log_p[i] + t as f64 * std::f64::consts::LN_2).abs() < 1e-12);
        }
        let empty = puncture(&op, None);
        let c = survival_curve_operator(&empty, &[1.0, 1.0], &[0, 100]).unwrap();
        assert!(c.p_hat.iter().all(|&p| (p - 1.0).abs() < 1e-14));
        assert!(matches!(
            survival_curve_operator(&p, &[1.0], &[1]),
            Err(OdxError::PartitionMismatch(_))
        ));
    }

    #[test]
    fn operator_and_mc_agree_on_quarter_hole() {
        let hole = Hole::one_sided(0.0, 0.25);
        let op = build_ulam(&doubling(), &Partition::uniform(4)).unwrap();
        let p = puncture(&op, Some(&hole));
        let grid: Vec<usize> = (0..=30).step_by(3).collect();
        let oc = survival_curve_operator(&p, &[1.0; 4], &grid).unwrap();
        let cfg = SamplerConfig::new(9, SampleSource::Acip);
        let mc = survival_curve_mc(&doubling(), &hole, &grid, 400_000, &cfg).unwrap();
        for i in 0..grid.len() {
            let half = 0.5 * (mc.ci_hi[i] - mc.ci_lo[i]);
            assert!((oc.p_hat[i] - mc.p_hat[i]).abs() <= 3.0 * half.max(1e-5), "t={}", grid[i]);
        }
        let slope = (oc.log_p[10] - oc.log_p[7]) / 9.0;
        assert!((slope - ((1.0 + 5f64.sqrt()) / 4.0).ln()).abs() < 1e-6);
    }
}
