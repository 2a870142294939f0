//! Empirical large-deviation rates of Birkhoff sums, tail-class fits and the
//! pressure series of full-branched induced maps.

mod fit;
mod pressure;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OdxError, Result};
use crate::hitting_stats::{dithered_step, Sampler, SamplerConfig, DEFAULT_DITHER};
use crate::inducing::{Excursion, InducedMap};
use crate::interval_maps::IntervalMap;
use crate::numeric::{linear_fit, wilson};
use crate::par;

pub use fit::{tail_fit, FitCandidate, FitClass, TailFit};
pub use pressure::{pressure_series_probe, PressureProbe, Verdict};

const CHUNK: usize = 4096;
const EXCURSION_CAP: usize = 50_000_000;
/// Samples used to estimate `ψ̄` when it is not supplied.
pub const MEAN_SAMPLES: usize = 10_000_000;

/// The observable `ψ` summed along orbits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// `R_Y`, induced systems only.
    ReturnTime,
    Identity,
    Indicator { lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl Observable {
    pub fn tag(&self) -> String {
        match self {
            Observable::ReturnTime => "R_Y".into(),
            Observable::Identity => "x".into(),
            Observable::Indicator { lo, hi } => format!("1[{lo},{hi})"),
            Observable::Constant { value } => format!("const {value}"),
        }
    }

    fn at(&self, x: f64, r: usize) -> f64 {
        match *self {
            Observable::ReturnTime => r as f64,
            Observable::Identity => x,
            Observable::Indicator { lo, hi } => (x >= lo && x < hi) as u8 as f64,
            Observable::Constant { value } => value,
        }
    }
}

/// What the Birkhoff sums run over.
#[derive(Clone, Copy)]
pub enum System<'a> {
    Map(&'a IntervalMap),
    Induced(&'a InducedMap),
}

/// Orbit of `System` from stationary initial points, as `(point, return time)`.
struct Walker<'a> {
    system: System<'a>,
    sampler: Option<Sampler<'a>>,
}

impl<'a> Walker<'a> {
    fn new(system: System<'a>, seed: u64) -> Result<Self> {
        let sampler = match system {
            System::Map(m) => Some(Sampler::new(m, &SamplerConfig::for_map(m, seed))?),
            System::Induced(_) => None,
        };
        Ok(Walker { system, sampler })
    }

    fn start(&self, rng: &mut ChaCha8Rng, chunk: u64) -> Result<f64> {
        match (self.system, &self.sampler) {
            (System::Induced(ind), _) => Ok(ind.sample(rng)),
            (System::Map(_), Some(s)) => {
                let mut st = s.stream(chunk);
                st.rng = rng.clone();
                let x = st.next_point();
                *rng = st.rng;
                x
            }
            _ => unreachable!(),
        }
    }

    /// One step; `None` on a branch boundary. Excursions past the cap are
    /// reported with the cap as return time.
    fn step(&self, x: f64, rng: &mut ChaCha8Rng) -> Option<(f64, usize)> {
        match self.system {
            System::Map(m) => dithered_step(m.family(), x, DEFAULT_DITHER, rng).map(|y| (y, 1)),
            System::Induced(ind) => match ind.return_orbit(x, EXCURSION_CAP, DEFAULT_DITHER, rng) {
                Excursion::Return(r, y) => Some((y, r)),
                Excursion::Capped => Some((x, EXCURSION_CAP)),
                Excursion::Boundary => None,
            },
        }
    }

    /// `ψ` at `x`; the return time needs the next step, so it is taken
    /// from the branch table.
    fn value(&self, obs: &Observable, x: f64) -> Option<f64> {
        match (self.system, obs) {
            (System::Induced(ind), Observable::ReturnTime) => ind.branch_at(x).map(|b| b.r as f64),
            (_, o) => Some(o.at(x, 0)),
        }
    }
}

/// `ℓ̂(n) = −log μ̂(S_nψ/n > ψ̄ + ε)` on a grid of `n`.
#[derive(Clone, Debug, Serialize)]
pub struct RateCurve {
    pub observable: String,
    pub eps: f64,
    pub psi_bar: f64,
    /// Half-width of the 95% interval on `ψ̄`; zero when supplied.
    pub psi_bar_ci: f64,
    pub n: Vec<usize>,
    /// `None` where nothing exceeded the threshold.
    pub ell_hat: Vec<Option<f64>>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub count: Vec<u64>,
    pub samples: u64,
}

impl RateCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,ell_hat,ci_lo,ci_hi,count")?;
        for i in 0..self.n.len() {
            let ell = self.ell_hat[i].map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", self.n[i], ell, self.ci_lo[i], self.ci_hi[i], self.count[i])?;
        }
        Ok(())
    }

    /// Grid points with no exceedance; only the bound `ℓ ≥ ci_lo` is known.
    pub fn zero_counts(&self) -> Vec<usize> {
        (0..self.n.len()).filter(|&i| self.count[i] == 0).map(|i| self.n[i]).collect()
    }

    /// Slope in `n` of `ℓ̂(n) − ½ log n` over points with at least
    /// `min_count` exceedances. The `½ log n` removes the Gaussian
    /// prefactor of the exceedance probability.
    pub fn rate(&self, min_count: u64) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..self.n.len())
            .filter(|&i| self.count[i] >= min_count)
            .filter_map(|i| self.ell_hat[i].map(|l| (self.n[i] as f64, l - 0.5 * (self.n[i] as f64).ln())))
            .unzip();
        if xs.len() < 3 {
            return None;
        }
        linear_fit(&xs, &ys).map(|(_, b)| b)
    }
}

/// Monte Carlo rate curve with Wilson intervals per `n`.
pub fn ld_curve(
    system: System,
    observable: &Observable,
    eps: f64,
    n_grid: &[usize],
    psi_bar: Option<f64>,
    samples: usize,
    seed: u64,
) -> Result<RateCurve> {
    if matches!((system, observable), (System::Map(_), Observable::ReturnTime)) {
        return Err(OdxError::ConfigInvalid("return time needs an induced system".into()));
    }
    if n_grid.is_empty() || n_grid.contains(&0) || !(eps > 0.0) {
        return Err(OdxError::ConfigInvalid("rate curve needs n ≥ 1 and ε > 0".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let walker = Walker::new(system, seed)?;
    let (psi_bar, psi_bar_ci) = match psi_bar {
        Some(v) => (v, 0.0),
        None => estimate_mean(&walker, observable, seed ^ 0x5bd1_e995)?,
    };
    let threshold = psi_bar + eps;
    let horizon = *grid.last().unwrap();
    let chunks = samples.div_ceil(CHUNK);
    let tallies: Vec<(Vec<u64>, u64)> = par::map_indexed(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut k = vec![0u64; grid.len()];
        let mut used = 0;
        'sample: for _ in 0..CHUNK.min(samples - c * CHUNK) {
            let Ok(mut x) = walker.start(&mut rng, c as u64) else { continue };
            let mut s = 0.0;
            let mut gi = 0;
            for n in 1..=horizon {
                let Some((y, r)) = walker.step(x, &mut rng) else { continue 'sample };
                s += match (walker.system, observable) {
                    (System::Induced(_), Observable::ReturnTime) => r as f64,
                    _ => observable.at(x, r),
                };
                x = y;
                if n == grid[gi] {
                    if s / n as f64 > threshold {
                        k[gi] += 1;
                    }
                    gi += 1;
                }
            }
            used += 1;
        }
        (k, used)
    });
    let mut count = vec![0u64; grid.len()];
    let mut n_used = 0;
    for (k, u) in tallies {
        for i in 0..grid.len() {
            count[i] += k[i];
        }
        n_used += u;
    }
    let mut ell_hat = Vec::new();
    let mut ci_lo = Vec::new();
    let mut ci_hi = Vec::new();
    for &k in &count {
        let (plo, phi) = wilson(k, n_used);
        ell_hat.push((k > 0).then(|| -(k as f64 / n_used as f64).ln()));
        ci_lo.push(-phi.ln());
        ci_hi.push(-plo.ln());
    }
    Ok(RateCurve {
        observable: observable.tag(),
        eps,
        psi_bar,
        psi_bar_ci,
        n: grid,
        ell_hat,
        ci_lo,
        ci_hi,
        count,
        samples: n_used,
    })
}

fn estimate_mean(walker: &Walker, obs: &Observable, seed: u64) -> Result<(f64, f64)> {
    let chunks = MEAN_SAMPLES.div_ceil(CHUNK);
    let parts: Vec<Result<(f64, f64, u64)>> = par::map_indexed(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0u64);
        for _ in 0..CHUNK.min(MEAN_SAMPLES - c * CHUNK) {
            let x = walker.start(&mut rng, c as u64)?;
            if let Some(v) = walker.value(obs, x) {
                s += v;
                s2 += v * v;
                n += 1;
            }
        }
        Ok((s, s2, n))
    });
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0u64);
    for p in parts {
        let (a, b, c) = p?;
        s += a;
        s2 += b;
        n += c;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0);
    Ok((mean, 1.959_963_984_540_054 * (var / n as f64).sqrt()))
}

/// Cramér rate `I(x)` of a geometric law on `{1, 2, …}` with success
/// probability `p`, for `x > 1`.
pub fn geometric_cramer_rate(p: f64, x: f64) -> f64 {
    (x - 1.0) * ((x - 1.0) / (x * (1.0 - p))).ln() + (1.0 / (x * p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inducing::first_return_map;
    use crate::interval_maps::doubling;

    #[test]
    fn cramer_rate_is_a_legendre_transform() {
        for &(p, x) in &[(0.5, 2.5), (0.5, 1.5), (0.3, 5.0)] {
            // Λ(λ) = log(p e^λ / (1 − (1−p) e^λ))
            let lmax = -(1.0f64 - p).ln();
            let sup = (1..100_000)
                .map(|i| {
                    let l = -5.0 + (lmax + 5.0) * i as f64 / 100_000.0;
                    l * x - (p * l.exp() / (1.0 - (1.0 - p) * l.exp())).ln()
                })
                .fold(f64::MIN, f64::max);
            assert!((sup - geometric_cramer_rate(p, x)).abs() < 1e-6, "{p} {x}");
        }
        assert!((geometric_cramer_rate(0.5, 2.0)).abs() < 1e-15);
    }

    #[test]
    fn constant_observable_never_exceeds() {
        let ind = first_return_map(&doubling(), (0.5, 1.0), 50).unwrap();
        let c = ld_curve(System::Induced(&ind), &Observable::Constant { value: 3.0 }, 0.1, &[5, 10], Some(3.0), 5000, 1)
            .unwrap();
        assert_eq!(c.zero_counts(), vec![5, 10]);
        assert!(c.ell_hat.iter().all(|e| e.is_none()));
        assert!(c.ci_lo[0] > 7.0 && c.ci_hi[0].is_infinite());
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("n,ell_hat,ci_lo,ci_hi,count\n5,,"));
    }

    #[test]
    fn doubling_return_time_mean_is_two() {
        let ind = first_return_map(&doubling(), (0.5, 1.0), 50).unwrap();
        let c = ld_curve(System::Induced(&ind), &Observable::ReturnTime, 0.5, &[10], None, 1000, 2).unwrap();
        assert!((c.psi_bar - 2.0).abs() < 3.0 * c.psi_bar_ci.max(1e-4));
        assert!(ld_curve(System::Map(&doubling()), &Observable::ReturnTime, 0.5, &[10], Some(2.0), 10, 0).is_err());
    }
}
