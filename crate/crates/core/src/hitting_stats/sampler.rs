use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OdxError, Result};
use crate::interval_maps::{BranchFamily, IntervalMap};
use crate::par;
use crate::transfer::{build_ulam, power_leading, puncture, Partition};

/// Default per-step dither, `2^-44`.
pub const DEFAULT_DITHER: f64 = 5.684341886080802e-14;

const CHUNK: usize = 4096;
const MAX_RESAMPLES: u64 = 10_000;

/// Where starting points come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SampleSource {
    /// Consecutive points of one long orbit per chunk, after `burn_in` steps.
    LongOrbit,
    /// Inverse CDF of the Ulam invariant density on `cells` uniform cells.
    UlamDensityInverseCdf { cells: usize },
    /// Inverse CDF of the closed-form invariant density.
    Acip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    pub source: SampleSource,
    /// Width of the uniform noise added after each map step. Keeps floating
    /// point orbits of expanding maps from collapsing onto dyadic points.
    #[serde(default = "default_dither")]
    pub dither: f64,
}

fn default_burn_in() -> usize {
    1000
}

fn default_thinning() -> usize {
    1
}

fn default_dither() -> f64 {
    DEFAULT_DITHER
}

impl SamplerConfig {
    pub fn new(seed: u64, source: SampleSource) -> Self {
        SamplerConfig {
            seed,
            burn_in: default_burn_in(),
            thinning: default_thinning(),
            source,
            dither: DEFAULT_DITHER,
        }
    }

    /// Closed-form density when the map has one, else a 4096-cell Ulam density.
    pub fn for_map(map: &IntervalMap, seed: u64) -> Self {
        let source = if map.acip().is_some() {
            SampleSource::Acip
        } else {
            SampleSource::UlamDensityInverseCdf { cells: 4096 }
        };
        SamplerConfig::new(seed, source)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thinning < 1 {
            return Err(OdxError::ConfigInvalid("thinning must be at least 1".into()));
        }
        if self.source == SampleSource::LongOrbit && self.burn_in < 1000 {
            return Err(OdxError::ConfigInvalid("long-orbit sampling needs burn_in >= 1000".into()));
        }
        if !(self.dither >= 0.0 && self.dither < 1e-3) {
            return Err(OdxError::ConfigInvalid("dither must lie in [0, 1e-3)".into()));
        }
        Ok(())
    }
}

/// One map step with reflected dither. `None` on a branch boundary.
#[inline]
pub(crate) fn dithered_step(fam: &dyn BranchFamily, y: f64, dither: f64, rng: &mut ChaCha8Rng) -> Option<f64> {
    let j = fam.locate(y)?;
    let mut z = fam.forward(j, y);
    if dither > 0.0 {
        z += dither * (rng.random::<f64>() - 0.5);
        if z < 0.0 {
            z = -z;
        }
        if z > 1.0 {
            z = 2.0 - z;
        }
    }
    Some(z)
}

/// A prepared stationary sampler. Streams are keyed by chunk index so the
/// output does not depend on the thread count.
pub struct Sampler<'a> {
    map: &'a IntervalMap,
    config: SamplerConfig,
    cdf: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> Sampler<'a> {
    pub fn new(map: &'a IntervalMap, config: &SamplerConfig) -> Result<Self> {
        config.validate()?;
        let cdf = match config.source {
            SampleSource::UlamDensityInverseCdf { cells } => {
                let part = Partition::uniform(cells.max(1));
                let op = build_ulam(map, &part)?;
                let s = power_leading(&puncture(&op, None), 1e-12, 200_000)?;
                let mut acc = 0.0;
                let mut c = Vec::with_capacity(part.len() + 1);
                c.push(0.0);
                for m in s.masses(&part.widths()) {
                    acc += m.max(0.0);
                    c.push(acc);
                }
                c.iter_mut().for_each(|v| *v /= acc);
                Some((part.boundaries, c))
            }
            SampleSource::Acip if map.acip().is_none() => {
                return Err(OdxError::ConfigInvalid(format!("map `{}` has no closed-form density", map.name)))
            }
            _ => None,
        };
        Ok(Sampler { map, config: config.clone(), cdf })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn stream(&self, chunk: u64) -> SampleStream<'_, 'a> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(chunk);
        SampleStream { sampler: self, rng, x: None, resampled: 0 }
    }

    pub(crate) fn family(&self) -> &dyn BranchFamily {
        self.map.family()
    }
}

pub struct SampleStream<'s, 'a> {
    sampler: &'s Sampler<'a>,
    pub rng: ChaCha8Rng,
    x: Option<f64>,
    /// Draws discarded after landing on a branch boundary.
    pub resampled: u64,
}

impl SampleStream<'_, '_> {
    pub fn next_point(&mut self) -> Result<f64> {
        let mut failures = 0;
        loop {
            if let Some(x) = self.try_next() {
                return Ok(x);
            }
            self.x = None;
            self.resampled += 1;
            failures += 1;
            if failures > MAX_RESAMPLES {
                return Err(OdxError::NumericalFailure("sampler keeps hitting branch boundaries".into()));
            }
        }
    }

    fn try_next(&mut self) -> Option<f64> {
        let s = self.sampler;
        let fam = s.family();
        let d = s.config.dither;
        let mut x = match (&s.config.source, self.x) {
            (SampleSource::LongOrbit, Some(x)) => x,
            (SampleSource::LongOrbit, None) => {
                let mut x: f64 = self.rng.random();
                for _ in 0..s.config.burn_in {
                    x = dithered_step(fam, x, d, &mut self.rng)?;
                }
                x
            }
            (SampleSource::Acip, _) => s.map.acip().unwrap().quantile(self.rng.random()),
            (SampleSource::UlamDensityInverseCdf { .. }, _) => {
                let (b, c) = s.cdf.as_ref().unwrap();
                let u: f64 = self.rng.random();
                let i = c.partition_point(|&v| v <= u).clamp(1, b.len() - 1) - 1;
                b[i] + (b[i + 1] - b[i]) * self.rng.random::<f64>()
            }
        };
        for _ in 0..s.config.thinning {
            x = dithered_step(fam, x, d, &mut self.rng)?;
        }
        if s.config.source == SampleSource::LongOrbit {
            self.x = Some(x);
        }
        Some(x)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarySample {
    pub points: Vec<f64>,
    pub resampled: u64,
}

/// `n` points approximately distributed by the invariant density.
pub fn stationary_sample(map: &IntervalMap, config: &SamplerConfig, n: usize) -> Result<StationarySample> {
    let sampler = Sampler::new(map, config)?;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<(Vec<f64>, u64)>> = par::map_indexed(chunks, |c| {
        let mut st = sampler.stream(c as u64);
        let len = CHUNK.min(n - c * CHUNK);
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(st.next_point()?);
        }
        Ok((v, st.resampled))
    });
    let mut points = Vec::with_capacity(n);
    let mut resampled = 0;
    for p in parts {
        let (v, r) = p?;
        points.extend(v);
        resampled += r;
    }
    Ok(StationarySample { points, resampled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::{doubling, gauss};

    fn ks_uniform(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn doubling_samples_are_uniform_in_every_mode() {
        let n = 20_000;
        for source in [
            SampleSource::LongOrbit,
            SampleSource::UlamDensityInverseCdf { cells: 256 },
            SampleSource::Acip,
        ] {
            let mut cfg = SamplerConfig::new(11, source.clone());
            cfg.thinning = 8;
            let s = stationary_sample(&doubling(), &cfg, n).unwrap();
            assert_eq!(s.points.len(), n);
            let d = ks_uniform(s.points);
            assert!(d < 1.63 / (n as f64).sqrt(), "{source:?}: KS {d}");
        }
    }

    #[test]
    fn gauss_mean_from_ulam_density() {
        let cfg = SamplerConfig::new(3, SampleSource::UlamDensityInverseCdf { cells: 4096 });
        let s = stationary_sample(&gauss(), &cfg, 200_000).unwrap();
        let mean = s.points.iter().sum::<f64>() / s.points.len() as f64;
        let target = 1.0 / std::f64::consts::LN_2 - 1.0;
        assert!((mean - target).abs() < 3e-3, "{mean}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = SamplerConfig::new(5, SampleSource::LongOrbit);
        let a = stationary_sample(&doubling(), &cfg, 5000).unwrap();
        let b = stationary_sample(&doubling(), &cfg, 5000).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SamplerConfig::new(0, SampleSource::LongOrbit);
        cfg.burn_in = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = SamplerConfig::new(0, SampleSource::Acip);
        cfg.thinning = 0;
        assert!(cfg.validate().is_err());
        let lsv = crate::interval_maps::lsv(0.5).unwrap();
        assert!(Sampler::new(&lsv, &SamplerConfig::new(0, SampleSource::Acip)).is_err());
    }
}
