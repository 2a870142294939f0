use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::deviations::Observable;
use crate::error::{OdxError, Result};
use crate::hitting_stats::{SampleSource, SamplerConfig, ScanMethod, SurvivalMethod};
use crate::inducing::{build_farey, TailSpec};
use crate::interval_maps::{doubling, gauss, lsv, ly_tent, IntervalMap};
use crate::open_systems::{HoleFamily, HoleShape};
use crate::transfer::PartitionRule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Doubling,
    Gauss,
    LyTent { slope: f64 },
    Lsv { gamma: f64 },
    Farey { tail: TailSpec },
}

impl MapSpec {
    pub fn build(&self) -> Result<IntervalMap> {
        match self {
            MapSpec::Doubling => Ok(doubling()),
            MapSpec::Gauss => Ok(gauss()),
            MapSpec::LyTent { slope } => ly_tent(*slope),
            MapSpec::Lsv { gamma } => lsv(*gamma),
            MapSpec::Farey { tail } => build_farey(tail),
        }
    }

    /// The usual inducing base: `A₁` for Farey maps, `[1/2, 1]` otherwise.
    pub fn default_base(&self) -> Result<(f64, f64)> {
        match self {
            MapSpec::Farey { tail } => Ok((tail.sequence()?[2], 1.0)),
            _ => Ok((0.5, 1.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleSpec {
    pub centre: f64,
    #[serde(default = "default_shape")]
    pub shape: HoleShape,
    pub radii: Vec<f64>,
    /// Period of the centre; detected when absent.
    #[serde(default)]
    pub period: Option<usize>,
}

fn default_shape() -> HoleShape {
    HoleShape::Symmetric
}

impl HoleSpec {
    pub fn family(&self, map: &IntervalMap) -> Result<HoleFamily> {
        let f = HoleFamily::new(self.centre, self.shape, self.radii.clone())?;
        match self.period {
            Some(p) => Ok(f.with_period(Some(p))),
            None => f.detect(map, 16, 1e-12),
        }
    }
}

/// Sampler settings inside a config; the seed comes from the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default)]
    pub source: Option<SampleSource>,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub thinning: Option<usize>,
    #[serde(default)]
    pub dither: Option<f64>,
}

impl SamplerSpec {
    pub fn resolve(spec: &Option<SamplerSpec>, map: &IntervalMap, seed: u64) -> SamplerConfig {
        let mut c = SamplerConfig::for_map(map, seed);
        if let Some(s) = spec {
            if let Some(src) = &s.source {
                c.source = src.clone();
            }
            if let Some(b) = s.burn_in {
                c.burn_in = b;
            }
            if let Some(t) = s.thinning {
                c.thinning = t;
            }
            if let Some(d) = s.dither {
                c.dither = d;
            }
        }
        c
    }
}

fn default_tol() -> f64 {
    1e-12
}
fn default_samples() -> usize {
    1_000_000
}
fn default_unresolved() -> f64 {
    crate::inducing::DEFAULT_UNRESOLVED_TOL
}
fn default_j_max() -> usize {
    50
}
fn default_mc_steps() -> u64 {
    20_000_000_000
}
fn default_operator_steps() -> usize {
    2_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Ulam matrix and invariant density on `n` uniform cells.
    Ulam {
        n: usize,
        #[serde(default)]
        write_matrix: bool,
    },
    EscapeScan {
        partition: PartitionRule,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    /// Survival at `t = ⌊s/μ(U)⌋` for each hole.
    HtsScan {
        s: Vec<f64>,
        method: SurvivalMethod,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        partition: Option<PartitionRule>,
        #[serde(default)]
        sampler: Option<SamplerSpec>,
    },
    AlphaPhase {
        alphas: Vec<f64>,
        s: Vec<f64>,
        method: ScanMethod,
        partition: PartitionRule,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        refine_steps: usize,
        #[serde(default = "default_mc_steps")]
        max_mc_steps: u64,
        #[serde(default = "default_operator_steps")]
        max_operator_steps: usize,
        #[serde(default)]
        sampler: Option<SamplerSpec>,
    },
    AlphaZero {
        t: usize,
        #[serde(default = "default_budget")]
        budget: usize,
    },
    Induce {
        depth: usize,
        #[serde(default)]
        base: Option<(f64, f64)>,
        #[serde(default = "default_unresolved")]
        unresolved_tol: f64,
        /// `ε` as multiples of `1/μ(Y)`.
        #[serde(default)]
        eps_rel: Vec<f64>,
        #[serde(default)]
        u_grid: Vec<usize>,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    /// Birkhoff sums along the induced map when `depth` is given, along
    /// the map itself otherwise.
    Ld {
        #[serde(default)]
        depth: Option<usize>,
        #[serde(default)]
        base: Option<(f64, f64)>,
        observable: Observable,
        eps: f64,
        n_grid: Vec<usize>,
        #[serde(default)]
        psi_bar: Option<f64>,
        #[serde(default = "default_samples")]
        samples: usize,
        /// Values of `t` for the pressure-series probe.
        #[serde(default)]
        pressure_t: Vec<f64>,
        #[serde(default = "default_j_max")]
        j_max: usize,
    },
    FareyBuild,
    Obstruction {
        depth: usize,
        alpha: f64,
        s: f64,
        /// `ε` as a multiple of `1/μ(Y)`.
        #[serde(default = "default_eps_rel")]
        eps_rel: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
}

fn default_budget() -> usize {
    1_000_000
}
fn default_eps_rel() -> f64 {
    0.1
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Ulam { .. } => "ulam",
            Experiment::EscapeScan { .. } => "escape-scan",
            Experiment::HtsScan { .. } => "hts-scan",
            Experiment::AlphaPhase { .. } => "alpha-phase",
            Experiment::AlphaZero { .. } => "alpha-zero",
            Experiment::Induce { .. } => "induce",
            Experiment::Ld { .. } => "ld",
            Experiment::FareyBuild => "farey-build",
            Experiment::Obstruction { .. } => "obstruction",
        }
    }

    fn needs_hole(&self) -> bool {
        !matches!(
            self,
            Experiment::Ulam { .. } | Experiment::Induce { .. } | Experiment::Ld { .. } | Experiment::FareyBuild
        )
    }
}

pub const KINDS: [&str; 9] =
    ["ulam", "escape-scan", "hts-scan", "alpha-phase", "alpha-zero", "induce", "ld", "farey-build", "obstruction"];

fn default_output() -> PathBuf {
    PathBuf::from("odx-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: MapSpec,
    #[serde(default)]
    pub hole: Option<HoleSpec>,
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| OdxError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks beyond the schema, including building the map so
    /// that parameter ranges are enforced before any file is written.
    pub fn validate(&self) -> Result<()> {
        let map = self.map.build()?;
        if self.experiment.needs_hole() && self.hole.is_none() {
            return Err(OdxError::ConfigInvalid(format!("kind `{}` needs a hole", self.experiment.kind())));
        }
        if let Some(h) = &self.hole {
            HoleFamily::new(h.centre, h.shape, h.radii.clone())?;
        }
        if matches!(self.experiment, Experiment::FareyBuild) && !matches!(self.map, MapSpec::Farey { .. }) {
            return Err(OdxError::ConfigInvalid("farey-build needs a farey map".into()));
        }
        if let Experiment::HtsScan { sampler, .. } | Experiment::AlphaPhase { sampler, .. } = &self.experiment {
            SamplerSpec::resolve(sampler, &map, self.seed).validate()?;
        }
        Ok(())
    }
}

/// Sets `path` (dot separated) in `root` to `raw`, parsed as JSON when it
/// parses and kept as a string otherwise.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(OdxError::ConfigInvalid(format!("bad override path `{path}`")));
    }
    for (i, k) in keys.iter().enumerate() {
        if !cur.is_object() {
            return Err(OdxError::ConfigInvalid(format!("`{path}` descends into a non-object")));
        }
        let obj = cur.as_object_mut().unwrap();
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "map": {"name": "doubling"},
            "hole": {"centre": 0.0, "radii": [1e-2, 5e-3]},
            "experiment": {"kind": "escape-scan", "partition": {"kind": "dyadic", "extra_bits": 3, "max_n": 65536}},
            "seed": 3
        })
    }

    #[test]
    fn parses_and_fills_defaults() {
        let c = ExperimentConfig::from_value(base()).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("odx-out"));
        assert_eq!(c.experiment.kind(), "escape-scan");
        let back = serde_json::to_value(&c).unwrap();
        assert_eq!(ExperimentConfig::from_value(back).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = base();
        v["colour"] = json!("red");
        assert!(matches!(ExperimentConfig::from_value(v), Err(OdxError::ConfigInvalid(_))));
        let mut v = base();
        v["experiment"]["extra"] = json!(1);
        assert!(ExperimentConfig::from_value(v).is_err());
        let mut v = base();
        v["hole"]["radius"] = json!(1);
        assert!(ExperimentConfig::from_value(v).is_err());
    }

    #[test]
    fn parameter_ranges_are_enforced() {
        let mut v = base();
        v["map"] = json!({"name": "lsv", "gamma": 1.5});
        assert!(matches!(ExperimentConfig::from_value(v), Err(OdxError::ConfigInvalid(_))));
        let mut v = base();
        v.as_object_mut().unwrap().remove("hole");
        assert!(ExperimentConfig::from_value(v).is_err());
    }

    #[test]
    fn overrides_follow_dot_paths() {
        let mut v = base();
        apply_override(&mut v, "map.name", "gauss").unwrap();
        apply_override(&mut v, "hole.radii", "[0.1]").unwrap();
        apply_override(&mut v, "output_dir", "/tmp/x").unwrap();
        assert_eq!(v["map"]["name"], json!("gauss"));
        assert_eq!(v["hole"]["radii"], json!([0.1]));
        assert_eq!(v["output_dir"], json!("/tmp/x"));
        assert!(apply_override(&mut v, "seed.x", "1").is_err());
        assert!(apply_override(&mut v, "a..b", "1").is_err());
    }

    #[test]
    fn every_kind_has_a_tag() {
        for k in KINDS {
            let v = json!({"kind": k});
            // fails on missing fields, never on the tag itself
            if let Err(e) = serde_json::from_value::<Experiment>(v) {
                assert!(!e.to_string().contains("unknown variant"), "{k}: {e}");
            }
        }
    }
}
