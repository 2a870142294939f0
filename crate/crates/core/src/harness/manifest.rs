use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::run::execute;
use crate::error::{OdxError, Result};
use crate::par;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    fn of(path: impl Into<String>, bytes: &[u8]) -> Self {
        FileDigest { path: path.into(), sha256: hex::encode(Sha256::digest(bytes)) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: Value,
}

impl RunManifest {
    /// Recomputes each output digest from disk and returns the paths that
    /// no longer match.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for d in &self.outputs {
            let bytes = fs::read(dir.join(&d.path))?;
            if FileDigest::of(&d.path, &bytes).sha256 != d.sha256 {
                bad.push(d.path.clone());
            }
        }
        Ok(bad)
    }
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).ok_or_else(|| OdxError::Io(format!("bad path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Runs `cfg` and writes its outputs and manifest under `cfg.output_dir`.
/// All computation finishes before the first file is written, so a failed
/// run leaves no files behind. `inputs` are digested into the manifest.
pub fn run(cfg: &ExperimentConfig, inputs: &[PathBuf]) -> Result<RunManifest> {
    let start = Instant::now();
    let out = execute(cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let inputs = inputs
        .iter()
        .map(|p| Ok(FileDigest::of(p.display().to_string(), &fs::read(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<FileDigest> = out.files.iter().map(|(n, b)| FileDigest::of(n.clone(), b)).collect();
    let manifest = RunManifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: par::threads(),
        wall_time_s: wall,
        inputs,
        outputs,
        summary: out.summary,
    };
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    for (name, bytes) in &out.files {
        write_atomic(&dir.join(name), bytes)?;
    }
    let mut m = serde_json::to_vec_pretty(&manifest).map_err(|e| OdxError::NumericalFailure(e.to_string()))?;
    m.push(b'\n');
    write_atomic(&dir.join(MANIFEST_NAME), &m)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| OdxError::ConfigInvalid(format!("{}: {e}", path.display())))
}

/// Re-runs the resolved config of a manifest, optionally into another
/// directory.
pub fn replay(manifest: &Path, output_dir: Option<PathBuf>) -> Result<RunManifest> {
    let mut cfg = read_manifest(manifest)?.config;
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    cfg.validate()?;
    run(&cfg, &[manifest.to_path_buf()])
}

/// Text table of the named maps.
pub fn list_catalogue() -> String {
    let rows = [
        ("doubling", "", "2x mod 1", "Lebesgue, density 1"),
        ("ly_tent(slope)", "slope in (1, 2]", "slope*x, then slope*(1-x)", "Ulam density"),
        ("gauss", "", "1/x mod 1, truncated", "density 1/(ln2 (1+x))"),
        ("lsv(gamma)", "gamma in (0,1)", "x + 2^gamma x^(1+gamma), then 2x-1", "Ulam density, infinite at 0"),
        ("farey(tail_spec)", "class + params, depth", "linear on A_n, |A_n| = t_n - t_{n+1}", "t_n / (a_n sum t) on A_n"),
    ];
    let w = [18, 22, 44];
    let mut s = format!("{:<w0$}  {:<w1$}  {:<w2$}  {}\n", "map", "parameters", "definition", "invariant density", w0 = w[0], w1 = w[1], w2 = w[2]);
    for (name, params, def, acip) in rows {
        s.push_str(&format!("{:<w0$}  {:<w1$}  {:<w2$}  {}\n", name, params, def, acip, w0 = w[0], w1 = w[1], w2 = w[2]));
    }
    s.push_str("\ntail classes: exponential{theta}, stretched{c, gamma}, polynomial{beta}\n");
    s
}
