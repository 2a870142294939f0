use std::io::Write;

use serde_json::{json, Value};

use super::config::{Experiment, ExperimentConfig, MapSpec, SamplerSpec};
use crate::deviations::{ld_curve, pressure_series_probe, tail_fit, System};
use crate::error::{OdxError, Result};
use crate::hitting_stats::{
    alpha_zero_limit, l_alpha_scan, unit_bound_check, scaled_time, survival_curve_mc, survival_curve_operator,
    ScanConfig, SurvivalMethod,
};
use crate::inducing::{
    deviation_table, farey_induced, first_return_map_with, lsv_induced, polynomial_obstruction_probe,
    tower_profile, InducedMap, DEFAULT_UNRESOLVED_TOL,
};
use crate::interval_maps::IntervalMap;
use crate::open_systems::HoleFamily;
use crate::transfer::{build_ulam, escape_derivative_scan, hole_measure, power_leading, puncture, Partition, PartitionRule};

const POWER_TOL: f64 = 1e-13;
const POWER_ITERS: usize = 500_000;
/// Uniform grid used for `μ(U)` when the map has no closed-form density.
const MEASURE_CELLS: usize = 4096;

/// Files produced by one run, named relative to the output directory, and
/// a JSON summary of the headline numbers.
#[derive(Debug)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
}

impl RunOutput {
    fn new(summary: Value) -> Self {
        RunOutput { files: Vec::new(), summary }
    }

    fn csv(&mut self, name: impl Into<String>, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl serde::Serialize) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(v).map_err(|e| OdxError::NumericalFailure(e.to_string()))?;
        buf.push(b'\n');
        self.files.push((name.into(), buf));
        Ok(())
    }
}

fn to_value(v: &impl serde::Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Runs the experiment without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let map = cfg.map.build()?;
    let holes = match &cfg.hole {
        Some(h) => Some(h.family(&map)?),
        None => None,
    };
    let need = || holes.as_ref().ok_or_else(|| OdxError::ConfigInvalid("hole missing".into()));
    match &cfg.experiment {
        Experiment::Ulam { n, write_matrix } => ulam(&map, holes.as_ref(), *n, *write_matrix),
        Experiment::EscapeScan { partition, tol } => {
            let scan = escape_derivative_scan(&map, need()?, partition, *tol)?;
            let mut out = RunOutput::new(json!({
                "extrapolated": scan.extrapolated,
                "target": scan.target,
                "period": need()?.period,
            }));
            out.csv("escape.csv", |w| scan.write_csv(w))?;
            Ok(out)
        }
        Experiment::HtsScan { s, method, samples, partition, sampler } => {
            let sampler = SamplerSpec::resolve(sampler, &map, cfg.seed);
            hts_scan(&map, need()?, s, *method, *samples, partition.as_ref(), &sampler)
        }
        Experiment::AlphaPhase {
            alphas,
            s,
            method,
            partition,
            samples,
            refine_steps,
            max_mc_steps,
            max_operator_steps,
            sampler,
        } => {
            let mut sc = ScanConfig::new(
                alphas.clone(),
                s.clone(),
                *method,
                SamplerSpec::resolve(sampler, &map, cfg.seed),
                partition.clone(),
            );
            sc.samples = *samples;
            sc.refine_steps = *refine_steps;
            sc.max_mc_steps = *max_mc_steps;
            sc.max_operator_steps = *max_operator_steps;
            let res = l_alpha_scan(&map, need()?, &sc)?;
            let bound = unit_bound_check(&res.rows);
            let mut out = RunOutput::new(json!({
                "alpha0": to_value(&res.alpha0),
                "extrapolated": to_value(&res.extrapolated),
                "complete": res.complete,
                "warnings": res.warnings,
                "bound_checked": bound.checked,
                "bound_violations": to_value(&bound.violations),
            }));
            out.csv("lscan.csv", |w| res.write_csv(w))?;
            Ok(out)
        }
        Experiment::AlphaZero { t, budget } => {
            let res = alpha_zero_limit(&map, need()?, *t, *budget)?;
            let mut out = RunOutput::new(json!({
                "t": res.t,
                "period": res.period,
                "extrapolated": res.extrapolated,
                "target": res.target,
            }));
            out.csv("alphazero.csv", |w| {
                writeln!(w, "r,mu_U,union_measure,value,l_hat,omitted_mass")?;
                for r in &res.rows {
                    writeln!(w, "{:e},{:e},{:e},{:e},{:e},{:e}", r.r, r.mu_u, r.union_measure, r.value, r.l_hat, r.omitted_mass)?;
                }
                Ok(())
            })?;
            Ok(out)
        }
        Experiment::Induce { depth, base, unresolved_tol, eps_rel, u_grid, samples } => {
            let ind = induce(&cfg.map, &map, *depth, *base, *unresolved_tol)?;
            let (kac, inv_mu) = ind.kac();
            let tower = tower_profile(&ind);
            let mut out = RunOutput::new(json!({
                "base": ind.base,
                "mu_base": ind.mu_base,
                "unresolved": ind.unresolved,
                "branches": ind.branches.len(),
                "kac_sum": kac,
                "kac_target": inv_mu,
                "tower_truncation": tower.truncation,
            }));
            out.csv("tail.csv", |w| ind.write_tail_csv(w))?;
            if !eps_rel.is_empty() && !u_grid.is_empty() {
                let mut buf = Vec::new();
                let mut dropped = Vec::new();
                for (i, e) in eps_rel.iter().enumerate() {
                    let eps = e / ind.mu_base;
                    let table = deviation_table(&ind, eps, u_grid, *samples, cfg.seed.wrapping_add(i as u64))?;
                    let mut part = Vec::new();
                    table.write_csv(&mut part)?;
                    // keep a single header
                    let skip = if i == 0 { 0 } else { part.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1) };
                    buf.extend_from_slice(&part[skip..]);
                    dropped.push(json!({"eps": eps, "dropped": table.dropped}));
                }
                out.files.push(("deviation.csv".into(), buf));
                out.summary["deviation_dropped"] = Value::Array(dropped);
            }
            Ok(out)
        }
        Experiment::Ld { depth, base, observable, eps, n_grid, psi_bar, samples, pressure_t, j_max } => {
            let ind = match depth {
                Some(d) => Some(induce(&cfg.map, &map, *d, *base, DEFAULT_UNRESOLVED_TOL)?),
                None => None,
            };
            let system = match &ind {
                Some(i) => System::Induced(i),
                None => System::Map(&map),
            };
            let curve = ld_curve(system, observable, *eps, n_grid, *psi_bar, *samples, cfg.seed)?;
            let mut out = RunOutput::new(json!({
                "observable": curve.observable,
                "psi_bar": curve.psi_bar,
                "psi_bar_ci": curve.psi_bar_ci,
                "rate": curve.rate(10),
                "zero_counts": curve.zero_counts(),
            }));
            out.csv("ldcurve.csv", |w| curve.write_csv(w))?;
            if let Some(ind) = &ind {
                let u: Vec<f64> = (1..=ind.depth).map(|u| u as f64).collect();
                let v: Vec<f64> = (1..=ind.depth).map(|u| ind.tail[u]).collect();
                match tail_fit(&u, &v) {
                    Ok(fit) => out.json("tailfit.json", &fit)?,
                    Err(e) => out.summary["tailfit_error"] = Value::String(e.to_string()),
                }
                let mut probes = Vec::new();
                for &t in pressure_t {
                    match pressure_series_probe(ind, t, *j_max) {
                        Ok(p) => probes.push(json!({"t": p.t, "ratio": p.ratio, "verdict": p.verdict, "t_star": p.t_star})),
                        Err(e) => probes.push(json!({"t": t, "error": e.to_string()})),
                    }
                }
                out.summary["pressure"] = Value::Array(probes);
            }
            Ok(out)
        }
        Experiment::FareyBuild => {
            let MapSpec::Farey { tail } = &cfg.map else { unreachable!("checked by validate") };
            let t = tail.sequence()?;
            let acip = map.acip().expect("farey map carries its density");
            let mut out = RunOutput::new(json!({
                "depth": tail.depth,
                "mu_y": map.param("mu_y"),
                "invariance_residual": map.param("invariance_residual"),
                "mean_return": tail.mean_return()?,
            }));
            out.csv("farey.csv", |w| {
                writeln!(w, "n,t_n,a_n,density")?;
                for n in 1..=tail.depth {
                    let mid = 0.5 * (t[n] + t[n + 1]);
                    writeln!(w, "{},{:e},{:e},{:e}", n, t[n], t[n] - t[n + 1], acip.density(mid))?;
                }
                Ok(())
            })?;
            Ok(out)
        }
        Experiment::Obstruction { depth, alpha, s, eps_rel, samples } => {
            let ind = induce(&cfg.map, &map, *depth, None, DEFAULT_UNRESOLVED_TOL)?;
            let eps = eps_rel / ind.mu_base;
            let mut reports = Vec::new();
            for (i, hole) in need()?.holes().enumerate() {
                reports.push(polynomial_obstruction_probe(&ind, &hole, *alpha, *s, eps, *samples, cfg.seed.wrapping_add(i as u64))?);
            }
            let violations: u64 = reports.iter().map(|r| r.containment_violations).sum();
            let checked: u64 = reports.iter().map(|r| r.containment_checked).sum();
            let mut out = RunOutput::new(json!({"containment_checked": checked, "containment_violations": violations}));
            out.csv("obstruction.csv", |w| {
                writeln!(w, "r,mu_U,t,u,eps,p_survive_and_deviate,p_long_return,ratio,checked,violations")?;
                for r in &reports {
                    writeln!(
                        w,
                        "{:e},{:e},{},{},{:e},{:e},{:e},{:e},{},{}",
                        r.r, r.mu_u, r.t, r.u, r.eps, r.p_survive_and_deviate, r.p_long_return, r.ratio,
                        r.containment_checked, r.containment_violations
                    )?;
                }
                Ok(())
            })?;
            Ok(out)
        }
    }
}

/// Analytic tables for Farey and LSV on their usual bases, itinerary
/// refinement otherwise.
fn induce(
    spec: &MapSpec,
    map: &IntervalMap,
    depth: usize,
    base: Option<(f64, f64)>,
    tol: f64,
) -> Result<InducedMap> {
    let default = spec.default_base()?;
    let base = base.unwrap_or(default);
    let on_default = base == default;
    match spec {
        MapSpec::Farey { tail } if on_default => {
            let mut t = tail.clone();
            t.depth = depth.min(tail.depth);
            farey_induced(&t)
        }
        MapSpec::Lsv { gamma } if on_default => lsv_induced(*gamma, depth),
        _ => first_return_map_with(map, base, depth, tol),
    }
}

fn ulam(map: &IntervalMap, holes: Option<&HoleFamily>, n: usize, write_matrix: bool) -> Result<RunOutput> {
    if n == 0 {
        return Err(OdxError::ConfigInvalid("n must be positive".into()));
    }
    let part = Partition::uniform(n);
    let op = build_ulam(map, &part)?;
    let sd = power_leading(&puncture(&op, None), POWER_TOL, POWER_ITERS)?;
    let mut out = RunOutput::new(json!({
        "n": n,
        "lambda": sd.lambda,
        "rho": sd.rho,
        "residual": sd.residual,
        "truncation_mass": op.truncation_mass,
    }));
    if let Some(h) = holes {
        let mut rows = Vec::new();
        for hole in h.holes() {
            let p = power_leading(&puncture(&op, Some(&hole)), POWER_TOL, POWER_ITERS)?;
            rows.push(json!({"r": hole.radius, "lambda": p.lambda, "rho": p.rho}));
        }
        out.summary["punctured"] = Value::Array(rows);
    }
    out.csv("density.csv", |w| {
        writeln!(w, "lo,hi,g")?;
        for (j, g) in sd.g.iter().enumerate() {
            let (a, b) = part.cell(j);
            writeln!(w, "{a:e},{b:e},{g:e}")?;
        }
        Ok(())
    })?;
    if write_matrix {
        out.csv("ulam.csv", |w| op.write_csv(w))?;
    }
    Ok(out)
}

fn hts_scan(
    map: &IntervalMap,
    holes: &HoleFamily,
    s: &[f64],
    method: SurvivalMethod,
    samples: usize,
    partition: Option<&PartitionRule>,
    sampler: &crate::hitting_stats::SamplerConfig,
) -> Result<RunOutput> {
    if s.is_empty() || s.iter().any(|&v| !(v > 0.0)) {
        return Err(OdxError::ConfigInvalid("s values must be positive".into()));
    }
    if method == SurvivalMethod::Operator && partition.is_none() {
        return Err(OdxError::ConfigInvalid("operator survival needs a partition".into()));
    }
    let fallback = if map.acip().is_none() { Some(build_ulam(map, &Partition::uniform(MEASURE_CELLS))?) } else { None };
    let mut out = RunOutput::new(Value::Null);
    let mut table = Vec::new();
    let mut max_dev: f64 = 0.0;
    for (i, hole) in holes.holes().enumerate() {
        let (curve, mu) = match method {
            SurvivalMethod::Mc => {
                let mu = match &fallback {
                    Some(op) => hole_measure(map, op, &hole, POWER_TOL)?,
                    None => hole.measure(map.acip()),
                };
                let grid = times(s, mu)?;
                (survival_curve_mc(map, &hole, &grid, samples, sampler)?, mu)
            }
            SurvivalMethod::Operator => {
                let part = partition.unwrap().partition(map, &hole)?;
                let op = build_ulam(map, &part)?;
                let g0 = power_leading(&puncture(&op, None), POWER_TOL, POWER_ITERS)?.g;
                let mu = hole_measure(map, &op, &hole, POWER_TOL)?;
                let grid = times(s, mu)?;
                (survival_curve_operator(&puncture(&op, Some(&hole)), &g0, &grid)?, mu)
            }
        };
        for &sv in s {
            let t = times(&[sv], mu)?[0];
            let k = curve.t.iter().position(|&x| x == t).expect("grid holds every t");
            let target = (-sv).exp();
            let half = 0.5 * (curve.ci_hi[k] - curve.ci_lo[k]);
            let dev = if half > 0.0 { (curve.p_hat[k] - target).abs() / half } else { f64::INFINITY };
            if method == SurvivalMethod::Mc {
                max_dev = max_dev.max(dev);
            }
            table.push((hole.radius, mu, sv, t, curve.p_hat[k], curve.ci_lo[k], curve.ci_hi[k], target));
        }
        out.csv(format!("survival_{i}.csv"), |w| curve.write_csv(w))?;
    }
    out.csv("hts.csv", |w| {
        writeln!(w, "r,mu_U,s,t,p_hat,ci_lo,ci_hi,exp_neg_s")?;
        for (r, mu, sv, t, p, lo, hi, e) in &table {
            writeln!(w, "{r:e},{mu:e},{sv},{t},{p:e},{lo:e},{hi:e},{e:e}")?;
        }
        Ok(())
    })?;
    out.summary = json!({"method": method.tag(), "rows": table.len(), "max_ci_multiples": if method == SurvivalMethod::Mc { Some(max_dev) } else { None }});
    Ok(out)
}

fn times(s: &[f64], mu: f64) -> Result<Vec<usize>> {
    s.iter()
        .map(|&v| {
            scaled_time(v, mu, 1.0)
                .filter(|&t| t <= 1_000_000_000)
                .map(|t| t as usize)
                .ok_or_else(|| OdxError::ConfigInvalid(format!("t for s = {v} out of range")))
        })
        .collect()
}
