use std::io::Write;

use serde::{Deserialize, Serialize};

use super::sampler::SamplerConfig;
use super::survival::{survival_curve_mc, SurvivalMethod};
use crate::error::{OdxError, Result};
use crate::interval_maps::{IntervalMap, Potential};
use crate::numeric::{linear_fit, median};
use crate::open_systems::{preimage_set, Hole, HoleFamily, IntervalSet};
use crate::transfer::{build_ulam, power_leading, puncture, survival_log_series_capped, PartitionRule, UlamOperator};

/// Largest `t` a scan row may ask for.
const T_CAP: f64 = 1e18;
const PILOT_SAMPLES: usize = 10_000;
const SETTLE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMethod {
    Mc,
    Operator,
    /// Monte Carlo where a pilot run predicts at least 100 survivors and
    /// `p̂ ≥ 1e-8`, operator iteration elsewhere.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSource {
    Acip,
    Ulam,
}

impl MuSource {
    pub fn tag(&self) -> &'static str {
        match self {
            MuSource::Acip => "acip",
            MuSource::Ulam => "ulam",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub alphas: Vec<f64>,
    pub s: Vec<f64>,
    pub method: ScanMethod,
    pub samples: usize,
    pub sampler: SamplerConfig,
    pub partition: PartitionRule,
    /// Total orbit steps allowed per hole for Monte Carlo rows.
    pub max_mc_steps: u64,
    /// Matrix applications allowed per hole for operator rows.
    pub max_operator_steps: usize,
    /// Bisection passes on the bracket of `α₀`.
    #[serde(default)]
    pub refine_steps: usize,
}

impl ScanConfig {
    pub fn new(alphas: Vec<f64>, s: Vec<f64>, method: ScanMethod, sampler: SamplerConfig, partition: PartitionRule) -> Self {
        ScanConfig {
            alphas,
            s,
            method,
            samples: 1_000_000,
            sampler,
            partition,
            max_mc_steps: 20_000_000_000,
            max_operator_steps: 2_000_000,
            refine_steps: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub alpha: f64,
    pub s: f64,
    pub r: f64,
    pub mu_u: f64,
    pub t: u64,
    pub log_p: f64,
    pub l_hat: f64,
    /// CI for `L̂` mapped from the Wilson interval of `p̂`.
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `μ(τ ≤ t) / (s μ(U)^{1-α})` with its CI.
    pub companion: f64,
    pub companion_lo: f64,
    pub companion_hi: f64,
    pub mu_source: MuSource,
    pub method: SurvivalMethod,
}

impl ScanRow {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Extrapolant {
    pub alpha: f64,
    pub s: f64,
    /// Intercept of the fit linear in `μ(U_r)`.
    pub l_hat: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransitionEstimate {
    pub s: f64,
    pub alpha0: f64,
    /// Largest examined `α` above the threshold and smallest below it.
    pub bracket: (f64, f64),
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    pub extrapolated: Vec<Extrapolant>,
    pub alpha0: Vec<TransitionEstimate>,
    /// False when a budget stopped the scan; `rows` holds what finished.
    pub complete: bool,
    pub warnings: Vec<String>,
}

impl ScanResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "alpha,s,r,mu_U,t,log_p,L_hat,ci_lo,ci_hi,mu_source,method")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:e},{:e},{},{:e},{:e},{:e},{:e},{},{}",
                r.alpha,
                r.s,
                r.r,
                r.mu_u,
                r.t,
                r.log_p,
                r.l_hat,
                r.ci_lo,
                r.ci_hi,
                r.mu_source.tag(),
                r.method.tag()
            )?;
        }
        Ok(())
    }

    pub fn extrapolant(&self, alpha: f64, s: f64) -> Option<f64> {
        self.extrapolated
            .iter()
            .find(|e| (e.alpha - alpha).abs() < 1e-12 && (e.s - s).abs() < 1e-12)
            .map(|e| e.l_hat)
    }
}

/// `⌊s μ^{-α}⌋`, or `None` past [`T_CAP`].
pub fn scaled_time(s: f64, mu: f64, alpha: f64) -> Option<u64> {
    let t = (s * mu.powf(-alpha)).floor();
    (t.is_finite() && t <= T_CAP).then_some(t as u64)
}

/// Per-hole state shared by every `(α, s)` evaluated on it.
struct HoleContext {
    hole: Hole,
    mu: f64,
    mu_source: MuSource,
    op: Option<(UlamOperator, Vec<f64>)>,
}

impl HoleContext {
    fn new(map: &IntervalMap, hole: Hole) -> Self {
        let (mu, mu_source) = match map.acip() {
            Some(a) => (hole.measure(Some(a)), MuSource::Acip),
            None => (f64::NAN, MuSource::Ulam),
        };
        HoleContext { hole, mu, mu_source, op: None }
    }

    /// Builds the Ulam matrix and the stationary cell masses on first use.
    fn operator(&mut self, map: &IntervalMap, rule: &PartitionRule) -> Result<&(UlamOperator, Vec<f64>)> {
        if self.op.is_none() {
            let part = rule.partition(map, &self.hole)?;
            let op = build_ulam(map, &part)?;
            let masses = match map.acip() {
                Some(a) => (0..part.len())
                    .map(|j| {
                        let (x, y) = part.cell(j);
                        a.measure(x, y)
                    })
                    .collect::<Vec<f64>>(),
                None => {
                    let s = power_leading(&puncture(&op, None), SETTLE_TOL, 1_000_000)?;
                    s.masses(&part.widths())
                }
            };
            if self.mu_source == MuSource::Ulam {
                let (u, v) = self.hole.bounds();
                self.mu = (0..part.len())
                    .map(|j| {
                        let (x, y) = part.cell(j);
                        masses[j] / (y - x) * (y.min(v) - x.max(u)).max(0.0)
                    })
                    .sum();
            }
            self.op = Some((op, masses));
        }
        Ok(self.op.as_ref().unwrap())
    }
}

struct RowSpec {
    alpha: f64,
    s: f64,
    t: u64,
}

/// `log_lo ≤ log_p ≤ log_hi` bound the survival probability.
fn make_row(ctx: &HoleContext, spec: &RowSpec, method: SurvivalMethod, log_p: f64, log_lo: f64, log_hi: f64) -> ScanRow {
    let scale = spec.s * ctx.mu.powf(1.0 - spec.alpha);
    let l_hat = -log_p / scale;
    let ci_lo = -log_hi / scale;
    let ci_hi = -log_lo / scale;
    let (p_lo, p_hi) = (log_lo.exp(), log_hi.exp());
    let q = -(log_p.exp_m1());
    ScanRow {
        alpha: spec.alpha,
        s: spec.s,
        r: ctx.hole.radius,
        mu_u: ctx.mu,
        t: spec.t,
        log_p,
        l_hat: if l_hat == 0.0 { 0.0 } else { l_hat },
        ci_lo: ci_lo.max(0.0),
        ci_hi,
        companion: q / scale,
        companion_lo: (1.0 - p_hi) / scale,
        companion_hi: (1.0 - p_lo) / scale,
        mu_source: ctx.mu_source,
        method,
    }
}

/// Rows for every `(α, s)` pair on one hole. Returns `false` when a budget
/// cut the work short.
fn rows_for_hole(
    map: &IntervalMap,
    ctx: &mut HoleContext,
    alphas: &[f64],
    cfg: &ScanConfig,
    out: &mut Vec<ScanRow>,
    warnings: &mut Vec<String>,
) -> Result<bool> {
    if ctx.mu_source == MuSource::Ulam {
        ctx.operator(map, &cfg.partition)?;
    }
    if !(ctx.mu > 0.0) {
        return Err(OdxError::Degenerate(format!("hole of radius {} has zero measure", ctx.hole.radius)));
    }
    let mut specs = Vec::new();
    for &alpha in alphas {
        for &s in &cfg.s {
            match scaled_time(s, ctx.mu, alpha) {
                Some(t) => specs.push(RowSpec { alpha, s, t }),
                None => warnings.push(format!("α={alpha}, s={s}, r={}: t beyond {T_CAP:e}, skipped", ctx.hole.radius)),
            }
        }
    }
    let mut complete = true;
    let mut mc_rows = Vec::new();
    let mut op_rows = Vec::new();
    match cfg.method {
        ScanMethod::Operator => op_rows.extend(0..specs.len()),
        ScanMethod::Mc | ScanMethod::Auto => {
            let cheap: Vec<usize> = (0..specs.len())
                .filter(|&i| (cfg.samples as f64) * (specs[i].t as f64) <= cfg.max_mc_steps as f64)
                .collect();
            for i in 0..specs.len() {
                if !cheap.contains(&i) {
                    if cfg.method == ScanMethod::Mc {
                        warnings.push(format!(
                            "α={}, s={}, r={}: Monte Carlo budget exceeded",
                            specs[i].alpha, specs[i].s, ctx.hole.radius
                        ));
                        complete = false;
                    } else {
                        op_rows.push(i);
                    }
                }
            }
            if !cheap.is_empty() {
                let grid: Vec<usize> = cheap.iter().map(|&i| specs[i].t as usize).collect();
                let mut pilot_cfg = cfg.sampler.clone();
                pilot_cfg.seed = cfg.sampler.seed ^ 0x9e37_79b9_7f4a_7c15;
                let pilot = survival_curve_mc(map, &ctx.hole, &grid, PILOT_SAMPLES.min(cfg.samples), &pilot_cfg)?;
                for &i in &cheap {
                    let k = pilot.at(specs[i].t as usize).unwrap();
                    let p = pilot.p_hat[k];
                    if p * cfg.samples as f64 >= 100.0 && p >= 1e-8 {
                        mc_rows.push(i);
                    } else if cfg.method == ScanMethod::Mc {
                        return Err(OdxError::ConfigInvalid(format!(
                            "α={}, s={}, r={}: pilot predicts fewer than 100 survivors; use the operator method",
                            specs[i].alpha, specs[i].s, ctx.hole.radius
                        )));
                    } else {
                        op_rows.push(i);
                    }
                }
            }
        }
    }
    if !mc_rows.is_empty() {
        let grid: Vec<usize> = mc_rows.iter().map(|&i| specs[i].t as usize).collect();
        let curve = survival_curve_mc(map, &ctx.hole, &grid, cfg.samples, &cfg.sampler)?;
        for &i in &mc_rows {
            let k = curve.at(specs[i].t as usize).unwrap();
            out.push(make_row(ctx, &specs[i], SurvivalMethod::Mc, curve.log_p[k], curve.ci_lo[k].ln(), curve.ci_hi[k].ln()));
        }
    }
    if !op_rows.is_empty() {
        let times: Vec<usize> = op_rows.iter().map(|&i| specs[i].t as usize).collect();
        let (log_p, _) = {
            let hole = ctx.hole;
            let (op, masses) = ctx.operator(map, &cfg.partition)?;
            let p = puncture(op, Some(&hole));
            survival_log_series_capped(&p, masses, &times, SETTLE_TOL, cfg.max_operator_steps)?
        };
        for (k, &i) in op_rows.iter().enumerate() {
            if log_p[k].is_nan() {
                warnings.push(format!(
                    "α={}, s={}, r={}: operator step budget exceeded before t={}",
                    specs[i].alpha, specs[i].s, ctx.hole.radius, specs[i].t
                ));
                complete = false;
                continue;
            }
            out.push(make_row(ctx, &specs[i], SurvivalMethod::Operator, log_p[k], log_p[k], log_p[k]));
        }
    }
    Ok(complete)
}

fn extrapolate(rows: &[ScanRow], alpha: f64, s: f64) -> Option<Extrapolant> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.alpha == alpha && r.s == s && r.l_hat.is_finite())
        .map(|r| (r.mu_u, r.l_hat))
        .collect();
    let l_hat = match pts.len() {
        0 => return None,
        1 => pts[0].1,
        _ => {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            linear_fit(&xs, &ys)?.0
        }
    };
    Some(Extrapolant { alpha, s, l_hat, points: pts.len() })
}

/// The `L̂_{α,s}` grid over a hole family, with per-`(α, s)` extrapolants and
/// transition detection.
pub fn l_alpha_scan(map: &IntervalMap, holes: &HoleFamily, cfg: &ScanConfig) -> Result<ScanResult> {
    if cfg.alphas.is_empty() || cfg.s.is_empty() || holes.radii.is_empty() {
        return Err(OdxError::ConfigInvalid("empty α, s or radius grid".into()));
    }
    if cfg.s.iter().any(|&s| !(s > 0.0)) || cfg.alphas.iter().any(|&a| !(a >= 0.0)) {
        return Err(OdxError::ConfigInvalid("s must be positive and α nonnegative".into()));
    }
    cfg.sampler.validate()?;
    let mut ctxs: Vec<HoleContext> = holes.holes().map(|h| HoleContext::new(map, h)).collect();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut complete = true;
    for ctx in ctxs.iter_mut() {
        complete &= rows_for_hole(map, ctx, &cfg.alphas, cfg, &mut rows, &mut warnings)?;
    }
    let mut alphas = cfg.alphas.clone();
    let mut extrapolated: Vec<Extrapolant> = Vec::new();
    for &a in &alphas {
        for &s in &cfg.s {
            extrapolated.extend(extrapolate(&rows, a, s));
        }
    }
    let mut alpha0 = Vec::new();
    for &s in &cfg.s {
        let Some(mut est) = detect_transition(&extrapolated, s) else { continue };
        for _ in 0..cfg.refine_steps {
            let mid = 0.5 * (est.bracket.0 + est.bracket.1);
            if alphas.iter().any(|&a| (a - mid).abs() < 1e-12) {
                break;
            }
            let scfg = ScanConfig { s: vec![s], ..cfg.clone() };
            for ctx in ctxs.iter_mut() {
                complete &= rows_for_hole(map, ctx, &[mid], &scfg, &mut rows, &mut warnings)?;
            }
            alphas.push(mid);
            let Some(e) = extrapolate(&rows, mid, s) else { break };
            if e.l_hat < est.threshold {
                est.bracket.1 = mid;
                est.alpha0 = mid;
            } else {
                est.bracket.0 = mid;
            }
            extrapolated.push(e);
        }
        alpha0.push(est);
    }
    rows.sort_by(|a, b| {
        a.alpha.total_cmp(&b.alpha).then(a.s.total_cmp(&b.s)).then(b.r.total_cmp(&a.r))
    });
    extrapolated.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.s.total_cmp(&b.s)));
    Ok(ScanResult { rows, extrapolated, alpha0, complete, warnings })
}

/// Smallest grid `α` whose extrapolant falls below a tenth of the median
/// extrapolant over `α ≤ 1`.
pub fn detect_transition(extrapolated: &[Extrapolant], s: f64) -> Option<TransitionEstimate> {
    let mut pts: Vec<(f64, f64)> = extrapolated.iter().filter(|e| e.s == s).map(|e| (e.alpha, e.l_hat)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let low: Vec<f64> = pts.iter().filter(|p| p.0 <= 1.0).map(|p| p.1).collect();
    let threshold = 0.1 * median(&low)?;
    let k = pts.iter().position(|p| p.0 > 1.0 && p.1 < threshold)?;
    let below = pts[k].0;
    let above = pts[..k].last().map(|p| p.0).unwrap_or(below);
    Some(TransitionEstimate { s, alpha0: below, bracket: (above, below), threshold })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `L̂ > 1 + 3·(CI half-width)`.
    Exceeds,
    /// `p̂` underflowed to zero.
    NonFinite,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundViolation {
    pub row: usize,
    pub kind: ViolationKind,
    pub l_hat: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub checked: usize,
    pub violations: Vec<BoundViolation>,
    /// `(row, L̂, companion, companion half-width)` for every checked row.
    pub companions: Vec<(usize, f64, f64, f64)>,
}

/// Checks `L̂ ≤ 1` up to three CI half-widths on every row with `α < 1`.
pub fn unit_bound_check(rows: &[ScanRow]) -> BoundReport {
    let mut violations = Vec::new();
    let mut companions = Vec::new();
    let mut checked = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.alpha >= 1.0 {
            continue;
        }
        checked += 1;
        companions.push((i, r.l_hat, r.companion, 0.5 * (r.companion_hi - r.companion_lo)));
        if !r.l_hat.is_finite() {
            violations.push(BoundViolation { row: i, kind: ViolationKind::NonFinite, l_hat: r.l_hat, bound: 1.0 });
            continue;
        }
        let bound = 1.0 + 3.0 * r.half_width();
        if r.l_hat > bound {
            violations.push(BoundViolation { row: i, kind: ViolationKind::Exceeds, l_hat: r.l_hat, bound });
        }
    }
    BoundReport { checked, violations, companions }
}

/// The fixed-`t` limit as `r → 0`.
#[derive(Clone, Debug, Serialize)]
pub struct AlphaZeroRow {
    pub r: f64,
    pub mu_u: f64,
    /// `μ(⋃_{j=0}^{t} f^{-j}U)`.
    pub union_measure: f64,
    /// `−log(1 − union) / μ(U)`.
    pub value: f64,
    /// `−log μ(τ > t) / (t μ(U))`, the `α = 0` row of the scaled limit.
    pub l_hat: f64,
    pub omitted_mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AlphaZeroResult {
    pub t: usize,
    pub period: Option<usize>,
    pub rows: Vec<AlphaZeroRow>,
    pub extrapolated: f64,
    /// `t + 1` off periodic orbits, `pk + p − pk e^{S_pφ(z)}` when `t + 1 = (k+1)p`.
    pub target: Option<f64>,
}

/// `−log μ(τ_r > t) / μ(U_r)` for fixed `t` by exact preimage arithmetic,
/// counting an orbit that starts in the hole as having hit it.
pub fn alpha_zero_limit(map: &IntervalMap, holes: &HoleFamily, t: usize, budget: usize) -> Result<AlphaZeroResult> {
    if t == 0 {
        return Err(OdxError::ConfigInvalid("t must be at least 1".into()));
    }
    let acip = map.acip();
    let classes = holes.period.unwrap_or(t + 1);
    let mut rows = Vec::new();
    for hole in holes.holes() {
        let u = hole.as_set();
        let mu = u.measure_with(acip);
        let mut level = u.clone();
        let mut by_class: Vec<IntervalSet> = vec![IntervalSet::empty(); classes];
        by_class[0] = u.clone();
        let mut later = IntervalSet::empty();
        let mut omitted = 0.0;
        for j in 1..=t {
            level = preimage_set(map, &level, 1, budget)?;
            omitted += level.omitted_mass;
            by_class[j % classes] = by_class[j % classes].union(&level);
            later = later.union(&level);
        }
        let all = later.union(&u);
        let total = all.measure_with(acip);
        let split: f64 = by_class.iter().map(|s| s.measure_with(acip)).sum();
        if (split - total).abs() > 1e-9 * mu + 1e-15 {
            return Err(OdxError::DisjointnessFailed(hole.radius));
        }
        let value = -(-total).ln_1p() / mu;
        let l_hat = -(-later.measure_with(acip)).ln_1p() / (t as f64 * mu);
        rows.push(AlphaZeroRow { r: hole.radius, mu_u: mu, union_measure: total, value, l_hat, omitted_mass: omitted });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.mu_u).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let extrapolated = if rows.len() == 1 {
        ys[0]
    } else {
        linear_fit(&xs, &ys).ok_or_else(|| OdxError::Degenerate("cannot extrapolate".into()))?.0
    };
    let target = match holes.period {
        None => Some((t + 1) as f64),
        Some(p) if (t + 1) % p == 0 => {
            let k = ((t + 1) / p - 1) as f64;
            let w = map.weight_product(&Potential::Geometric, holes.centre, p)?;
            let p = p as f64;
            Some(p * k + p - p * k * w)
        }
        Some(_) => None,
    };
    Ok(AlphaZeroResult { t, period: holes.period, rows, extrapolated, target })
}
