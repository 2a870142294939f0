use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{build_ulam, power_leading, puncture, Partition, UlamOperator};
use crate::error::{OdxError, Result};
use crate::interval_maps::{BranchCount, IntervalMap, Potential};
use crate::numeric::linear_fit;
use crate::open_systems::{Hole, HoleFamily};

/// How the Ulam grid is chosen for a hole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionRule {
    Uniform { n: usize },
    /// `2^{⌈log₂(1/diam U)⌉ + extra_bits}` cells, capped at `max_n`.
    Dyadic { extra_bits: u32, max_n: usize },
    /// Uniform base grid refined toward the hole centre so that the hole
    /// holds about `cells_in_hole` cells; the refined core extends
    /// `core_factor` radii from the centre.
    Graded {
        base_n: usize,
        cells_in_hole: usize,
        ratio: f64,
        core_factor: f64,
        /// Further points to grade toward, e.g. a neutral fixed point.
        #[serde(default)]
        refine: Vec<Refinement>,
        /// Endpoints of the first `branch_breaks` branches become boundaries.
        #[serde(default)]
        branch_breaks: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Refinement {
    pub point: f64,
    pub floor: f64,
    pub ratio: f64,
}

impl PartitionRule {
    pub fn graded(base_n: usize, cells_in_hole: usize, ratio: f64, core_factor: f64) -> Self {
        PartitionRule::Graded { base_n, cells_in_hole, ratio, core_factor, refine: Vec::new(), branch_breaks: 0 }
    }

    pub fn partition(&self, map: &IntervalMap, hole: &Hole) -> Result<Partition> {
        let (a, b) = hole.bounds();
        let p = match self {
            PartitionRule::Uniform { n } => Partition::uniform(*n),
            PartitionRule::Dyadic { extra_bits, max_n } => {
                let bits = (1.0 / hole.diameter()).log2().ceil() as u32 + extra_bits;
                let n = 1usize.checked_shl(bits).unwrap_or(usize::MAX).min(*max_n);
                Partition::uniform(n)
            }
            PartitionRule::Graded { base_n, cells_in_hole, ratio, core_factor, refine, branch_breaks } => {
                let mut p = Partition::graded(
                    *base_n,
                    hole.centre,
                    *ratio,
                    hole.diameter() / (*cells_in_hole).max(1) as f64,
                    core_factor * hole.radius,
                )?;
                let mut extra = Vec::new();
                for r in refine {
                    extra.extend(Partition::graded(*base_n, r.point, r.ratio, r.floor, 0.0)?.boundaries);
                }
                let fam = map.family();
                let first = match fam.count() {
                    BranchCount::Finite(_) => 0,
                    _ => 1,
                };
                let last = match fam.count() {
                    BranchCount::Finite(n) => n.min(*branch_breaks),
                    _ => *branch_breaks + 1,
                };
                for j in first..last {
                    let (u, v) = fam.domain(j);
                    extra.push(u);
                    extra.push(v);
                }
                if !extra.is_empty() {
                    p = p.with_breaks_sorted(extra);
                }
                p
            }
        };
        Ok(p.with_breaks(&[a, b]))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EscapeRow {
    pub r: f64,
    pub mu_u: f64,
    pub neg_log_lambda: f64,
    pub ratio: f64,
    pub n_cells: usize,
    pub cells_in_hole: usize,
    pub rho: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EscapeScan {
    pub rows: Vec<EscapeRow>,
    /// Intercept of the linear fit of `ratio` against `μ(U_r)` over the
    /// three smallest holes.
    pub extrapolated: f64,
    /// `1 − e^{S_pφ(z)}` for a periodic centre, `1` otherwise.
    pub target: f64,
}

impl EscapeScan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,mu_U,neg_log_lambda,ratio,n_cells,cells_in_hole,rho")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:e},{:e},{:e},{:.12},{},{},{:e}",
                r.r, r.mu_u, r.neg_log_lambda, r.ratio, r.n_cells, r.cells_in_hole, r.rho
            )?;
        }
        Ok(())
    }
}

/// `μ(U)` from the known density, or from the Ulam invariant vector.
pub fn hole_measure(map: &IntervalMap, op: &UlamOperator, hole: &Hole, tol: f64) -> Result<f64> {
    if let Some(acip) = map.acip() {
        return Ok(hole.measure(Some(acip)));
    }
    let s = power_leading(&puncture(op, None), tol, 100_000)?;
    let part = &op.partition;
    let (u, v) = hole.bounds();
    Ok((0..part.len())
        .map(|j| {
            let (a, b) = part.cell(j);
            s.g[j] * (b.min(v) - a.max(u)).max(0.0)
        })
        .sum())
}

/// `−log λ_r / μ(U_r)` over a hole family, with the `r → 0` extrapolant.
pub fn escape_derivative_scan(map: &IntervalMap, holes: &HoleFamily, rule: &PartitionRule, tol: f64) -> Result<EscapeScan> {
    let mut rows = Vec::with_capacity(holes.radii.len());
    for hole in holes.holes() {
        let part = rule.partition(map, &hole)?;
        let (a, b) = hole.bounds();
        let inside = part.cells_inside(a, b);
        let op = build_ulam(map, &part)?;
        let spec = power_leading(&puncture(&op, Some(&hole)), tol, 1_000_000)?;
        let mu_u = hole_measure(map, &op, &hole, tol)?;
        let nll = -spec.lambda.ln();
        rows.push(EscapeRow {
            r: hole.radius,
            mu_u,
            neg_log_lambda: nll,
            ratio: nll / mu_u,
            n_cells: part.len(),
            cells_in_hole: inside,
            rho: spec.rho,
        });
    }
    let extrapolated = extrapolate_last3(&rows)?;
    let target = match holes.period {
        Some(p) => 1.0 - map.weight_product(&Potential::Geometric, holes.centre, p)?,
        None => 1.0,
    };
    Ok(EscapeScan { rows, extrapolated, target })
}

fn extrapolate_last3(rows: &[EscapeRow]) -> Result<f64> {
    let mut v: Vec<&EscapeRow> = rows.iter().collect();
    v.sort_by(|a, b| a.mu_u.total_cmp(&b.mu_u));
    let take: Vec<&EscapeRow> = v.into_iter().take(3).collect();
    if take.len() == 1 {
        return Ok(take[0].ratio);
    }
    let xs: Vec<f64> = take.iter().map(|r| r.mu_u).collect();
    let ys: Vec<f64> = take.iter().map(|r| r.ratio).collect();
    linear_fit(&xs, &ys)
        .map(|(a, _)| a)
        .ok_or_else(|| OdxError::Degenerate("cannot extrapolate escape ratios".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::doubling;
    use crate::open_systems::HoleShape;

    #[test]
    fn doubling_zero_ratio_tends_to_half() {
        let radii: Vec<f64> = (4..=10).map(|m| 2f64.powi(-m)).collect();
        let holes = HoleFamily::new(0.0, HoleShape::OneSided, radii).unwrap().with_period(Some(1));
        let rule = PartitionRule::Dyadic { extra_bits: 1, max_n: 1 << 14 };
        let scan = escape_derivative_scan(&doubling(), &holes, &rule, 1e-13).unwrap();
        assert!((scan.target - 0.5).abs() < 1e-15);
        assert!((scan.extrapolated - 0.5).abs() < 0.01, "{}", scan.extrapolated);
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("r,mu_U,neg_log_lambda,ratio,"));
    }
}
