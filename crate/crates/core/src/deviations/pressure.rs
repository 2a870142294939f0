use serde::Serialize;

use crate::error::{OdxError, Result};
use crate::inducing::InducedMap;
use crate::numeric::linear_fit;

/// Branches shorter than this fraction of `|Y|` are left out: their
/// endpoints sit next to a fixed point and `hi − lo` has few correct digits.
const MIN_REL_LEN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converges,
    Diverges,
    /// Ratio within 10% of one.
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct PressureProbe {
    pub t: f64,
    /// `e^{(φ + tψ)(x_j)}` in order of increasing return time.
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Geometric ratio per unit of return time, fitted on the second half
    /// of the terms.
    pub ratio: f64,
    pub verdict: Verdict,
    /// Where the fitted ratio crosses one.
    pub t_star: f64,
}

/// Partial sums of `Σ_j e^{(φ + tψ)(x_j)}` over the fixed points `x_j` of the
/// one-cylinders of an induced map with full linear branches,
/// `φ = −log|DF|` and `ψ = R_Y`. On a linear full branch
/// `|DF| = |Y| / |branch|`, so the fixed point need not be located.
/// Only branches of relative length at least `1e-9` are used.
pub fn pressure_series_probe(induced: &InducedMap, t: f64, j_max: usize) -> Result<PressureProbe> {
    let (ylo, yhi) = induced.base;
    let ylen = yhi - ylo;
    let mut branches: Vec<_> = induced.branches.iter().filter(|b| b.hi - b.lo >= MIN_REL_LEN * ylen).collect();
    branches.sort_by(|a, b| a.r.cmp(&b.r).then(a.lo.total_cmp(&b.lo)));
    branches.truncate(j_max);
    if branches.len() < 4 {
        return Err(OdxError::ConfigInvalid("pressure probe needs at least 4 branches".into()));
    }
    let map = induced.map();
    for b in &branches {
        let len = b.hi - b.lo;
        let img: Vec<f64> = [0.25, 0.75]
            .iter()
            .map(|th| map.iterate(b.lo + th * len, b.r).map_err(|_| OdxError::NonFullBranched))
            .collect::<Result<_>>()?;
        let up = (img[0] - (ylo + 0.25 * ylen)).abs().max((img[1] - (ylo + 0.75 * ylen)).abs());
        let down = (img[0] - (ylo + 0.75 * ylen)).abs().max((img[1] - (ylo + 0.25 * ylen)).abs());
        if up.min(down) > 1e-4 * ylen {
            return Err(OdxError::NonFullBranched);
        }
    }
    let logs: Vec<f64> = branches.iter().map(|b| ((b.hi - b.lo) / ylen).ln() + t * b.r as f64).collect();
    let terms: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    let mut acc = 0.0;
    let partial_sums = terms
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    let half = branches.len() / 2;
    let rs: Vec<f64> = branches[half..].iter().map(|b| b.r as f64).collect();
    let (_, slope) = linear_fit(&rs, &logs[half..]).ok_or_else(|| OdxError::Degenerate("return times all equal".into()))?;
    let ratio = slope.exp();
    let verdict = if ratio <= 0.9 {
        Verdict::Converges
    } else if ratio >= 1.1 {
        Verdict::Diverges
    } else {
        Verdict::Inconclusive
    };
    Ok(PressureProbe { t, terms, partial_sums, ratio, verdict, t_star: t - slope })
}
