use serde::Serialize;

use crate::error::{OdxError, Result};

/// Step of the stretched-exponent grid on `[0.2, 0.9]`.
const GAMMA_STEP: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum FitClass {
    /// `log v ≈ a − rate·u`.
    Exponential { rate: f64 },
    /// `log v ≈ a − c·u^γ`.
    Stretched { gamma: f64, c: f64 },
    /// `log v ≈ a − β log u`.
    Polynomial { beta: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct FitCandidate {
    #[serde(flatten)]
    pub class: FitClass,
    pub r2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailFit {
    pub candidates: Vec<FitCandidate>,
    pub selected: FitClass,
    pub points: usize,
}

fn regress(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 0.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

/// Regresses `log value` on `u`, on `u^γ` for each grid `γ`, and on
/// `log u`, and picks the class with the largest `R²`. Nonpositive values
/// are dropped.
pub fn tail_fit(u: &[f64], values: &[f64]) -> Result<TailFit> {
    if u.len() != values.len() {
        return Err(OdxError::ConfigInvalid("u and values differ in length".into()));
    }
    let (us, ls): (Vec<f64>, Vec<f64>) =
        u.iter().zip(values).filter(|(u, v)| **u > 0.0 && **v > 0.0).map(|(u, v)| (*u, v.ln())).unzip();
    if us.is_empty() || ls.iter().all(|l| *l == ls[0]) {
        return Err(OdxError::Degenerate("tail values are constant or zero".into()));
    }
    let (umin, umax) = us.iter().fold((f64::MAX, f64::MIN), |(a, b), &u| (a.min(u), b.max(u)));
    if us.len() < 8 || umax < 10.0 * umin {
        return Err(OdxError::ConfigInvalid("need at least 8 points spanning a decade in u".into()));
    }
    let mut candidates = Vec::new();
    let (b, r2) = regress(&us, &ls);
    candidates.push(FitCandidate { class: FitClass::Exponential { rate: -b }, r2 });
    let steps = ((0.9 - 0.2) / GAMMA_STEP).round() as usize;
    let mut best: Option<FitCandidate> = None;
    for i in 0..=steps {
        let gamma = 0.2 + GAMMA_STEP * i as f64;
        let xs: Vec<f64> = us.iter().map(|u| u.powf(gamma)).collect();
        let (b, r2) = regress(&xs, &ls);
        if best.as_ref().is_none_or(|c| r2 > c.r2) {
            best = Some(FitCandidate { class: FitClass::Stretched { gamma, c: -b }, r2 });
        }
    }
    candidates.push(best.unwrap());
    let logs: Vec<f64> = us.iter().map(|u| u.ln()).collect();
    let (b, r2) = regress(&logs, &ls);
    candidates.push(FitCandidate { class: FitClass::Polynomial { beta: -b }, r2 });
    let selected = candidates.iter().max_by(|a, b| a.r2.total_cmp(&b.r2)).unwrap().class;
    Ok(TailFit { candidates, selected, points: us.len() })
}
