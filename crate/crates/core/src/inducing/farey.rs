use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{OdxError, Result};
use crate::interval_maps::{Acip, BranchCount, BranchFamily, IntervalMap};

/// Decay class of `t_n = μ_Y(R ≥ n)`, normalised so that `t₁ = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailClass {
    /// `t_n = θ^{n−1}`.
    Exponential { theta: f64 },
    /// `t_n = e^{−c(n^γ − 1)}`.
    Stretched { c: f64, gamma: f64 },
    /// `t_n = n^{−β}`.
    Polynomial { beta: f64 },
}

/// Serialised as `{class, params, depth}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TailSpecRepr", into = "TailSpecRepr")]
pub struct TailSpec {
    pub class: TailClass,
    pub depth: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TailSpecRepr {
    class: String,
    params: serde_json::Value,
    depth: usize,
}

impl TryFrom<TailSpecRepr> for TailSpec {
    type Error = String;

    fn try_from(r: TailSpecRepr) -> std::result::Result<Self, String> {
        let v = serde_json::json!({ "class": r.class, "params": r.params });
        let class = serde_json::from_value(v).map_err(|e| e.to_string())?;
        Ok(TailSpec { class, depth: r.depth })
    }
}

impl From<TailSpec> for TailSpecRepr {
    fn from(t: TailSpec) -> Self {
        let v = serde_json::to_value(&t.class).expect("tail class serialises");
        TailSpecRepr { class: v["class"].as_str().unwrap_or_default().to_string(), params: v["params"].clone(), depth: t.depth }
    }
}

impl TailClass {
    pub fn t(&self, n: f64) -> f64 {
        match *self {
            TailClass::Exponential { theta } => theta.powf(n - 1.0),
            TailClass::Stretched { c, gamma } => (-c * (n.powf(gamma) - 1.0)).exp(),
            TailClass::Polynomial { beta } => n.powf(-beta),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TailClass::Exponential { theta } => theta > 0.0 && theta < 1.0,
            TailClass::Stretched { c, gamma } => c > 0.0 && gamma > 0.0 && gamma < 1.0,
            // β ≤ 1 has no finite invariant probability
            TailClass::Polynomial { beta } => beta > 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(OdxError::ConfigInvalid(format!("tail parameters out of range: {self:?}")))
        }
    }

    /// `Σ_{n > N} t_n`.
    fn tail_sum(&self, big_n: usize) -> f64 {
        let n = big_n as f64;
        match *self {
            TailClass::Exponential { theta } => theta.powf(n) / (1.0 - theta),
            TailClass::Polynomial { beta } => (n + 0.5).powf(1.0 - beta) / (beta - 1.0),
            TailClass::Stretched { .. } => {
                let mut acc = 0.0;
                let mut k = big_n + 1;
                loop {
                    let v = self.t(k as f64);
                    acc += v;
                    if v <= 1e-18 * acc || v == 0.0 || k > big_n + 200_000_000 {
                        break;
                    }
                    k += 1;
                }
                acc
            }
        }
    }
}

impl TailSpec {
    /// `t_1, …, t_{depth+1}` (index 0 holds `t_1` as well, unused).
    pub fn sequence(&self) -> Result<Vec<f64>> {
        self.class.validate()?;
        if self.depth < 2 {
            return Err(OdxError::ConfigInvalid("depth must be at least 2".into()));
        }
        if !(self.class.t((self.depth + 1) as f64) > f64::MIN_POSITIVE) {
            return Err(OdxError::ConfigInvalid(format!(
                "t_n underflows before depth {}; lower the depth",
                self.depth
            )));
        }
        Ok((0..=self.depth + 1).map(|n| self.class.t(n.max(1) as f64)).collect())
    }

    /// `a_n = t_n − t_{n+1}` for `n = 1..=depth`, checked positive and
    /// nonincreasing.
    pub fn lengths(&self) -> Result<Vec<f64>> {
        let t = self.sequence()?;
        let a: Vec<f64> = (1..=self.depth).map(|n| t[n] - t[n + 1]).collect();
        for n in 0..a.len() {
            if !(a[n] > 0.0) || (n > 0 && a[n] > a[n - 1] * (1.0 + 1e-12)) {
                return Err(OdxError::NonMonotoneLengths(n + 1));
            }
        }
        Ok(a)
    }

    /// `Σ_n t_n = E[R_Y] = 1/μ(A₁)`.
    pub fn mean_return(&self) -> Result<f64> {
        let t = self.sequence()?;
        Ok(t[1..=self.depth].iter().sum::<f64>() + self.class.tail_sum(self.depth))
    }
}

/// Branch `k < depth` is `A_{k+1} = (t_{k+2}, t_{k+1}]`; branch `depth` is the
/// remainder `[0, t_{depth+1}]`, sent linearly onto `[0, t_depth]`.
pub(crate) struct FareyFamily {
    pub t: Vec<f64>,
    pub depth: usize,
}

impl FareyFamily {
    fn a(&self, n: usize) -> f64 {
        self.t[n] - self.t[n + 1]
    }
}

impl BranchFamily for FareyFamily {
    fn count(&self) -> BranchCount {
        BranchCount::Finite(self.depth + 1)
    }

    fn locate(&self, x: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&x) {
            return None;
        }
        if x <= self.t[self.depth + 1] {
            return Some(self.depth);
        }
        // first n ≥ 1 with t_{n+1} < x
        let n = 1 + self.t[1..=self.depth + 1].partition_point(|&v| v >= x);
        Some(n - 2)
    }

    fn domain(&self, k: usize) -> (f64, f64) {
        if k == self.depth {
            (0.0, self.t[self.depth + 1])
        } else {
            (self.t[k + 2], self.t[k + 1])
        }
    }

    fn forward(&self, k: usize, x: f64) -> f64 {
        let d = self.depth;
        if k == d {
            return x * self.t[d] / self.t[d + 1];
        }
        if k == 0 {
            return ((1.0 - x) / self.a(1)).clamp(0.0, 1.0);
        }
        let n = k + 1;
        self.a(n - 1) * (x - self.t[n + 1]) / self.a(n) + self.t[n]
    }

    fn derivative(&self, k: usize, _x: f64) -> f64 {
        let d = self.depth;
        if k == d {
            self.t[d] / self.t[d + 1]
        } else if k == 0 {
            1.0 / self.a(1)
        } else {
            self.a(k) / self.a(k + 1)
        }
    }

    fn inverse(&self, k: usize, y: f64) -> Option<f64> {
        let d = self.depth;
        Some(if k == d {
            y * self.t[d + 1] / self.t[d]
        } else if k == 0 {
            1.0 - self.a(1) * y
        } else {
            let n = k + 1;
            (y - self.t[n]) * self.a(n) / self.a(n - 1) + self.t[n + 1]
        })
    }

    fn increasing(&self, k: usize) -> bool {
        k != 0
    }

    fn branches_meeting(&self, a: f64, b: f64, limit: usize) -> Vec<usize> {
        let hi = self.locate(a.clamp(0.0, 1.0)).unwrap_or(self.depth);
        let lo = self.locate(b.clamp(0.0, 1.0)).unwrap_or(0);
        let mut out = Vec::new();
        let mut k = hi;
        loop {
            let (u, v) = self.domain(k);
            if u < b && v > a {
                out.push(k);
            }
            if k == lo || out.len() >= limit {
                break;
            }
            k -= 1;
        }
        out
    }
}

/// The generalised Farey map with `|A_n| = a_n`, together with its
/// invariant density `t_n / (a_n Σ t)` on `A_n`.
pub fn build_farey(spec: &TailSpec) -> Result<IntervalMap> {
    let a = spec.lengths()?;
    let t = spec.sequence()?;
    let d = spec.depth;
    let total = spec.mean_return()?;
    // push-forward balance m_n = m_1 a_n + m_{n+1}
    let m = |n: usize| t[n] / total;
    let residual = (1..d)
        .map(|n| ((m(1) * a[n - 1] + m(n + 1)) - m(n)).abs() / m(n))
        .fold(0.0, f64::max);
    if residual > 1e-9 {
        return Err(OdxError::NumericalFailure(format!("invariance residual {residual:e}")));
    }
    let mut breaks = Vec::with_capacity(d + 2);
    let mut values = Vec::with_capacity(d + 1);
    breaks.push(0.0);
    values.push(spec.class.tail_sum(d) / total / t[d + 1]);
    for n in (1..=d).rev() {
        breaks.push(t[n + 1]);
        values.push(m(n) / a[n - 1]);
    }
    breaks.push(1.0);
    let acip = Acip::piecewise_constant(breaks, values)?;
    let name = "farey";
    let mut map = IntervalMap::new(name, Arc::new(FareyFamily { t, depth: d }))
        .with_acip(acip)
        .with_param("depth", d as f64)
        .with_param("mu_y", 1.0 / total)
        .with_param("invariance_residual", residual);
    map = match spec.class {
        TailClass::Exponential { theta } => map.with_param("theta", theta),
        TailClass::Stretched { c, gamma } => map.with_param("c", c).with_param("gamma", gamma),
        TailClass::Polynomial { beta } => map.with_param("beta", beta),
    };
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(class: TailClass, depth: usize) -> TailSpec {
        TailSpec { class, depth }
    }

    #[test]
    fn sequences_match_closed_forms() {
        let e = spec(TailClass::Exponential { theta: 0.5 }, 40).lengths().unwrap();
        for (i, a) in e.iter().enumerate() {
            assert!((a - 0.5f64.powi(i as i32 + 1)).abs() < 1e-16);
        }
        let p = spec(TailClass::Polynomial { beta: 2.0 }, 100).lengths().unwrap();
        for (i, a) in p.iter().enumerate() {
            let n = (i + 1) as f64;
            assert!((a - (n.powi(-2) - (n + 1.0).powi(-2))).abs() < 1e-15);
        }
        let s = spec(TailClass::Stretched { c: 1.0, gamma: 0.5 }, 10_000);
        assert!(s.lengths().is_ok());
        let t = s.sequence().unwrap();
        assert!((t[4] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn json_form_round_trips() {
        let j = r#"{"class":"stretched","params":{"c":1.0,"gamma":0.5},"depth":100}"#;
        let t: TailSpec = serde_json::from_str(j).unwrap();
        assert_eq!(t.class, TailClass::Stretched { c: 1.0, gamma: 0.5 });
        assert_eq!(serde_json::to_string(&t).unwrap(), j);
        assert!(serde_json::from_str::<TailSpec>(r#"{"class":"polynomial","params":{"beta":2,"x":1},"depth":5}"#).is_err());
        assert!(serde_json::from_str::<TailSpec>(r#"{"class":"polynomial","params":{"beta":2},"depth":5,"y":0}"#).is_err());
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(spec(TailClass::Polynomial { beta: 1.0 }, 10).lengths().is_err());
        assert!(spec(TailClass::Exponential { theta: 1.5 }, 10).lengths().is_err());
        assert!(spec(TailClass::Stretched { c: 1.0, gamma: 0.5 }, 1_000_000_000).sequence().is_err());
    }

    #[test]
    fn mean_return_sums_tails() {
        let e = spec(TailClass::Exponential { theta: 0.5 }, 20).mean_return().unwrap();
        assert!((e - 2.0).abs() < 1e-14);
        let p = spec(TailClass::Polynomial { beta: 2.0 }, 1000).mean_return().unwrap();
        assert!((p - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-7);
    }

    #[test]
    fn geometric_farey_is_lebesgue_invariant() {
        let f = build_farey(&spec(TailClass::Exponential { theta: 0.5 }, 50)).unwrap();
        let acip = f.acip().unwrap();
        for x in [0.01, 0.3, 0.6, 0.9] {
            assert!((acip.density(x) - 1.0).abs() < 1e-12);
        }
        assert_eq!(f.evaluate(0.75).unwrap().0, 0.5);
        assert!((f.evaluate(0.375).unwrap().0 - 0.75).abs() < 1e-15);
        assert_eq!(f.evaluate(0.0).unwrap().0, 0.0);
    }

    #[test]
    fn stretched_farey_pushes_density_forward() {
        let f = build_farey(&spec(TailClass::Stretched { c: 1.0, gamma: 0.5 }, 2000)).unwrap();
        assert!(f.param("invariance_residual").unwrap() < 1e-12);
        let fam = f.family();
        assert_eq!(fam.locate(1.0), Some(0));
        let (lo, hi) = fam.domain(3);
        assert_eq!(fam.locate(hi), Some(3));
        assert_eq!(fam.locate(lo), Some(4));
        let y = fam.forward(3, 0.5 * (lo + hi));
        assert!((fam.inverse(3, y).unwrap() - 0.5 * (lo + hi)).abs() < 1e-15);
        let (a2, b2) = fam.domain(2);
        assert!((fam.forward(3, hi) - b2).abs() < 1e-15 && (fam.forward(3, lo) - a2).abs() < 1e-15);
        assert_eq!(fam.branches_meeting(lo, 1.0, 100), vec![3, 2, 1, 0]);
    }
}
