//! Small numerical helpers shared across modules.

/// `ψ(y) − ψ(x)` for `x, y > 0`, accurate when `x` and `y` are close and
/// large.
pub fn digamma_diff(x: f64, y: f64) -> f64 {
    let (mut x, mut y) = (x, y);
    let mut acc = 0.0;
    // ψ(z) = ψ(z+1) − 1/z
    while x < 16.0 || y < 16.0 {
        acc += 1.0 / x - 1.0 / y;
        x += 1.0;
        y += 1.0;
    }
    // ψ(z) ~ ln z − 1/(2z) − 1/(12z²) + 1/(120z⁴) − 1/(252z⁶) + 1/(240z⁸)
    let d = y - x;
    let ln = (d / x).ln_1p();
    let inv1 = d / (2.0 * x * y);
    let (x2, y2) = (x * x, y * y);
    let inv2 = d * (x + y) / (12.0 * x2 * y2);
    let (x4, y4) = (x2 * x2, y2 * y2);
    let inv4 = (y4 - x4) / (120.0 * x4 * y4);
    let (x6, y6) = (x4 * x2, y4 * y2);
    let inv6 = (y6 - x6) / (252.0 * x6 * y6);
    let (x8, y8) = (x4 * x4, y4 * y4);
    let inv8 = (y8 - x8) / (240.0 * x8 * y8);
    // each invK is 1/(c x^K) − 1/(c y^K)
    ln + inv1 + inv2 - inv4 + inv6 - inv8 + acc
}

/// Wilson score interval at 95% for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    const Z: f64 = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

/// Weighted least squares `y ≈ a + b x`.
pub fn weighted_linear_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Option<(f64, f64)> {
    let sw: f64 = ws.iter().sum();
    if xs.len() < 2 || sw <= 0.0 {
        return None;
    }
    let mx = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}
