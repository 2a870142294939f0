use std::io::Write;

use serde::Serialize;

use super::Partition;
use crate::error::{OdxError, Result};
use crate::interval_maps::{BranchFamily, IntervalMap};
use crate::open_systems::Hole;
use crate::par;

/// Full branches inside one cell beyond which their contributions are
/// summed in closed form.
const AGGREGATE_ABOVE: usize = 32;
const BRANCH_LIMIT: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuildMethod {
    ExactInverse,
    Bisection,
}

/// Column-stochastic Ulam matrix in compressed-column form, acting on
/// vectors of cell masses.
#[derive(Clone, Debug)]
pub struct UlamOperator {
    pub partition: Partition,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    vals: Vec<f64>,
    pub method: BuildMethod,
    /// Largest per-column mass lost to branch truncation.
    pub truncation_mass: f64,
}

pub fn build_ulam(map: &IntervalMap, partition: &Partition) -> Result<UlamOperator> {
    let n = partition.len();
    if n >= u32::MAX as usize {
        return Err(OdxError::BudgetExceeded(n));
    }
    const CHUNK: usize = 256;
    let chunks = n.div_ceil(CHUNK);
    let cols: Vec<Vec<(Vec<(u32, f64)>, f64, bool)>> = par::map_indexed(chunks, |c| {
        (c * CHUNK..((c + 1) * CHUNK).min(n))
            .map(|j| column(map.family(), partition, j))
            .collect()
    });
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut vals = Vec::new();
    let mut truncation_mass = 0.0f64;
    let mut bisected = false;
    col_ptr.push(0);
    for (entries, lost, bis) in cols.into_iter().flatten() {
        for (i, v) in entries {
            row_idx.push(i);
            vals.push(v);
        }
        col_ptr.push(row_idx.len());
        truncation_mass = truncation_mass.max(lost);
        bisected |= bis;
    }
    Ok(UlamOperator {
        partition: partition.clone(),
        col_ptr,
        row_idx,
        vals,
        method: if bisected { BuildMethod::Bisection } else { BuildMethod::ExactInverse },
        truncation_mass,
    })
}

fn inverse_or_bisect(fam: &dyn BranchFamily, j: usize, y: f64, lo: f64, hi: f64, bis: &mut bool) -> f64 {
    if let Some(x) = fam.inverse(j, y) {
        return x.clamp(lo, hi);
    }
    *bis = true;
    let inc = fam.increasing(j);
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = fam.forward(j, m);
        if (fm < y) == inc {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Entries of column `j` as `(row, value)`, the mass lost to truncation,
/// and whether bisection was needed.
fn column(fam: &dyn BranchFamily, part: &Partition, j: usize) -> (Vec<(u32, f64)>, f64, bool) {
    let (a, b) = part.cell(j);
    let w = b - a;
    let mut entries: Vec<(u32, f64)> = Vec::new();
    let mut bis = false;
    let mut covered = 0.0;

    let explicit: Vec<usize> = match fam.full_branch_range(a, b) {
        Some((k0, k1)) if k1.is_none_or(|k1| k1 - k0 > AGGREGATE_ABOVE) => {
            for i in 0..part.len() {
                let (c, d) = part.cell(i);
                if let Some(m) = fam.full_branch_mass(k0, k1, c, d) {
                    if m > 0.0 {
                        entries.push((i as u32, m / w));
                        covered += m;
                    }
                }
            }
            let mut ex = Vec::new();
            if k0 >= 2 {
                ex.push(k0 - 1);
            }
            if let Some(k1) = k1 {
                ex.push(k1);
            }
            ex.into_iter()
                .filter(|&k| {
                    let (da, db) = fam.domain(k);
                    da < b && db > a
                })
                .collect()
        }
        _ => fam.branches_meeting(a, b, BRANCH_LIMIT),
    };

    for k in explicit {
        let (da, db) = fam.domain(k);
        let (lo, hi) = (a.max(da), b.min(db));
        if hi <= lo {
            continue;
        }
        covered += hi - lo;
        let inc = fam.increasing(k);
        let (ya, yb) = (fam.forward(k, lo), fam.forward(k, hi));
        let (c, d) = (ya.min(yb).clamp(0.0, 1.0), ya.max(yb).clamp(0.0, 1.0));
        let i_lo = part.locate(c);
        let i_hi = if d >= 1.0 {
            part.len() - 1
        } else {
            part.boundaries.partition_point(|&x| x < d).saturating_sub(1).max(i_lo)
        };
        // preimages of interior boundaries, in increasing x
        let mut xs = Vec::with_capacity(i_hi - i_lo + 2);
        xs.push(lo);
        let inner: Vec<f64> = (i_lo + 1..=i_hi)
            .map(|i| inverse_or_bisect(fam, k, part.boundaries[i], lo, hi, &mut bis))
            .collect();
        if inc {
            xs.extend(inner);
        } else {
            xs.extend(inner.into_iter().rev());
        }
        xs.push(hi);
        let pieces = xs.len() - 1;
        for p in 0..pieces {
            let len = (xs[p + 1] - xs[p]).max(0.0);
            if len <= 0.0 {
                continue;
            }
            let row = if inc { i_lo + p } else { i_hi - p };
            entries.push((row as u32, len / w));
        }
    }
    entries.sort_by_key(|e| e.0);
    let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
    for (i, v) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == i => last.1 += v,
            _ => merged.push((i, v)),
        }
    }
    let lost = ((w - covered) / w).max(0.0);
    (merged, lost, bis)
}

impl UlamOperator {
    pub fn n(&self) -> usize {
        self.partition.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n()).map(|j| self.column(j).map(|(_, v)| v).sum()).collect()
    }

    /// `out = M x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.row_idx[k] as usize] += self.vals[k] * xj;
            }
        }
    }

    /// `out = Mᵀ y`.
    pub fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                s += self.vals[k] * y[self.row_idx[k] as usize];
            }
            *o = s;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut m = vec![vec![0.0; n]; n];
        for j in 0..n {
            for (i, v) in self.column(j) {
                m[i][j] = v;
            }
        }
        m
    }

    /// Coordinate triplets `row,col,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        for j in 0..self.n() {
            for (i, v) in self.column(j) {
                writeln!(w, "{i},{j},{v:e}")?;
            }
        }
        Ok(())
    }
}

/// Ulam matrix composed with the indicator of the hole complement,
/// `M̊ = M · diag(w)`.
#[derive(Clone, Debug)]
pub struct PuncturedOperator<'a> {
    pub base: &'a UlamOperator,
    pub weights: Vec<f64>,
}

pub fn puncture<'a>(op: &'a UlamOperator, hole: Option<&Hole>) -> PuncturedOperator<'a> {
    let part = &op.partition;
    let weights = (0..part.len())
        .map(|j| match hole {
            None => 1.0,
            Some(h) => {
                let (a, b) = part.cell(j);
                let (u, v) = h.bounds();
                let overlap = (b.min(v) - a.max(u)).max(0.0);
                1.0 - overlap / (b - a)
            }
        })
        .collect();
    PuncturedOperator { base: op, weights }
}

impl PuncturedOperator<'_> {
    pub fn n(&self) -> usize {
        self.base.n()
    }

    /// `out = M (w ∘ x)`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let wx: Vec<f64> = x.iter().zip(&self.weights).map(|(a, b)| a * b).collect();
        self.base.apply(&wx, out);
    }

    /// `out = diag(w) Mᵀ y`.
    pub fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        self.base.apply_transpose(y, out);
        out.iter_mut().zip(&self.weights).for_each(|(o, w)| *o *= w);
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = self.base.to_dense();
        for row in m.iter_mut() {
            for (v, w) in row.iter_mut().zip(&self.weights) {
                *v *= w;
            }
        }
        m
    }
}

/// `sup_{|ψ|_∞ ≤ 1} ‖(M − M̊)ψ‖₁` on densities, which equals the Lebesgue
/// mass removed from the columns.
pub fn operator_l1_distance(op: &UlamOperator, punctured: &PuncturedOperator) -> Result<f64> {
    if punctured.base.partition != op.partition {
        return Err(OdxError::PartitionMismatch(format!(
            "{} cells vs {} cells",
            op.n(),
            punctured.n()
        )));
    }
    let sums = op.column_sums();
    Ok((0..op.n())
        .map(|j| op.partition.width(j) * (1.0 - punctured.weights[j]) * sums[j])
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_maps::{doubling, gauss, lsv};

    #[test]
    fn doubling_small_matrices() {
        let d = doubling();
        let m2 = build_ulam(&d, &Partition::uniform(2)).unwrap().to_dense();
        assert_eq!(m2, vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let op4 = build_ulam(&d, &Partition::uniform(4)).unwrap();
        let m4 = op4.to_dense();
        // cell 1 = [1/4, 1/2) maps onto [1/2, 1)
        assert_eq!((m4[2][1], m4[3][1]), (0.5, 0.5));
        assert_eq!(op4.method, BuildMethod::ExactInverse);
        let p = puncture(&op4, Some(&Hole::one_sided(0.0, 0.125)));
        assert_eq!(p.weights, vec![0.5, 1.0, 1.0, 1.0]);
        let op2 = build_ulam(&d, &Partition::uniform(2)).unwrap();
        let p2 = puncture(&op2, Some(&Hole::one_sided(0.0, 0.5)));
        assert_eq!(p2.to_dense(), vec![vec![0.0, 0.5], vec![0.0, 0.5]]);
        assert_eq!(operator_l1_distance(&op2, &p2).unwrap(), 0.5);
        assert_eq!(operator_l1_distance(&op2, &puncture(&op2, None)).unwrap(), 0.0);
    }

    #[test]
    fn columns_stochastic() {
        for (map, part) in [
            (doubling(), Partition::uniform(1000)),
            (gauss(), Partition::uniform(2000)),
            (gauss(), Partition::graded(512, 0.618, 0.9, 1e-7, 1e-5).unwrap()),
            (lsv(0.5).unwrap(), Partition::graded(512, 0.0, 0.9, 1e-9, 0.0).unwrap()),
        ] {
            let op = build_ulam(&map, &part).unwrap();
            for (j, s) in op.column_sums().into_iter().enumerate() {
                assert!((s - 1.0).abs() < 1e-10, "{} column {j}: {s}", map.name);
            }
        }
    }

    #[test]
    fn gauss_aggregated_column_matches_explicit_enumeration() {
        let part = Partition::uniform(50);
        let op = build_ulam(&gauss(), &part).unwrap();
        // column 0 = (0, 1/50): branches j ≥ 50
        let col: Vec<(usize, f64)> = op.column(0).collect();
        for (i, v) in col.iter().take(5) {
            let (c, d) = part.cell(*i);
            let direct: f64 = (50..2_000_000u64)
                .map(|k| 1.0 / (k as f64 + c) - 1.0 / (k as f64 + d))
                .sum::<f64>()
                * 50.0;
            assert!((v - direct).abs() < 1e-6, "{v} vs {direct}");
        }
    }

    #[test]
    fn csv_export() {
        let op = build_ulam(&doubling(), &Partition::uniform(2)).unwrap();
        let mut buf = Vec::new();
        op.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("row,col,value\n0,0,5e-1\n"));
        assert_eq!(s.lines().count(), 5);
    }
}
