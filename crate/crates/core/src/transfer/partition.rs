use serde::{Deserialize, Serialize};

use crate::error::{OdxError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grading {
    Uniform,
    /// Cells of width `floor` within `core` of `point`, growing by
    /// `1/ratio` per cell outside until they reach the base width.
    Geometric { point: f64, ratio: f64, floor: f64, core: f64 },
    Custom,
}

/// Ulam grid `0 = b₀ < b₁ < … < b_N = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub boundaries: Vec<f64>,
    pub grading: Grading,
}

impl Partition {
    pub fn uniform(n: usize) -> Self {
        let boundaries = (0..=n).map(|i| i as f64 / n as f64).collect();
        Partition { boundaries, grading: Grading::Uniform }
    }

    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        let ok = boundaries.len() >= 2
            && boundaries[0] == 0.0
            && *boundaries.last().unwrap() == 1.0
            && boundaries.windows(2).all(|w| w[1] > w[0]);
        if !ok {
            return Err(OdxError::ConfigInvalid(
                "partition boundaries must increase strictly from 0 to 1".into(),
            ));
        }
        Ok(Partition { boundaries, grading: Grading::Custom })
    }

    /// Uniform base grid of `base_n` cells refined geometrically toward
    /// `point`.
    pub fn graded(base_n: usize, point: f64, ratio: f64, floor: f64, core: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) || !(floor > 0.0) || !(0.0..=1.0).contains(&point) {
            return Err(OdxError::ConfigInvalid("bad graded partition parameters".into()));
        }
        let base = 1.0 / base_n as f64;
        let floor = floor.min(base);
        let mut right = Vec::new();
        let mut x = point;
        let mut w = floor;
        while x < 1.0 {
            right.push(x);
            x += w;
            if x - point >= core {
                w = (w / ratio).min(base);
            }
        }
        let mut left = Vec::new();
        let mut x = point;
        let mut w = floor;
        while x > 0.0 {
            x -= w;
            if x > 0.0 {
                left.push(x);
            }
            if point - x >= core {
                w = (w / ratio).min(base);
            }
        }
        let mut b = vec![0.0];
        b.extend(left.into_iter().rev());
        b.extend(right.into_iter().filter(|&v| v > 0.0));
        b.push(1.0);
        b.dedup_by(|p, q| *p <= *q);
        // merge a sliver at either end into its neighbour
        let min_w = floor * 0.5;
        if b.len() > 2 && b[1] - b[0] < min_w {
            b.remove(1);
        }
        let n = b.len();
        if n > 2 && b[n - 1] - b[n - 2] < min_w {
            b.remove(n - 2);
        }
        Ok(Partition {
            boundaries: b,
            grading: Grading::Geometric { point, ratio, floor, core },
        })
    }

    /// Adds the given points as cell boundaries (e.g. hole endpoints).
    pub fn with_breaks(mut self, pts: &[f64]) -> Self {
        for &p in pts {
            if p > 0.0 && p < 1.0 {
                let i = self.boundaries.partition_point(|&b| b < p);
                if self.boundaries[i] != p {
                    self.boundaries.insert(i, p);
                }
            }
        }
        self
    }

    /// Merges many boundary points at once, keeping the grading tag.
    pub fn with_breaks_sorted(mut self, mut pts: Vec<f64>) -> Self {
        pts.retain(|&p| p > 0.0 && p < 1.0);
        pts.extend_from_slice(&self.boundaries);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        self.boundaries = pts;
        self
    }

    pub fn len(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    pub fn width(&self, i: usize) -> f64 {
        self.boundaries[i + 1] - self.boundaries[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn max_width(&self) -> f64 {
        self.widths().into_iter().fold(0.0, f64::max)
    }

    /// Cell containing `y` (right-closed at 1).
    pub fn locate(&self, y: f64) -> usize {
        let i = self.boundaries.partition_point(|&b| b <= y);
        i.clamp(1, self.len()) - 1
    }

    /// Number of cells lying inside `(a, b)`.
    pub fn cells_inside(&self, a: f64, b: f64) -> usize {
        (0..self.len())
            .filter(|&i| {
                let (c, d) = self.cell(i);
                c >= a && d <= b
            })
            .count()
    }
}
