//! Small value types shared by the planner, tracker and simulators.

use serde::{Deserialize, Serialize};

/// Box bounds on an action vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActionBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        ActionBounds { lower, upper }
    }

    pub fn symmetric(limits: &[f64]) -> Self {
        ActionBounds { lower: limits.iter().map(|l| -l).collect(), upper: limits.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_valid(&self) -> bool {
        self.lower.len() == self.upper.len() && self.lower.iter().zip(&self.upper).all(|(l, u)| l < u)
    }

    #[inline]
    pub fn clamp_channel(&self, c: usize, v: f64) -> f64 {
        v.clamp(self.lower[c], self.upper[c])
    }

    /// Clamps in place; returns true if any channel was clipped.
    pub fn clamp(&self, action: &mut [f64]) -> bool {
        let mut hit = false;
        for (c, a) in action.iter_mut().enumerate() {
            let v = self.clamp_channel(c, *a);
            if v != *a {
                hit = true;
            }
            *a = v;
        }
        hit
    }

    pub fn contains(&self, action: &[f64]) -> bool {
        action.iter().enumerate().all(|(c, a)| *a >= self.lower[c] && *a <= self.upper[c])
    }
}

/// A row-major sequence of equally sized vectors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sequence {
    width: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn zeros(rows: usize, width: usize) -> Self {
        Sequence { width, data: vec![0.0; rows * width] }
    }

    pub fn from_rows(width: usize, data: Vec<f64>) -> Self {
        assert!(width > 0 && data.len().is_multiple_of(width), "ragged sequence");
        Sequence { width, data }
    }

    pub fn from_vecs(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            assert_eq!(r.len(), width, "ragged sequence");
            data.extend_from_slice(r);
        }
        Sequence { width, data }
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn push_row(&mut self, row: &[f64]) {
        if self.data.is_empty() {
            self.width = row.len();
        }
        assert_eq!(row.len(), self.width, "ragged sequence");
        self.data.extend_from_slice(row);
    }
}
