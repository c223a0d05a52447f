//! Dense row-major 2-D scalar grid used for fields and normalized images.

use crate::{Error, Result};

/// H×W grid of f64 values, row-major (`data[row * w + col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Grid2D {
    pub fn zeros(h: usize, w: usize) -> Self {
        Grid2D {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::invalid(format!(
                "grid data length {} does not match {}x{}",
                data.len(),
                h,
                w
            )));
        }
        Ok(Grid2D { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push(f(i, j));
            }
        }
        Grid2D { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.w + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.w + col] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean of |v| over the 1-pixel outer ring (corners counted once).
    pub fn ring_mean_abs(&self) -> f64 {
        let (h, w) = (self.h, self.w);
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..h {
            for j in 0..w {
                if i == 0 || i == h - 1 || j == 0 || j == w - 1 {
                    sum += self.get(i, j).abs();
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    /// Mean of |v| over the ring of the centered half-size sub-grid.
    pub fn half_ring_mean_abs(&self) -> f64 {
        let (h, w) = (self.h, self.w);
        let (hh, hw) = (h / 2, w / 2);
        let (top, left) = (h / 4, w / 4);
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..hh {
            for j in 0..hw {
                if i == 0 || i == hh - 1 || j == 0 || j == hw - 1 {
                    sum += self.get(top + i, left + j).abs();
                    count += 1;
                }
            }
        }
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_means_count_corners_once() {
        let g = Grid2D::from_fn(4, 4, |_, _| 1.0);
        // 4x4 ring has 12 cells; all ones -> mean 1.
        assert_eq!(g.ring_mean_abs(), 1.0);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Grid2D::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
