//! Row-major 2-D grids used for slices, masks and label maps.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Binary 2-D mask.
pub type Mask2 = Grid2<bool>;

impl<T: Clone> Grid2<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T> Grid2<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::GridMismatch {
                expected: vec![rows, cols],
                found: vec![data.len()],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    /// Signed lookup; `None` outside the grid.
    #[inline]
    pub fn get_signed(&self, r: isize, c: isize) -> Option<&T> {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            None
        } else {
            Some(&self.data[r as usize * self.cols + c as usize])
        }
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid2<U> {
        Grid2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Iterator over `((row, col), value)`.
    pub fn indexed(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        let cols = self.cols;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| ((i / cols, i % cols), v))
    }

    pub fn ensure_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(Error::GridMismatch {
                expected: vec![rows, cols],
                found: vec![self.rows, self.cols],
            });
        }
        Ok(())
    }
}

impl Mask2 {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Voxel centroid as `(row, col)`; `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for ((r, c), &v) in self.indexed() {
            if v {
                sr += r as f64;
                sc += c as f64;
                n += 1;
            }
        }
        (n > 0).then(|| (sr / n as f64, sc / n as f64))
    }

    pub fn is_subset_of(&self, other: &Mask2) -> bool {
        self.shape() == other.shape()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn and(&self, other: &Mask2) -> Mask2 {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask2) -> Mask2 {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask2) -> Mask2 {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &Mask2, f: impl Fn(bool, bool) -> bool) -> Mask2 {
        assert_eq!(self.shape(), other.shape(), "mask shapes differ");
        Grid2 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Number of 4-connected components of set pixels.
    pub fn components4(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut stack = Vec::new();
        let mut n = 0;
        for start in 0..self.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            n += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (r, c) = ((i / self.cols) as isize, (i % self.cols) as isize);
                for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    if let Some(&true) = self.get_signed(r + dr, c + dc) {
                        let j = (r + dr) as usize * self.cols + (c + dc) as usize;
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        n
    }

    /// Set pixels with at least one unset (or out-of-grid) 4-neighbour.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for ((r, c), &v) in self.indexed() {
            if !v {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|&(dr, dc)| !matches!(self.get_signed(ri + dr, ci + dc), Some(&true)));
            if edge {
                out.push((r, c));
            }
        }
        out
    }
}

/// Filled disk of pixel centres within `radius` of `center`, as `(row, col)`.
pub fn disk(rows: usize, cols: usize, center: (f64, f64), radius: f64) -> Mask2 {
    Grid2::from_fn(rows, cols, |r, c| {
        let dr = r as f64 - center.0;
        let dc = c as f64 - center.1;
        dr * dr + dc * dc <= radius * radius
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_components_and_centroid() {
        let d = disk(21, 21, (10.0, 10.0), 5.0);
        assert_eq!(d.components4(), 1);
        let (r, c) = d.centroid().unwrap();
        assert!((r - 10.0).abs() < 1e-12 && (c - 10.0).abs() < 1e-12);
        assert!(d.boundary().len() < d.count());
    }

    #[test]
    fn two_blobs_are_two_components() {
        let a = disk(30, 30, (7.0, 7.0), 4.0);
        let b = disk(30, 30, (22.0, 22.0), 4.0);
        assert_eq!(a.or(&b).components4(), 2);
        assert!(a.is_subset_of(&a.or(&b)));
        assert!(!a.or(&b).is_subset_of(&a));
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Grid2::from_vec(2, 3, vec![0u8; 5]).is_err());
    }
}
