//! Symmetric positive definite solve in skyline (variable-band) storage.
//!
//! Row `i` stores columns `first[i]..=i` of the lower triangle. Cholesky
//! fill stays inside this envelope, so an odometry chain costs O(n) and each
//! loop closure only widens the rows of its later node.

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct SkylineMatrix<T> {
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SkylineMatrix<T> {
    /// `first[i] <= i` is the leftmost stored column of row `i`.
    pub fn new(first: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            offset.push(total);
            total += i - f + 1;
        }
        offset.push(total);
        Self {
            first,
            offset,
            values: vec![T::zero(); total],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.offset[i] + (j - self.first[i])
    }

    /// Add `v` to entry `(i, j)` of the symmetric matrix; either triangle.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(r, c);
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            T::zero()
        } else {
            self.values[self.idx(r, c)]
        }
    }

    pub fn add_diagonal(&mut self, v: T) {
        for i in 0..self.dim() {
            let k = self.idx(i, i);
            self.values[k] += v;
        }
    }

    /// In-place `L·Lᵀ` factorisation. Returns `None` on a non-positive pivot.
    pub fn cholesky(mut self) -> Option<SkylineCholesky<T>> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut sum = self.values[self.idx(i, j)];
                let oi = self.offset[i] - fi;
                let oj = self.offset[j] - fj;
                for k in start..j {
                    sum -= self.values[oi + k] * self.values[oj + k];
                }
                if i == j {
                    if !(sum > T::zero()) || !sum.is_finite() {
                        return None;
                    }
                    let k = self.idx(i, i);
                    self.values[k] = sum.sqrt();
                } else {
                    let d = self.values[self.idx(j, j)];
                    let k = self.idx(i, j);
                    self.values[k] = sum / d;
                }
            }
        }
        Some(SkylineCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct SkylineCholesky<T> {
    l: SkylineMatrix<T>,
}

impl<T: Real> SkylineCholesky<T> {
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.dim();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        // L y = b
        for i in 0..n {
            let fi = self.l.first[i];
            let oi = self.l.offset[i] - fi;
            let mut s = y[i];
            for (k, yk) in y.iter().enumerate().take(i).skip(fi) {
                s -= self.l.values[oi + k] * *yk;
            }
            y[i] = s / self.l.values[oi + i];
        }
        // Lᵀ x = y, column sweep over stored rows
        for i in (0..n).rev() {
            let fi = self.l.first[i];
            let oi = self.l.offset[i] - fi;
            let xi = y[i] / self.l.values[oi + i];
            y[i] = xi;
            for k in fi..i {
                y[k] -= self.l.values[oi + k] * xi;
            }
        }
        y
    }
}
