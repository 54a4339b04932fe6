//! Small dense linear algebra for the autoencoder.
//!
//! Everything is `f64` and row-major. The sizes involved (hidden dims of a
//! few dozen) do not justify a BLAS dependency, and keeping the kernels in
//! plain loops makes the backward pass easy to audit against the forward.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Fill from a closure over (row, col). Used by tests.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// y = M x
pub fn matvec(m: &Mat, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(m.cols, x.len());
    debug_assert_eq!(m.rows, y.len());
    for r in 0..m.rows {
        let row = m.row(r);
        let mut acc = 0.0;
        for (w, xv) in row.iter().zip(x) {
            acc += w * xv;
        }
        y[r] = acc;
    }
}

/// y += Mᵀ x  (x has length rows, y has length cols)
pub fn matvec_t_acc(m: &Mat, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(m.rows, x.len());
    debug_assert_eq!(m.cols, y.len());
    for r in 0..m.rows {
        let row = m.row(r);
        let xr = x[r];
        for (yc, w) in y.iter_mut().zip(row) {
            *yc += w * xr;
        }
    }
}

/// M += a ⊗ b  (outer product, a over rows, b over cols)
pub fn outer_acc(m: &mut Mat, a: &[f64], b: &[f64]) {
    debug_assert_eq!(m.rows, a.len());
    debug_assert_eq!(m.cols, b.len());
    for r in 0..m.rows {
        let ar = a[r];
        let row = m.row_mut(r);
        for (w, bv) in row.iter_mut().zip(b) {
            *w += ar * bv;
        }
    }
}

/// y += x elementwise
pub fn add_acc(y: &mut [f64], x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (a, b) in y.iter_mut().zip(x) {
        *a += b;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn tanh_vec(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.tanh();
    }
}

pub fn sigmoid_vec(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = sigmoid(*v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_small() {
        let m = Mat::from_fn(2, 3, |r, c| (r * 3 + c) as f64); // [[0,1,2],[3,4,5]]
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 2];
        matvec(&m, &x, &mut y);
        assert_eq!(y, [8.0, 26.0]);
    }

    #[test]
    fn matvec_t_acc_matches_manual_transpose() {
        let m = Mat::from_fn(2, 3, |r, c| (r as f64 + 1.0) * (c as f64 - 1.0));
        let x = [2.0, -1.0];
        let mut y = vec![0.0; 3];
        matvec_t_acc(&m, &x, &mut y);
        for c in 0..3 {
            let expect: f64 = (0..2).map(|r| m.row(r)[c] * x[r]).sum();
            assert!((y[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn outer_acc_builds_rank_one() {
        let mut m = Mat::zeros(2, 2);
        outer_acc(&mut m, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(m.data, vec![3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn sigmoid_midpoint() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
