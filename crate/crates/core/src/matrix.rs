//! Dense row-major matrix and the few numeric helpers the learners need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Matrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_vec(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch {
                what: "matrix buffer",
                expected: nrows * ncols,
                found: data.len(),
            });
        }
        Ok(Matrix { nrows, ncols, data })
    }

    /// Builds a matrix from equally long rows. An empty iterator yields a
    /// `0 × ncols` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], ncols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: ncols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            nrows: rows.len(),
            ncols,
            data,
        })
    }

    /// Single-column matrix.
    pub fn column_vector(v: &[f64]) -> Self {
        Matrix {
            nrows: v.len(),
            ncols: 1,
            data: v.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            nrows: idx.len(),
            ncols: self.ncols,
            data,
        }
    }

    /// Columns picked by index, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.nrows * cols.len());
        for i in 0..self.nrows {
            let r = self.row(i);
            data.extend(cols.iter().map(|&j| r[j]));
        }
        Matrix {
            nrows: self.nrows,
            ncols: cols.len(),
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Arithmetic mean that returns the common value exactly when all inputs are
/// equal.
pub fn stable_mean(v: &[f64]) -> f64 {
    match v.first() {
        None => f64::NAN,
        Some(&first) => first + v.iter().map(|x| x - first).sum::<f64>() / v.len() as f64,
    }
}

pub fn mean_squared_error(pred: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), truth.len());
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Shortest round-trip text for `v`; scientific notation outside
/// `[1e-4, 1e15)` in magnitude.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn variance(v: &[f64]) -> f64 {
    let m = stable_mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major `p × p`)
/// by Cholesky factorization.
pub fn solve_spd(a: &[f64], b: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Numeric(format!(
                        "matrix not positive definite at pivot {i}"
                    )));
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_mean_is_exact_on_constants() {
        let v = vec![0.1; 97];
        assert_eq!(stable_mean(&v), 0.1);
        assert!((stable_mean(&[1.0, 2.0, 4.0]) - 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_solves_small_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = solve_spd(&a, &[2.0, 1.0], 2).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-12);
        assert!(solve_spd(&[1.0, 2.0, 2.0, 1.0], &[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn select_rows_and_columns() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], 2).unwrap();
        assert_eq!(m.select_rows(&[2, 0]).as_slice(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(m.select_columns(&[1]).as_slice(), &[2.0, 4.0, 6.0]);
        assert!(Matrix::from_rows(&[vec![1.0]], 2).is_err());
    }
}
