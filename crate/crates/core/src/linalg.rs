//! Small dense linear algebra over any [`Scalar`].

use crate::error::{Error, Result};
use crate::jets::Scalar;

/// Solves `a x = b` by Gaussian elimination with partial pivoting on the
/// values. `a` is row-major `n x n`.
pub fn solve<S: Scalar>(a: &[Vec<S>], b: &[S]) -> Result<Vec<S>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("solve expects a square system".into()));
    }
    let mut m: Vec<Vec<S>> = a.to_vec();
    let mut rhs: Vec<S> = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m[i][col]
                    .value()
                    .abs()
                    .total_cmp(&m[j][col].value().abs())
            })
            .expect("non-empty range");
        if m[pivot][col].value().abs() < 1e-300 {
            return Err(Error::DegenerateFrame(f64::INFINITY));
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col].checked_div(&m[col][col])?;
            for k in col..n {
                let delta = factor.clone() * m[col][k].clone();
                m[row][k] = m[row][k].clone() - delta;
            }
            let delta = factor * rhs[col].clone();
            rhs[row] = rhs[row].clone() - delta;
        }
    }
    let mut x: Vec<S> = vec![S::from_f64(0.0); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row].clone();
        for k in row + 1..n {
            acc = acc - m[row][k].clone() * x[k].clone();
        }
        x[row] = acc.checked_div(&m[row][row])?;
    }
    Ok(x)
}

/// `m v` for a row-major `f64` matrix applied to a scalar vector.
pub fn mat_vec<S: Scalar>(m: &[Vec<f64>], v: &[S]) -> Vec<S> {
    m.iter()
        .map(|row| {
            row.iter()
                .zip(v)
                .fold(S::from_f64(0.0), |acc, (a, x)| acc + x.scale(*a))
        })
        .collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
