//! Small dense least squares through the normal equations.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative eigenvalue floor below which the normal matrix counts as singular.
pub const SINGULAR_RATIO: f64 = 1e-12;

/// A factorized design matrix, reusable for many responses.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    design: Vec<f64>,
    rows: usize,
    cols: usize,
    chol: Vec<f64>,
    min_eig: f64,
    max_eig: f64,
}

impl LeastSquares {
    pub fn new(design: &Tensor) -> Result<Self> {
        let (k, p) = design.dims2()?;
        if k < p {
            return Err(Error::Singular(format!("{k} rows for {p} unknowns")));
        }
        let x = design.data();
        let mut normal = vec![0.0; p * p];
        for r in 0..k {
            let row = &x[r * p..(r + 1) * p];
            for a in 0..p {
                for b in 0..p {
                    normal[a * p + b] += row[a] * row[b];
                }
            }
        }
        let eig = symmetric_eigenvalues(&normal, p);
        let max_eig = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max_eig > 0.0) || min_eig < SINGULAR_RATIO * max_eig {
            return Err(Error::Singular(format!(
                "normal matrix eigenvalues in [{min_eig:e}, {max_eig:e}]"
            )));
        }
        let chol = cholesky(&normal, p)?;
        Ok(LeastSquares {
            design: x.to_vec(),
            rows: k,
            cols: p,
            chol,
            min_eig,
            max_eig,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Extreme eigenvalues of `X'X`.
    pub fn eigen_range(&self) -> (f64, f64) {
        (self.min_eig, self.max_eig)
    }

    pub fn solve(&self, response: &[f64]) -> Result<Vec<f64>> {
        if response.len() != self.rows {
            return Err(Error::Shape(format!(
                "response of length {} for {} design rows",
                response.len(),
                self.rows
            )));
        }
        let p = self.cols;
        let mut rhs = vec![0.0; p];
        for (r, &y) in response.iter().enumerate() {
            let row = &self.design[r * p..(r + 1) * p];
            for a in 0..p {
                rhs[a] += row[a] * y;
            }
        }
        let beta = cholesky_solve(&self.chol, p, &rhs);
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric("least-squares solution is not finite".into()));
        }
        Ok(beta)
    }

    pub fn residuals(&self, response: &[f64], beta: &[f64]) -> Vec<f64> {
        let p = self.cols;
        response
            .iter()
            .enumerate()
            .map(|(r, &y)| {
                let row = &self.design[r * p..(r + 1) * p];
                y - row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Coefficients minimizing `|design * beta - response|^2`.
pub fn solve_least_squares(design: &Tensor, response: &Tensor) -> Result<Tensor> {
    let ls = LeastSquares::new(design)?;
    let beta = ls.solve(response.data())?;
    Tensor::from_vec(&[beta.len()], beta)
}

fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Singular("matrix is not positive definite".into()));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}
