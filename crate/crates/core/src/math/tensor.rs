//! Dense row-major `f64` tensors.
//!
//! Only the handful of kernels the models need are provided. Public
//! operations validate shapes and reject non-finite results.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.check_finite()?;
        Ok(t)
    }

    /// Builds a tensor without the finiteness check. Shape must match.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Tensor::from_vec(&[m, n], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let n = self.shape[1];
        self.data[i * n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Shape(format!(
                "item() on tensor with shape {:?}",
                self.shape
            )))
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::Numeric(format!(
                "non-finite entry {} at flat index {k}",
                self.data[k]
            ))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor::from_raw(shape.to_vec(), self.data.clone()))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {m}x{k} * {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        let t = Tensor::from_raw(vec![m, n], out);
        t.check_finite()?;
        Ok(t)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        Ok(Tensor::from_raw(vec![n, m], transpose_raw(&self.data, m, n)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let t = Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect());
        t.check_finite()?;
        Ok(t)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.map(f64::tanh)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map(sigmoid)
    }

    /// Softmax along `axis` (0 = down columns, 1 = across rows) of a matrix.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        match axis {
            1 => {
                let mut out = self.data.clone();
                for row in out.chunks_mut(n) {
                    softmax_in_place(row);
                }
                Ok(Tensor::from_raw(vec![m, n], out))
            }
            0 => self.transpose()?.softmax(1)?.transpose(),
            _ => Err(Error::Shape(format!("softmax axis {axis} on a matrix"))),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.map(|v| v * c)
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let t = Tensor::from_raw(self.shape.clone(), data);
        t.check_finite()?;
        Ok(t)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of a slice, in place.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// `out += a (m x k) * b (k x n)`, i-k-j loop order.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out (k x n) += a^T b` with `a` stored `m x k` and `b` stored `m x n`.
pub(crate) fn matmul_at_b_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let brow = &b[r * n..(r + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a (m x n) * b^T` where `b` is stored `k x n`; result `m x k`.
pub(crate) fn matmul_a_bt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += dot(arow, brow);
        }
    }
}

/// Dot product with four interleaved partial sums.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn transpose_raw(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = data[i * n + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_times_matrix() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn unit_selector() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[5.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ta = Tensor::from_vec(&[3, 3], a.clone()).unwrap();
        let tb = Tensor::from_vec(&[3, 3], b.clone()).unwrap();
        let c = ta.matmul(&tb).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..3 {
                    s += a[i * 3 + p] * b[p * 3 + j];
                }
                assert!((c.get2(i, j) - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn activations_at_zero() {
        let z = Tensor::zeros(&[1, 3]);
        assert_eq!(z.tanh().unwrap().data(), &[0.0; 3]);
        assert_eq!(z.sigmoid().unwrap().data(), &[0.5; 3]);
        let s = z.softmax(1).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_both_axes_sum_to_one() {
        let t = Tensor::from_rows(&[vec![1.0, -3.0, 700.0], vec![0.5, 0.25, -2.0]]).unwrap();
        let r = t.softmax(1).unwrap();
        for i in 0..2 {
            assert!((r.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let c = t.softmax(0).unwrap();
        for j in 0..3 {
            assert!((c.get2(0, j) + c.get2(1, j) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(Tensor::from_vec(&[1, 1], vec![f64::NAN]).is_err());
        let big = Tensor::from_vec(&[1, 1], vec![1e300]).unwrap();
        assert!(big.mul(&big).is_err());
    }

    #[test]
    fn transposed_kernels_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, k, n) = (4, 3, 5);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // a^T b via kernel vs explicit transpose
        let mut out = vec![0.0; k * n];
        matmul_at_b_into(&a, &b, &mut out, m, k, n);
        let at = transpose_raw(&a, m, k);
        let mut reference = vec![0.0; k * n];
        matmul_into(&at, &b, &mut reference, k, m, n);
        for (x, y) in out.iter().zip(&reference) {
            assert!((x - y).abs() < 1e-14);
        }
        // b a' shapes: (m x n) * (k x n)^T
        let c: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out2 = vec![0.0; m * k];
        matmul_a_bt_into(&b, &c, &mut out2, m, n, k);
        let ct = transpose_raw(&c, k, n);
        let mut ref2 = vec![0.0; m * k];
        matmul_into(&b, &ct, &mut ref2, m, n, k);
        for (x, y) in out2.iter().zip(&ref2) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
