use super::{kernels, Real};
use crate::error::{Error, Result};

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(
                "tensor",
                format!("zero dimension in {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a 2-D tensor; panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading dimension of a 2-D tensor (1 for vectors).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("need 2-D, got {:?}", self.shape),
            ));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::matrix(c, r, out))
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape, other.shape),
            ));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(&self.data, &other.data, &mut out, m, k, n);
        Ok(Tensor::matrix(m, n, out))
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} for {:?}", self.shape),
            ));
        }
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = vec![T::zero(); self.data.len()];
        let mut lane = vec![T::zero(); len];
        let mut lane_out = vec![T::zero(); len];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                for (j, v) in lane.iter_mut().enumerate() {
                    *v = self.data[idx(j)];
                }
                kernels::softmax_row(&lane, None, &mut lane_out);
                for (j, v) in lane_out.iter().enumerate() {
                    out[idx(j)] = *v;
                }
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Normalizes every row over the trailing axis, then applies `gain`/`bias`.
    pub fn layer_norm(&self, gain: &[T], bias: &[T], eps: f64) -> Result<Tensor<T>> {
        let c = self.cols();
        if gain.len() != c || bias.len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("row width {c}, gain {}, bias {}", gain.len(), bias.len()),
            ));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(c) {
            normalize_row(row, eps);
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * gain[j] + bias[j];
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }
}

/// Normalizes `row` in place to zero mean / unit (biased) variance.
/// Returns `(mean, 1/std)`.
pub(crate) fn normalize_row<T: Real>(row: &mut [T], eps: f64) -> (T, T) {
    let n = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let rstd = T::one() / (var + T::of(eps)).sqrt();
    for v in row.iter_mut() {
        *v = (*v - mean) * rstd;
    }
    (mean, rstd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::matrix(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]);
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn orthogonal_masks_multiply_to_zero() {
        let a = Tensor::matrix(2, 2, vec![1.0f32, 0.0, 0.0, 0.0]);
        let b = Tensor::matrix(2, 2, vec![0.0f32, 0.0, 0.0, 1.0]);
        assert!(a.matmul(&b).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(3, 4, &mut rng);
        let b = random(4, 2, &mut rng);
        let got = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0f64;
                for p in 0..4 {
                    acc += a.data()[i * 4 + p] as f64 * b.data()[p * 2 + j] as f64;
                }
                assert!((got.data()[i * 2 + j] as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape { .. })));
    }

    #[test]
    fn matmul_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = random(3, 4, &mut rng);
            let b = random(4, 5, &mut rng);
            let c = random(5, 2, &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                assert!((x - y).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let t = Tensor::new(vec![3], vec![0.0f32; 3]).unwrap();
        for v in t.softmax(0).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let big = Tensor::new(vec![2], vec![1000.0f32, 0.0])
            .unwrap()
            .softmax(0)
            .unwrap();
        assert!(big.is_finite());
        assert!((big.data()[0] - 1.0).abs() < 1e-7);
        assert!(big.data()[1] < 1e-30);
    }

    #[test]
    fn softmax_matches_extended_precision() {
        let x = [1.0f64, 2.0, 3.0];
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        let expect: Vec<f64> = x.iter().map(|v| v.exp() / z).collect();
        let got = Tensor::new(vec![3], x.iter().map(|&v| v as f32).collect())
            .unwrap()
            .softmax(0)
            .unwrap();
        for (g, e) in got.data().iter().zip(&expect) {
            assert!((*g as f64 - e).abs() < 1e-7, "{g} vs {e}");
        }
    }

    #[test]
    fn softmax_along_leading_axis() {
        let t = Tensor::new(vec![2, 2], vec![0.0f64, 5.0, 0.0, -5.0]).unwrap();
        let s = t.softmax(0).unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-12);
        assert!((s.data()[1] + s.data()[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_cases() {
        let ones = [1.0f32; 4];
        let zeros = [0.0f32; 4];
        let c = Tensor::matrix(1, 4, vec![3.0f32; 4])
            .layer_norm(&ones, &zeros, 1e-5)
            .unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));

        let pair = Tensor::matrix(1, 2, vec![1.0f32, -1.0])
            .layer_norm(&ones[..2], &zeros[..2], 1e-5)
            .unwrap();
        assert!((pair.data()[0] - 1.0).abs() < 1e-5 && (pair.data()[1] + 1.0).abs() < 1e-5);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let row: Vec<f32> = (0..64).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let out = Tensor::matrix(1, 64, row)
            .layer_norm(&[1.0; 64], &[0.0; 64], 1e-5)
            .unwrap();
        let mean: f64 = out.data().iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        let var: f64 = out
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / 64.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![0, 2], vec![]).is_err());
    }
}
