use std::fmt;

use rand::Rng;

use super::{kernels, Scalar};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {op}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("gather index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
}

/// Dense row-major tensor. Immutable by convention once it enters a graph.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.iter().any(|&e| e == 0) && !data.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "new",
                shape,
                reason: "zero extent with non-empty data".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                op: "new",
                shape,
                reason: format!("expected {numel} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::of(v)).collect())
    }

    /// Rows of equal length, as a rank-2 tensor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::InvalidShape {
                op: "from_rows",
                shape: vec![rows.len(), cols],
                reason: "ragged rows".into(),
            });
        }
        let data = rows.iter().flatten().map(|&v| T::of(v)).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Extent of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn get(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of range on axis {i} (extent {ext})");
            flat = flat * ext + ix;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        let plan = MatmulPlan::new(self.shape(), other.shape(), false)?;
        let mut out = vec![T::zero(); plan.out_numel()];
        plan.forward(&self.data, &other.data, &mut out);
        Ok(Self {
            shape: plan.out_shape,
            data: out,
        })
    }

    pub fn softmax_last(&self) -> Self {
        let mut out = self.data.clone();
        let width = self.last_dim();
        if width > 0 {
            for row in out.chunks_mut(width) {
                kernels::softmax_in_place(row);
            }
        }
        Self {
            shape: self.shape.clone(),
            data: out,
        }
    }

    /// Swaps two axes (materialised copy).
    pub fn swap_axes(&self, a: usize, b: usize) -> Result<Self, TensorError> {
        let rank = self.rank();
        if a >= rank || b >= rank {
            return Err(TensorError::InvalidShape {
                op: "swap_axes",
                shape: self.shape.clone(),
                reason: format!("axes ({a}, {b}) out of range"),
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        Ok(self.permute(&perm))
    }

    pub(crate) fn permute(&self, perm: &[usize]) -> Self {
        let (shape, data) = kernels::permute(&self.shape, &self.data, perm);
        Self { shape, data }
    }
}

/// Shape bookkeeping for a (possibly batched) matrix product.
///
/// Rank-2 operands broadcast over the batch of a rank-3 partner; rank-3
/// operands with batch extent 1 broadcast likewise.
#[derive(Debug, Clone)]
pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    /// `b` is stored as `[n, k]` and used transposed.
    pub b_transposed: bool,
    pub out_shape: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize], b_transposed: bool) -> Result<Self, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op: if b_transposed { "matmul_nt" } else { "matmul" },
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if !(2..=3).contains(&a.len()) || !(2..=3).contains(&b.len()) {
            return Err(mismatch());
        }
        let (a_batch, m, ka) = split_matrix(a);
        let (b_batch, r0, r1) = split_matrix(b);
        let (kb, n) = if b_transposed { (r1, r0) } else { (r0, r1) };
        if ka != kb {
            return Err(mismatch());
        }
        let batch = match (a_batch, b_batch) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(mismatch()),
        };
        let out_shape = if a.len() == 3 || b.len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        Ok(Self {
            batch,
            m,
            k: ka,
            n,
            a_batched: a_batch == batch && batch > 1,
            b_batched: b_batch == batch && batch > 1,
            b_transposed,
            out_shape,
        })
    }

    pub fn out_numel(&self) -> usize {
        self.batch * self.m * self.n
    }

    pub fn flops(&self) -> u64 {
        2 * (self.batch * self.m * self.k * self.n) as u64
    }

    pub fn forward<T: Scalar>(&self, a: &[T], b: &[T], out: &mut [T]) {
        let (sa, sb, so) = (self.m * self.k, self.k * self.n, self.m * self.n);
        for bi in 0..self.batch {
            let a_blk = &a[if self.a_batched { bi * sa } else { 0 }..][..sa];
            let b_blk = &b[if self.b_batched { bi * sb } else { 0 }..][..sb];
            let o_blk = &mut out[bi * so..][..so];
            if self.b_transposed {
                kernels::gemm_nt(a_blk, b_blk, o_blk, self.m, self.k, self.n);
            } else {
                kernels::gemm_nn(a_blk, b_blk, o_blk, self.m, self.k, self.n);
            }
        }
    }

    /// Accumulates `dA` and `dB` given `dC`.
    pub fn backward<T: Scalar>(
        &self,
        a: &[T],
        b: &[T],
        d_out: &[T],
        d_a: Option<&mut [T]>,
        d_b: Option<&mut [T]>,
    ) {
        let (sa, sb, so) = (self.m * self.k, self.k * self.n, self.m * self.n);
        if let Some(d_a) = d_a {
            for bi in 0..self.batch {
                let b_blk = &b[if self.b_batched { bi * sb } else { 0 }..][..sb];
                let go = &d_out[bi * so..][..so];
                let da = &mut d_a[if self.a_batched { bi * sa } else { 0 }..][..sa];
                if self.b_transposed {
                    // C = A·Bᵀ, B stored [n,k]: dA = dC·B
                    kernels::gemm_nn(go, b_blk, da, self.m, self.n, self.k);
                } else {
                    // dA = dC·Bᵀ, B stored [k,n]
                    kernels::gemm_nt(go, b_blk, da, self.m, self.n, self.k);
                }
            }
        }
        if let Some(d_b) = d_b {
            for bi in 0..self.batch {
                let a_blk = &a[if self.a_batched { bi * sa } else { 0 }..][..sa];
                let go = &d_out[bi * so..][..so];
                let db = &mut d_b[if self.b_batched { bi * sb } else { 0 }..][..sb];
                if self.b_transposed {
                    // dB[n,k] = dCᵀ·A
                    kernels::gemm_tn(go, a_blk, db, self.n, self.m, self.k);
                } else {
                    // dB[k,n] = Aᵀ·dC
                    kernels::gemm_tn(a_blk, go, db, self.k, self.m, self.n);
                }
            }
        }
    }
}

fn split_matrix(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [r, c] => (1, *r, *c),
        [b, r, c] => (*b, *r, *c),
        _ => unreachable!("rank checked by caller"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triple_loop(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn identity_matmul() {
        let eye = Tensor::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::<f64>::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(eye.matmul(&b).unwrap(), b);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::<f64>::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_up_to_32() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, k, n) in &[(4, 3, 2), (1, 1, 1), (32, 32, 32), (17, 5, 29), (3, 32, 1)] {
            let a = Tensor::<f64>::uniform(&[m, k], 1.0, &mut rng);
            let b = Tensor::<f64>::uniform(&[k, n], 1.0, &mut rng);
            let got = a.matmul(&b).unwrap();
            let want = triple_loop(a.data(), b.data(), m, k, n);
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_matmul_broadcasts_rank2_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f64>::uniform(&[3, 4, 5], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[5, 2], 1.0, &mut rng);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[3, 4, 2]);
        for bi in 0..3 {
            let want = triple_loop(&a.data()[bi * 20..(bi + 1) * 20], b.data(), 4, 5, 2);
            for (g, w) in c.data()[bi * 8..(bi + 1) * 8].iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let t = Tensor::<f64>::from_f64(&[3], &[0.0, 0.0, 0.0]).unwrap().softmax_last();
        for v in t.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let t = Tensor::<f64>::from_f64(&[2], &[1000.0, 0.0]).unwrap().softmax_last();
        assert!((t.data()[0] - 1.0).abs() < 1e-12 && t.data()[1].abs() < 1e-12);
        let t = Tensor::<f64>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap().softmax_last();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, v) in t.data().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
