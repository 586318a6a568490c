//! Dense row-major `f64` tensors and a seeded, portable random number
//! generator. This is the numeric substrate for the recurrent cells, the
//! optimizer and weight aggregation; it deliberately stays minimal (no
//! broadcasting, no views, no GPU).

use thiserror::Error;

/// Errors produced by tensor construction and arithmetic.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch: left={left:?}, right={right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("inner dimensions disagree: {m}x{k} cannot multiply {k2}x{n}")]
    InnerDimMismatch {
        m: usize,
        k: usize,
        k2: usize,
        n: usize,
    },
    #[error("data length {got} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape {0:?} contains a zero dimension")]
    ZeroDim(Vec<usize>),
    #[error("operation '{op}' produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid uniform range: lo={lo} must be < hi={hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("tensor is not a matrix (rank {0})")]
    NotAMatrix(usize),
}

/// Dense row-major array of `f64` values.
///
/// `product(shape) == data.len()` always holds and every dimension is
/// positive. Values are immutable after construction except through the
/// owning context (`data_mut`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Zero-filled tensor. Panics on a zero dimension; shapes are derived
    /// from validated configs everywhere this is called.
    pub fn zeros(shape: Vec<usize>) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "zero dimension in shape {shape:?}"
        );
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// 2-D convenience constructor from nested rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(TensorError::ZeroDim(vec![r, c]));
        }
        Tensor::new(vec![r, c], rows.into_iter().flatten().collect())
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(
            self.shape.len(),
            2,
            "rows() on rank-{} tensor",
            self.shape.len()
        );
        self.shape[0]
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(
            self.shape.len(),
            2,
            "cols() on rank-{} tensor",
            self.shape.len()
        );
        self.shape[1]
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.shape[1] + j] = v;
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        self.check_same_shape(other)?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Pointwise sum.
    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "add", |a, b| a + b)
    }

    /// Pointwise difference.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "sub", |a, b| a - b)
    }

    /// Pointwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "mul", |a, b| a * b)
    }

    /// Multiply every element by a scalar.
    pub fn scale(&self, factor: f64) -> Result<Tensor, TensorError> {
        let data: Vec<f64> = self.data.iter().map(|&a| a * factor).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "scale" });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Pointwise hyperbolic tangent. Always finite on finite input.
    pub fn tanh(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| a.tanh()).collect(),
        }
    }

    /// Pointwise logistic sigmoid, 1/(1+e^-x). Always finite on finite input.
    pub fn sigmoid(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| sigmoid(a)).collect(),
        }
    }

    /// Pointwise max(x, 0).
    pub fn relu(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| a.max(0.0)).collect(),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Standard matrix product of an `m x k` by a `k x n` tensor.
///
/// Each output element accumulates over `k` in increasing index order, so
/// results are bit-identical to the naive triple loop on every platform.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape.len() != 2 {
        return Err(TensorError::NotAMatrix(a.shape.len()));
    }
    if b.shape.len() != 2 {
        return Err(TensorError::NotAMatrix(b.shape.len()));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(TensorError::InnerDimMismatch { m, k, k2, n });
    }
    let mut out = vec![0.0; m * n];
    // i-k-j loop order: contributions to out[i*n + j] still arrive in
    // increasing k, identical to the scalar triple loop.
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "matmul" });
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `a * b^T` for row-major matrices, computed as row dot products.
pub(crate) fn matmul_transpose_b(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let (n, k2) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul_transpose_b inner dims");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// `a^T * b` accumulated as rank-1 updates; used to sum per-timestep outer
/// products in one pass.
pub(crate) fn matmul_transpose_a(a: &Tensor, b: &Tensor) -> Tensor {
    let (t, m) = (a.shape[0], a.shape[1]);
    let (t2, n) = (b.shape[0], b.shape[1]);
    assert_eq!(t, t2, "matmul_transpose_a outer dims");
    let mut out = vec![0.0; m * n];
    for s in 0..t {
        let a_row = &a.data[s * m..(s + 1) * m];
        let b_row = &b.data[s * n..(s + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let o_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// `out = w · x` for a rank-2 `w` and a vector `x`, written into a scratch
/// buffer to avoid per-timestep allocation in the recurrent loops.
pub(crate) fn matvec_into(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let c = w.shape[1];
    debug_assert_eq!(c, x.len());
    debug_assert_eq!(w.shape[0], out.len());
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(c)) {
        let mut acc = 0.0;
        for (&wv, &xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

/// `out += w^T · v`, accumulating over rows of `w` in increasing order.
pub(crate) fn matvec_transpose_add(w: &Tensor, v: &[f64], out: &mut [f64]) {
    let c = w.shape[1];
    debug_assert_eq!(w.shape[0], v.len());
    debug_assert_eq!(c, out.len());
    for (&vv, row) in v.iter().zip(w.data.chunks_exact(c)) {
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += vv * wv;
        }
    }
}

/// Draw a tensor of i.i.d. uniform samples in `[lo, hi)`.
pub fn uniform_init(
    rng: &mut Rng,
    shape: Vec<usize>,
    lo: f64,
    hi: f64,
) -> Result<Tensor, TensorError> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(TensorError::InvalidRange { lo, hi });
    }
    if shape.contains(&0) {
        return Err(TensorError::ZeroDim(shape));
    }
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    Ok(Tensor { shape, data })
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256++ generator seeded through SplitMix64.
///
/// The algorithm is fixed and implemented here directly so identical seeds
/// yield identical streams on every platform and build, independent of any
/// library version.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in &mut s {
            *slot = splitmix64(&mut sm);
        }
        if s == [0, 0, 0, 0] {
            s[0] = 1; // xoshiro state must be non-zero
        }
        Rng { s }
    }

    /// Independent stream derived from (seed, stream). Used to give folds,
    /// shuffles and initializers their own reproducible substreams.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut a = seed;
        let mut b = stream ^ SPLITMIX_GAMMA;
        Rng::new(splitmix64(&mut a) ^ splitmix64(&mut b))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}
