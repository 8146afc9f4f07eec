//! Dense numeric kernel: row-major `f64` matrices, stable softmax and
//! log-sum-exp, row normalization with its vector-Jacobian product, and the
//! seedable generator used everywhere else in the crate.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row norms below this are rejected by [`l2_normalize_rows`].
pub const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        Matrix::new(r.rows, r.cols, r.data)
    }
}

impl From<Matrix> for MatrixRepr {
    fn from(m: Matrix) -> Self {
        MatrixRepr { rows: m.rows, cols: m.cols, data: m.data }
    }
}

impl Matrix {
    /// Builds a matrix from user data, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::shape(format!("{rows}x{cols} overflows")))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::shape(format!("row {bad} has a different length than row 0")));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub(crate) fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("axpy {:?} vs {:?}", self.shape(), other.shape())));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(alpha);
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Column sums, length `cols`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Copy of the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    // Four independent partial sums let the compiler vectorize.
    let mut acc = [0.0f64; 4];
    let (uc, vc) = (u.chunks_exact(4), v.chunks_exact(4));
    let tail: f64 = uc.remainder().iter().zip(vc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in uc.zip(vc) {
        for i in 0..4 {
            acc[i] += a[i] * b[i];
        }
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Checked dot product.
pub fn try_dot(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("dot of lengths {} and {}", u.len(), v.len())));
    }
    Ok(dot(u, v))
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a * bᵀ`, i.e. the matrix of row-by-row dot products.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(format!("matmul_nt {:?} x {:?}ᵀ", a.shape(), b.shape())));
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| dot(a.row(i), b.row(j))))
}

/// `aᵀ * b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(format!("matmul_tn {:?}ᵀ x {:?}", a.shape(), b.shape())));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let brow = b.row(r);
        for (i, &ari) in a.row(r).iter().enumerate() {
            if ari == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, v) in orow.iter_mut().zip(brow) {
                *o += ari * v;
            }
        }
    }
    Ok(out)
}

/// `log Σ exp(v_i)`, shifted by the maximum.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::pre("logsumexp of an empty vector"));
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(lse(v))
}

/// Unchecked log-sum-exp for internal callers that already validated input.
pub(crate) fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(exp(a) + exp(b))`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    let z = logsumexp(v)?;
    Ok(v.iter().map(|x| (x - z).exp()).collect())
}

/// Log-probabilities of the softmax, `v_i - logsumexp(v)`.
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    let z = logsumexp(v)?;
    Ok(v.iter().map(|x| x - z).collect())
}

/// Row norms of `m`.
pub fn row_norms(m: &Matrix) -> Vec<f64> {
    (0..m.rows).map(|i| dot(m.row(i), m.row(i)).sqrt()).collect()
}

/// Rows scaled to unit Euclidean norm. Fails with the offending row index
/// when a norm is at or below [`MIN_ROW_NORM`].
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let norms = row_norms(m);
    if let Some((row, &norm)) = norms.iter().enumerate().find(|(_, n)| **n <= MIN_ROW_NORM) {
        return Err(Error::ZeroNorm { row, norm });
    }
    let mut out = m.clone();
    for (i, n) in norms.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Vector-Jacobian product of [`l2_normalize_rows`].
///
/// For `y = x / |x|`, `dx = (g - y (yᵀg)) / |x|` row by row.
pub fn l2_normalize_rows_vjp(input: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "normalize vjp {:?} vs {:?}",
            input.shape(),
            grad_out.shape()
        )));
    }
    let mut out = Matrix::zeros(input.rows, input.cols);
    for i in 0..input.rows {
        let x = input.row(i);
        let n = dot(x, x).sqrt();
        if n <= MIN_ROW_NORM {
            return Err(Error::ZeroNorm { row: i, norm: n });
        }
        let g = grad_out.row(i);
        let yg = dot(x, g) / n;
        for ((o, xv), gv) in out.row_mut(i).iter_mut().zip(x).zip(g) {
            *o = (gv - xv / n * yg) / n;
        }
    }
    Ok(out)
}

/// Seedable generator. The algorithm is PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`):
/// the stream selector is the PCG increment, the state is derived from the
/// seed with SplitMix64. Equal `(seed, stream)` pairs give identical streams.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: Pcg64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let hi = splitmix64(seed);
        let lo = splitmix64(hi ^ seed);
        let state = (u128::from(hi) << 64) | u128::from(lo);
        RngState { seed, stream, inner: Pcg64::new(state, u128::from(stream)) }
    }

    /// Independent generator for sub-task `id`, derived from this generator's
    /// seed only (not its position), so children are stable under reordering.
    pub fn child(&self, id: u64) -> RngState {
        let seed = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0xA5A5)));
        RngState::with_stream(seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// `k` distinct values from `0..n`, uniformly without replacement.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        // Partial Fisher-Yates keeps the draw count fixed at k.
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| std * self.gaussian())
    }

    /// Rows drawn uniformly on the unit sphere.
    pub fn unit_rows(&mut self, rows: usize, cols: usize) -> Matrix {
        loop {
            let g = self.gaussian_matrix(rows, cols, 1.0);
            if let Ok(m) = l2_normalize_rows(&g) {
                return m;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn logsumexp_examples() {
        assert!(close(logsumexp(&[0.0, 0.0]).unwrap(), 2f64.ln(), 1e-15));
        assert!(close(logsumexp(&[1000.0, 1000.0]).unwrap(), 1000.0 + 2f64.ln(), 1e-12));
        let e = 1f64.exp();
        let expected = 1.0 + (2.0 + 1.0 / e).ln();
        assert!(close(logsumexp(&[1.0, 0.0, 1.0]).unwrap(), expected, 1e-15));
        assert!(close(expected, 1.861994804, 1e-9));
    }

    #[test]
    fn logsumexp_rejects_empty_and_nan() {
        assert!(matches!(logsumexp(&[]), Err(Error::Precondition(_))));
        assert!(matches!(logsumexp(&[0.0, f64::NAN]), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        p.iter().for_each(|v| assert!(close(*v, 1.0 / 3.0, 1e-15)));

        let e = 1f64.exp();
        let p = softmax(&[1.0, 0.0, 1.0]).unwrap();
        let d = 2.0 * e + 1.0;
        assert!(close(p[0], e / d, 1e-15) && close(p[1], 1.0 / d, 1e-15));
        assert!(close(p[0], 0.42232, 1e-5) && close(p[1], 0.15536, 1e-5));

        for t in [-50.0, 0.0, 7.5, 1e4] {
            let p = softmax(&[t, t + 3f64.ln()]).unwrap();
            assert!(close(p[0], 0.25, 1e-12) && close(p[1], 0.75, 1e-12), "t = {t}");
        }
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn linear_algebra_examples() {
        let m = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let n = l2_normalize_rows(&m).unwrap();
        assert!(close(n.get(0, 0), 0.6, 1e-15) && close(n.get(0, 1), 0.8, 1e-15));
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        assert!(matmul(&a, &a).is_err());
        assert!(try_dot(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn normalize_names_zero_row() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        match l2_normalize_rows(&m) {
            Err(Error::ZeroNorm { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matrix_rejects_bad_input() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(matches!(Matrix::new(1, 2, vec![0.0, f64::INFINITY]), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = RngState::new(3);
        let a = rng.gaussian_matrix(4, 3, 1.0);
        let b = rng.gaussian_matrix(5, 3, 1.0);
        let c = rng.gaussian_matrix(4, 2, 1.0);
        let nt = matmul_nt(&a, &b).unwrap();
        let direct = matmul(&a, &b.transpose()).unwrap();
        let tn = matmul_tn(&a, &c).unwrap();
        let direct_tn = matmul(&a.transpose(), &c).unwrap();
        for (x, y) in nt.data().iter().zip(direct.data()).chain(tn.data().iter().zip(direct_tn.data())) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn normalize_vjp_matches_finite_differences() {
        let mut rng = RngState::new(11);
        let x = rng.gaussian_matrix(3, 4, 1.0);
        let g = rng.gaussian_matrix(3, 4, 1.0);
        let analytic = l2_normalize_rows_vjp(&x, &g).unwrap();
        let f = |m: &Matrix| -> f64 {
            let y = l2_normalize_rows(m).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for idx in 0..x.data().len() {
            let mut p = x.clone();
            p.data_mut()[idx] += h;
            let mut q = x.clone();
            q.data_mut()[idx] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            assert!(close(fd, analytic.data()[idx], 1e-8), "entry {idx}");
        }
    }

    #[test]
    fn rng_streams_repeat() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngState::new(43);
        let mut a = RngState::new(42);
        assert!((0..16).any(|_| a.next_u64() != c.next_u64()));
        let mut c0 = a.child(0);
        let mut c1 = a.child(1);
        assert!((0..16).any(|_| c0.next_u64() != c1.next_u64()));
    }

    #[test]
    fn sampling_without_replacement_is_distinct() {
        let mut rng = RngState::new(5);
        let s = rng.sample_without_replacement(50, 50);
        let mut sorted = s.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let p = softmax(&v).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-50f64..50.0, 1..20), c in -1e3f64..1e3) {
            let p = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn logsumexp_finite(v in prop::collection::vec(-1e6f64..1e6, 1..30)) {
            prop_assert!(logsumexp(&v).unwrap().is_finite());
        }
    }
}
