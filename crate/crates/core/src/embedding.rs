//! Patch sampling and the two-layer projection head.
//!
//! The head maps a `K×C` block of patch features to `K×D` embeddings:
//! `normalize_rows(relu(x W1 + b1) W2 + b2)`. Backward is the exact
//! vector-Jacobian product, with the rectifier's subgradient at 0 taken as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    l2_normalize_rows, l2_normalize_rows_vjp, matmul, matmul_tn, row_norms, Matrix, RngState,
};

/// Tolerance on row norms of an [`EmbeddingSet`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// `H×W×C` feature grid stored as `[h][w][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        let n = height
            .checked_mul(width)
            .and_then(|hw| hw.checked_mul(channels))
            .ok_or_else(|| Error::shape("feature map dimensions overflow"))?;
        if values.len() != n {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} map needs {n} values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(FeatureMap { height, width, channels, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Feature vector at flat location `h * W + w`.
    pub fn at(&self, flat: usize) -> &[f64] {
        &self.values[flat * self.channels..(flat + 1) * self.channels]
    }

    pub fn cell(&self, h: usize, w: usize) -> &[f64] {
        self.at(h * self.width + w)
    }

    /// All locations as a `(H·W)×C` matrix.
    pub fn as_matrix(&self) -> Matrix {
        Matrix::new(self.locations(), self.channels, self.values.clone())
            .expect("feature map values are validated on construction")
    }
}

/// Distinct flat spatial indices, shared by the input and output maps so that
/// row `r` of both embedding sets refers to the same location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchIndexSet(Vec<usize>);

impl PatchIndexSet {
    pub fn new(indices: Vec<usize>, locations: usize) -> Result<Self> {
        let mut seen = vec![false; locations];
        for &i in &indices {
            if i >= locations {
                return Err(Error::IndexOutOfRange { index: i, len: locations });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::pre(format!("duplicate patch index {i}")));
            }
        }
        Ok(PatchIndexSet(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn sample_patch_indices(rng: &mut RngState, height: usize, width: usize, k: usize) -> Result<PatchIndexSet> {
    let n = height * width;
    if k > n {
        return Err(Error::pre(format!("cannot sample {k} patches from {n} locations")));
    }
    Ok(PatchIndexSet(rng.sample_without_replacement(n, k)))
}

pub fn gather_patches(fm: &FeatureMap, idx: &PatchIndexSet) -> Result<Matrix> {
    let mut data = Vec::with_capacity(idx.len() * fm.channels);
    for &i in idx.as_slice() {
        if i >= fm.locations() {
            return Err(Error::IndexOutOfRange { index: i, len: fm.locations() });
        }
        data.extend_from_slice(fm.at(i));
    }
    Matrix::new(idx.len(), fm.channels, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Embeddings of input patches (`z`).
    Input,
    /// Embeddings of output patches (`w`).
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Matrix,
    side: Side,
}

impl EmbeddingSet {
    /// Wraps unit-norm rows; fails if any row norm is off by more than [`UNIT_NORM_TOL`].
    pub fn new(vectors: Matrix, side: Side) -> Result<Self> {
        if let Some((row, n)) = row_norms(&vectors)
            .into_iter()
            .enumerate()
            .find(|(_, n)| (n - 1.0).abs() > UNIT_NORM_TOL)
        {
            return Err(Error::pre(format!("embedding row {row} has norm {n}, expected 1")));
        }
        Ok(EmbeddingSet { vectors, side })
    }

    /// Wraps rows without the unit-norm check, for heads with normalization disabled.
    pub fn unnormalized(vectors: Matrix, side: Side) -> Self {
        EmbeddingSet { vectors, side }
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionHead {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl ProjectionHead {
    /// He-style initialization with zero biases.
    pub fn init(rng: &mut RngState, in_dim: usize, embed_dim: usize) -> Self {
        let w1 = rng.gaussian_matrix(in_dim, embed_dim, (2.0 / in_dim as f64).sqrt());
        let w2 = rng.gaussian_matrix(embed_dim, embed_dim, (1.0 / embed_dim as f64).sqrt());
        // A small random output bias keeps rows away from zero norm when every
        // hidden unit of a location is inactive.
        let b2 = (0..embed_dim).map(|_| 0.1 * rng.gaussian() / (embed_dim as f64).sqrt()).collect();
        ProjectionHead { w1, b1: vec![0.0; embed_dim], w2, b2, normalize: true }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w1.cols();
        if self.b1.len() != d || self.w2.rows() != d || self.b2.len() != self.w2.cols() {
            return Err(Error::shape(format!(
                "head shapes w1 {:?}, b1 {}, w2 {:?}, b2 {} are inconsistent",
                self.w1.shape(),
                self.b1.len(),
                self.w2.shape(),
                self.b2.len()
            )));
        }
        Ok(())
    }

    /// `params -= lr * step`.
    pub fn apply(&mut self, step: &HeadGrads, lr: f64) {
        self.w1.axpy(-lr, &step.w1).expect("matching shapes");
        self.w2.axpy(-lr, &step.w2).expect("matching shapes");
        self.b1.iter_mut().zip(&step.b1).for_each(|(p, g)| *p -= lr * g);
        self.b2.iter_mut().zip(&step.b2).for_each(|(p, g)| *p -= lr * g);
    }

    /// Embeds every location of a feature map, row-major.
    pub fn embed_map(&self, fm: &FeatureMap, side: Side) -> Result<EmbeddingSet> {
        Ok(head_forward(self, &fm.as_matrix(), side)?.0)
    }
}

/// Gradients with the same layout as [`ProjectionHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros_like(head: &ProjectionHead) -> Self {
        HeadGrads {
            w1: Matrix::zeros(head.w1.rows(), head.w1.cols()),
            b1: vec![0.0; head.b1.len()],
            w2: Matrix::zeros(head.w2.rows(), head.w2.cols()),
            b2: vec![0.0; head.b2.len()],
        }
    }

    /// `self = decay * self + other`.
    pub fn decay_add(&mut self, decay: f64, other: &HeadGrads) {
        self.w1.scale(decay);
        self.w1.axpy(1.0, &other.w1).expect("matching shapes");
        self.w2.scale(decay);
        self.w2.axpy(1.0, &other.w2).expect("matching shapes");
        for (a, b) in self.b1.iter_mut().zip(&other.b1).chain(self.b2.iter_mut().zip(&other.b2)) {
            *a = decay * *a + b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        let b = self.b1.iter().chain(&self.b2).fold(0.0f64, |m, v| m.max(v.abs()));
        self.w1.max_abs().max(self.w2.max_abs()).max(b)
    }
}

/// Intermediate values kept for [`head_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Matrix,
    pub pre_hidden: Matrix,
    pub hidden: Matrix,
    pub pre_norm: Matrix,
    pub normalized: bool,
}

pub fn head_forward(head: &ProjectionHead, patches: &Matrix, side: Side) -> Result<(EmbeddingSet, ForwardCache)> {
    head.validate()?;
    if patches.cols() != head.in_dim() {
        return Err(Error::shape(format!(
            "patches have {} channels, head expects {}",
            patches.cols(),
            head.in_dim()
        )));
    }
    let mut pre_hidden = matmul(patches, &head.w1)?;
    add_bias(&mut pre_hidden, &head.b1);
    let mut hidden = pre_hidden.clone();
    hidden.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    let mut pre_norm = matmul(&hidden, &head.w2)?;
    add_bias(&mut pre_norm, &head.b2);
    let out = if head.normalize {
        EmbeddingSet::new(l2_normalize_rows(&pre_norm)?, side)?
    } else {
        EmbeddingSet::unnormalized(pre_norm.clone(), side)
    };
    let cache = ForwardCache { input: patches.clone(), pre_hidden, hidden, pre_norm, normalized: head.normalize };
    Ok((out, cache))
}

fn add_bias(m: &mut Matrix, b: &[f64]) {
    for i in 0..m.rows() {
        m.row_mut(i).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
    }
}

/// Exact backward pass. Returns parameter gradients and the gradient with
/// respect to the input patches.
pub fn head_backward(head: &ProjectionHead, cache: &ForwardCache, grad_out: &Matrix) -> Result<(HeadGrads, Matrix)> {
    if grad_out.shape() != cache.pre_norm.shape() {
        return Err(Error::shape(format!(
            "grad_out {:?} does not match forward output {:?}",
            grad_out.shape(),
            cache.pre_norm.shape()
        )));
    }
    if cache.hidden.cols() != head.w2.rows() || cache.input.cols() != head.w1.rows() {
        return Err(Error::shape("cache was produced by a head of different shape"));
    }
    let g_pre_norm = if cache.normalized {
        l2_normalize_rows_vjp(&cache.pre_norm, grad_out)?
    } else {
        grad_out.clone()
    };
    let w2 = matmul_tn(&cache.hidden, &g_pre_norm)?;
    let b2 = g_pre_norm.col_sums();
    let mut g_hidden = matmul(&g_pre_norm, &head.w2.transpose())?;
    for (g, pre) in g_hidden.data_mut().iter_mut().zip(cache.pre_hidden.data()) {
        if *pre <= 0.0 {
            *g = 0.0;
        }
    }
    let w1 = matmul_tn(&cache.input, &g_hidden)?;
    let b1 = g_hidden.col_sums();
    let grad_input = matmul(&g_hidden, &head.w1.transpose())?;
    Ok((HeadGrads { w1, b1, w2, b2 }, grad_input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;

    fn random_map(rng: &mut RngState, h: usize, w: usize, c: usize) -> FeatureMap {
        let v = (0..h * w * c).map(|_| rng.gaussian()).collect();
        FeatureMap::new(h, w, c, v).unwrap()
    }

    #[test]
    fn sampling_examples() {
        let mut rng = RngState::new(9);
        assert_eq!(sample_patch_indices(&mut rng, 1, 1, 1).unwrap().as_slice(), &[0]);

        let mut all = sample_patch_indices(&mut rng, 16, 16, 256).unwrap().as_slice().to_vec();
        all.sort_unstable();
        assert_eq!(all, (0..256).collect::<Vec<_>>());

        let a = sample_patch_indices(&mut RngState::new(77), 32, 32, 256).unwrap();
        let b = sample_patch_indices(&mut RngState::new(77), 32, 32, 256).unwrap();
        assert_eq!(a, b);
        let mut s = a.as_slice().to_vec();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 256);
        assert!(s.iter().all(|i| *i < 1024));

        assert!(sample_patch_indices(&mut rng, 2, 2, 5).is_err());
    }

    #[test]
    fn index_set_rejects_duplicates_and_range() {
        assert!(PatchIndexSet::new(vec![0, 1, 1], 4).is_err());
        assert!(matches!(PatchIndexSet::new(vec![4], 4), Err(Error::IndexOutOfRange { index: 4, len: 4 })));
    }

    #[test]
    fn gather_examples() {
        let fm = FeatureMap::new(2, 3, 2, vec![1.5; 12]).unwrap();
        let idx = PatchIndexSet::new(vec![0, 4, 5], 6).unwrap();
        let g = gather_patches(&fm, &idx).unwrap();
        assert!(g.data().iter().all(|v| *v == 1.5));

        let fm = FeatureMap::new(1, 2, 1, vec![0.25, -3.0]).unwrap();
        let g = gather_patches(&fm, &PatchIndexSet::new(vec![1], 2).unwrap()).unwrap();
        assert_eq!(g.data(), &[-3.0]);

        let mut rng = RngState::new(2);
        let fm = random_map(&mut rng, 5, 7, 3);
        let idx = sample_patch_indices(&mut rng, 5, 7, 12).unwrap();
        let g = gather_patches(&fm, &idx).unwrap();
        for (r, &flat) in idx.as_slice().iter().enumerate() {
            let (h, w) = (flat / 7, flat % 7);
            for c in 0..3 {
                assert_eq!(g.get(r, c), fm.values()[(h * 7 + w) * 3 + c]);
            }
        }

        let big = PatchIndexSet(vec![99]);
        assert!(gather_patches(&fm, &big).is_err());
    }

    #[test]
    fn identity_head_is_normalization() {
        let head = ProjectionHead {
            w1: Matrix::identity(2),
            b1: vec![0.0; 2],
            w2: Matrix::identity(2),
            b2: vec![0.0; 2],
            normalize: true,
        };
        let x = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let (e, _) = head_forward(&head, &x, Side::Input).unwrap();
        assert!((e.vectors().get(0, 0) - 0.6).abs() < 1e-15);
        assert!((e.vectors().get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn constant_head() {
        let head = ProjectionHead {
            w1: Matrix::zeros(3, 4),
            b1: vec![0.0; 4],
            w2: Matrix::zeros(4, 4),
            b2: vec![1.0, 0.0, 0.0, 0.0],
            normalize: true,
        };
        let mut rng = RngState::new(1);
        let x = rng.gaussian_matrix(5, 3, 1.0);
        let (e, _) = head_forward(&head, &x, Side::Output).unwrap();
        for i in 0..5 {
            assert_eq!(e.vectors().row(i), &[1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn random_head_outputs_unit_rows() {
        let mut rng = RngState::new(4);
        let head = ProjectionHead::init(&mut rng, 6, 8);
        let x = rng.gaussian_matrix(20, 6, 1.0);
        let (e, _) = head_forward(&head, &x, Side::Input).unwrap();
        for i in 0..20 {
            let n = dot(e.vectors().row(i), e.vectors().row(i)).sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert!(head_forward(&head, &rng.gaussian_matrix(2, 5, 1.0), Side::Input).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = RngState::new(8);
        let head = ProjectionHead::init(&mut rng, 4, 5);
        let x = rng.gaussian_matrix(6, 4, 1.0);
        let (_, cache) = head_forward(&head, &x, Side::Input).unwrap();
        let (g, gx) = head_backward(&head, &cache, &Matrix::zeros(6, 5)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert_eq!(gx.max_abs(), 0.0);
        assert!(head_backward(&head, &cache, &Matrix::zeros(6, 4)).is_err());
    }

    #[test]
    fn linear_special_case_matches_hand_derivation() {
        // Identity second layer, no normalization, positive pre-activations:
        // output = x W1 + b1, so dW1 = xᵀ g and db1 = Σ_rows g.
        let mut rng = RngState::new(12);
        let x = Matrix::from_fn(3, 2, |_, _| 1.0 + rng.uniform());
        let w1 = Matrix::from_fn(2, 2, |_, _| 0.5 + rng.uniform());
        let head = ProjectionHead { w1, b1: vec![0.1, 0.2], w2: Matrix::identity(2), b2: vec![0.0; 2], normalize: false };
        let g = rng.gaussian_matrix(3, 2, 1.0);
        let (_, cache) = head_forward(&head, &x, Side::Input).unwrap();
        let (grads, _) = head_backward(&head, &cache, &g).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let hand: f64 = (0..3).map(|r| x.get(r, a) * g.get(r, b)).sum();
                assert!((grads.w1.get(a, b) - hand).abs() < 1e-14);
            }
            let hand_b: f64 = (0..3).map(|r| g.get(r, a)).sum();
            assert!((grads.b1[a] - hand_b).abs() < 1e-14);
        }
    }
}
