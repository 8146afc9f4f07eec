//! Patch-wise similarity distributions and the semantic relation consistency
//! (SRC) loss.
//!
//! For embeddings `e` (rows `e_k`), the relation of patch `k` is the softmax
//! over `j` of `e_kᵀe_j / tau_rel`. The SRC loss sums, over `k`, the
//! Jensen-Shannon divergence between the input-side relation `P_k` (from `z`)
//! and the output-side relation `Q_k` (from `w`).

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, lse, matmul, matmul_nt, Matrix};

/// Which side of the divergence, if any, is treated as a fixed target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetachSide {
    #[default]
    None,
    /// No gradient flows to `z`.
    Input,
    /// No gradient flows to `w`.
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelationConfig {
    /// Include `j == k` in each relation row.
    pub include_self: bool,
    pub tau_rel: f64,
    pub detach_side: DetachSide,
}

impl Default for RelationConfig {
    fn default() -> Self {
        RelationConfig { include_self: true, tau_rel: 1.0, detach_side: DetachSide::None }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_rel > 0.0 && self.tau_rel.is_finite()) {
            return Err(Error::pre(format!("tau_rel must be positive, got {}", self.tau_rel)));
        }
        Ok(())
    }

    fn min_patches(&self) -> usize {
        if self.include_self {
            2
        } else {
            3
        }
    }
}

/// Row `k` holds `P_k` (or `Q_k`). Without self-inclusion row `k` has `K-1`
/// columns and skips index `k`; see [`SimilarityDistribution::column_patch`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDistribution {
    pub probs: Matrix,
    pub include_self: bool,
    pub tau_rel: f64,
}

impl SimilarityDistribution {
    /// Patch index that column `col` of row `row` refers to.
    pub fn column_patch(&self, row: usize, col: usize) -> usize {
        column_patch(self.include_self, row, col)
    }
}

fn column_patch(include_self: bool, row: usize, col: usize) -> usize {
    if include_self || col < row {
        col
    } else {
        col + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrcResult {
    pub loss: f64,
    pub grad_z: Matrix,
    pub grad_w: Matrix,
}

fn check_patches(e: &Matrix, cfg: &RelationConfig) -> Result<()> {
    cfg.validate()?;
    if e.rows() < cfg.min_patches() {
        return Err(Error::pre(format!(
            "relation needs at least {} patches (include_self = {}), got {}",
            cfg.min_patches(),
            cfg.include_self,
            e.rows()
        )));
    }
    Ok(())
}

/// Relation logits of row `k`, in column order.
fn row_logits(e: &Matrix, k: usize, cfg: &RelationConfig, out: &mut Vec<f64>) {
    out.clear();
    let ek = e.row(k);
    for j in 0..e.rows() {
        if j == k && !cfg.include_self {
            continue;
        }
        out.push(dot(ek, e.row(j)) / cfg.tau_rel);
    }
}

fn gram_logits(gram: &Matrix, k: usize, cfg: &RelationConfig, out: &mut Vec<f64>) {
    out.clear();
    for (j, &g) in gram.row(k).iter().enumerate() {
        if j == k && !cfg.include_self {
            continue;
        }
        out.push(g / cfg.tau_rel);
    }
}

/// Turns logits into log-probabilities in place and writes the probabilities.
fn log_softmax_into(logits: &mut [f64], probs: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    probs.clear();
    probs.extend(logits.iter().map(|x| (x - max).exp()));
    let sum: f64 = probs.iter().sum();
    let shift = max + sum.ln();
    probs.iter_mut().for_each(|p| *p /= sum);
    logits.iter_mut().for_each(|x| *x -= shift);
}

fn log_normalize(v: &mut [f64]) {
    let z = lse(v);
    v.iter_mut().for_each(|x| *x -= z);
}

pub fn similarity_distribution(e: &Matrix, include_self: bool, tau_rel: f64) -> Result<SimilarityDistribution> {
    let cfg = RelationConfig { include_self, tau_rel, ..Default::default() };
    check_patches(e, &cfg)?;
    let k = e.rows();
    let m = if include_self { k } else { k - 1 };
    let mut probs = Matrix::zeros(k, m);
    let mut buf = Vec::with_capacity(k);
    for r in 0..k {
        row_logits(e, r, &cfg, &mut buf);
        log_normalize(&mut buf);
        probs.row_mut(r).iter_mut().zip(&buf).for_each(|(p, l)| *p = l.exp());
    }
    Ok(SimilarityDistribution { probs, include_self, tau_rel })
}

/// Jensen-Shannon divergence in nats, with `0·log 0 = 0`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("jsd of lengths {} and {}", p.len(), q.len())));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 || v.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::pre(format!("{name} is not a probability vector (sum {s})")));
        }
    }
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m).ln();
        }
    }
    Ok(acc.clamp(0.0, LN_2))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Adds the gradient of a relation row with logit gradient `da` to `grad`.
/// Adds the gradient of `Σ_kj da_kj · e_kᵀe_j / τ` to `grad`, where `da` is
/// a full `K×K` matrix of logit gradients (zero on the diagonal when self
/// pairs are excluded).
fn scatter_logit_grad(e: &Matrix, da: &Matrix, tau: f64, grad: &mut Matrix) -> Result<()> {
    let mut sym = da.clone();
    sym.axpy(1.0, &da.transpose())?;
    let g = matmul(&sym, e)?;
    grad.axpy(1.0 / tau, &g)?;
    Ok(())
}

/// `Σ_k JSD(P_k ‖ Q_k)` with exact gradients with respect to the rows of `z`
/// and `w` as given (no normalization is applied here).
pub fn src_loss(z: &Matrix, w: &Matrix, cfg: &RelationConfig) -> Result<SrcResult> {
    if z.rows() != w.rows() {
        return Err(Error::shape(format!("z has {} patches, w has {}", z.rows(), w.rows())));
    }
    if z.cols() != w.cols() {
        return Err(Error::shape(format!("z has dimension {}, w has {}", z.cols(), w.cols())));
    }
    check_patches(z, cfg)?;
    let k = z.rows();
    let gram_z = matmul_nt(z, z)?;
    let gram_w = matmul_nt(w, w)?;
    let mut da_z = Matrix::zeros(k, k);
    let mut da_w = Matrix::zeros(k, k);
    let mut total = 0.0;
    let (mut lp, mut lq) = (Vec::with_capacity(k), Vec::with_capacity(k));
    let (mut p, mut q) = (Vec::with_capacity(k), Vec::with_capacity(k));
    let (mut gp, mut gq) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for r in 0..k {
        gram_logits(&gram_z, r, cfg, &mut lp);
        gram_logits(&gram_w, r, cfg, &mut lq);
        log_softmax_into(&mut lp, &mut p);
        log_softmax_into(&mut lq, &mut q);
        gp.clear();
        gq.clear();
        let mut div = 0.0;
        for i in 0..lp.len() {
            let (a, b) = (lp[i], lq[i]);
            // log p - log m and log q - log m with m = (p + q) / 2.
            let (dp, dq) = if a == b {
                (0.0, 0.0)
            } else {
                let m = 0.5 * (p[i] + q[i]);
                if m > 1e-300 {
                    let lm = m.ln();
                    (a - lm, b - lm)
                } else {
                    (LN_2 - softplus(b - a), LN_2 - softplus(a - b))
                }
            };
            div += 0.5 * (p[i] * dp + q[i] * dq);
            gp.push(0.5 * dp);
            gq.push(0.5 * dq);
        }
        total += div.clamp(0.0, LN_2);

        softmax_backward(&p, &mut gp);
        softmax_backward(&q, &mut gq);
        for (col, (&a, &b)) in gp.iter().zip(&gq).enumerate() {
            let j = column_patch(cfg.include_self, r, col);
            da_z.set(r, j, a);
            da_w.set(r, j, b);
        }
    }
    let mut grad_z = Matrix::zeros(k, z.cols());
    let mut grad_w = Matrix::zeros(k, w.cols());
    if cfg.detach_side != DetachSide::Input {
        scatter_logit_grad(z, &da_z, cfg.tau_rel, &mut grad_z)?;
    }
    if cfg.detach_side != DetachSide::Output {
        scatter_logit_grad(w, &da_w, cfg.tau_rel, &mut grad_w)?;
    }
    Ok(SrcResult { loss: total, grad_z, grad_w })
}

/// Turns `g = dL/dp` into `dL/da` in place for `p = softmax(a)`, given `log p`.
fn softmax_backward(p: &[f64], g: &mut [f64]) {
    let mean: f64 = p.iter().zip(g.iter()).map(|(pi, gi)| pi * gi).sum();
    for (gi, pi) in g.iter_mut().zip(p) {
        *gi = pi * (*gi - mean);
    }
}
