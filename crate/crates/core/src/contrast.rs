//! InfoNCE, decoupled InfoNCE (DCE) and hard-negative DCE (hDCE).
//!
//! For positive pair `k` the query is `w_k`, the positive is `z_k` and the
//! negatives are `{z_j : j != k}`. With `s_jk = z_jᵀw_k / tau`:
//!
//! * InfoNCE: `-s_kk + log(exp(s_kk) + Σ_{j≠k} exp(s_jk))`
//! * DCE: `-s_kk + log Σ_{j≠k} exp(s_jk)`
//! * hDCE: `-s_kk + log(N · Ê_k)`, where `Ê_k` is the self-normalized
//!   importance estimate of the negative term under the von Mises-Fisher tilt
//!   `exp(gamma · z_kᵀz_j)`, and `N = K - 1`.
//!
//! All three share one kernel: the negative term is
//! `A_k = log Σ_j exp(γc_jk + s_jk) + log N - log Σ_j exp(γc_jk)` with
//! `c_jk = z_kᵀz_j`, which collapses to `log Σ_j exp(s_jk)` at `γ = 0`
//! bit for bit. InfoNCE adds the positive back into the denominator.
//! Losses are averaged over `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_add_exp, lse, matmul, matmul_nt, matmul_tn, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastConfig {
    /// Temperature.
    pub tau: f64,
    /// Hardness of the negative tilt; 0 gives uniform weights.
    pub gamma: f64,
    /// Treat the importance weights as constants in the backward pass.
    pub detach_weights: bool,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig { tau: 0.07, gamma: 0.0, detach_weights: false }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::pre(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::pre(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastResult {
    /// Mean of `per_positive`.
    pub loss: f64,
    pub grad_z: Matrix,
    pub grad_w: Matrix,
    pub per_positive: Vec<f64>,
    /// Negative-positive coupling coefficient `1 - p_positive` of the InfoNCE
    /// form with this result's negative term. For InfoNCE it is exactly the
    /// factor that scales the DCE gradient with respect to `w_k`.
    pub npc: Vec<f64>,
}

fn check_pair(z: &Matrix, w: &Matrix, cfg: &ContrastConfig) -> Result<()> {
    cfg.validate()?;
    if z.shape() != w.shape() {
        return Err(Error::shape(format!("z is {:?}, w is {:?}", z.shape(), w.shape())));
    }
    if z.rows() < 2 {
        return Err(Error::pre(format!("contrastive losses need K >= 2, got {}", z.rows())));
    }
    Ok(())
}

pub fn infonce(z: &Matrix, w: &Matrix, cfg: &ContrastConfig) -> Result<ContrastResult> {
    kernel(z, w, cfg.tau, 0.0, false, true)
}

pub fn dce(z: &Matrix, w: &Matrix, cfg: &ContrastConfig) -> Result<ContrastResult> {
    kernel(z, w, cfg.tau, 0.0, false, false)
}

pub fn hdce(z: &Matrix, w: &Matrix, cfg: &ContrastConfig) -> Result<ContrastResult> {
    kernel(z, w, cfg.tau, cfg.gamma, cfg.detach_weights, false)
}

/// InfoNCE with the hard-negative estimate in place of the plain negative sum:
/// `-log(exp(s_kk) / (exp(s_kk) + N·Ê_k))`. Used by the InfoNCE rows of the
/// ablation grid; equals [`infonce`] exactly at `gamma = 0`.
pub fn hard_infonce(z: &Matrix, w: &Matrix, cfg: &ContrastConfig) -> Result<ContrastResult> {
    kernel(z, w, cfg.tau, cfg.gamma, cfg.detach_weights, true)
}

fn kernel(
    z: &Matrix,
    w: &Matrix,
    tau: f64,
    gamma: f64,
    detach_weights: bool,
    positive_in_denominator: bool,
) -> Result<ContrastResult> {
    check_pair(z, w, &ContrastConfig { tau, gamma, detach_weights })?;
    let k = z.rows();
    let n = k - 1;
    let ln_n = (n as f64).ln();
    let tilted = gamma != 0.0;

    // sims[j][q] = z_jᵀw_q, cos[q][j] = z_qᵀz_j.
    let sims = matmul_nt(z, w)?;
    let cos = if tilted { Some(matmul_nt(z, z)?) } else { None };

    let mut g_s = Matrix::zeros(k, k); // dL/d(s_jq), indexed [j][q]
    let mut g_c = Matrix::zeros(k, k); // dL/d(c_qj), indexed [q][j]
    let mut per_positive = Vec::with_capacity(k);
    let mut npc = Vec::with_capacity(k);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);

    for q in 0..k {
        a.clear();
        b.clear();
        for j in (0..k).filter(|&j| j != q) {
            let s = sims.get(j, q) / tau;
            match &cos {
                Some(c) => {
                    let t = gamma * c.get(q, j);
                    a.push(t + s);
                    b.push(t);
                }
                None => a.push(s),
            }
        }
        let lse_a = lse(&a);
        let neg = if tilted { lse_a + (ln_n - lse(&b)) } else { lse_a };
        let pos = sims.get(q, q) / tau;
        let log_denominator = log_add_exp(pos, neg);
        let coupling = (neg - log_denominator).exp();
        npc.push(coupling);

        let (loss, d_neg, d_pos) = if positive_in_denominator {
            (log_denominator - pos, coupling, -coupling)
        } else {
            (neg - pos, 1.0, -1.0)
        };
        per_positive.push(loss);

        let lse_b = if tilted { lse(&b) } else { 0.0 };
        g_s.set(q, q, d_pos);
        for (col, j) in (0..k).filter(|&j| j != q).enumerate() {
            let pi = (a[col] - lse_a).exp();
            g_s.set(j, q, d_neg * pi);
            if tilted && !detach_weights {
                let u = (b[col] - lse_b).exp();
                g_c.set(q, j, d_neg * gamma * (pi - u));
            }
        }
    }

    let scale = 1.0 / k as f64;
    // grad_w[q] = Σ_j g_s[j][q] z_j / tau ; grad_z[j] = Σ_q g_s[j][q] w_q / tau.
    let mut grad_w = matmul_tn(&g_s, z)?;
    grad_w.scale(scale / tau);
    let mut grad_z = matmul(&g_s, w)?;
    grad_z.scale(scale / tau);
    if tilted && !detach_weights {
        let mut sym = g_c.clone();
        sym.axpy(1.0, &g_c.transpose())?;
        grad_z.axpy(scale, &matmul(&sym, z)?)?;
    }
    let loss = per_positive.iter().sum::<f64>() * scale;
    Ok(ContrastResult { loss, grad_z, grad_w, per_positive, npc })
}

/// The self-normalized importance estimate `Ê_k` of `E[exp(z⁻ᵀw_k / tau)]`
/// under the tilted negative distribution.
pub fn importance_estimate(z: &Matrix, w: &Matrix, k: usize, cfg: &ContrastConfig) -> Result<f64> {
    check_pair(z, w, cfg)?;
    if k >= z.rows() {
        return Err(Error::IndexOutOfRange { index: k, len: z.rows() });
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for j in (0..z.rows()).filter(|&j| j != k) {
        let t = cfg.gamma * crate::numerics::dot(z.row(k), z.row(j));
        a.push(t + crate::numerics::dot(z.row(j), w.row(k)) / cfg.tau);
        b.push(t);
    }
    Ok((lse(&a) - lse(&b)).exp())
}

/// The closed-form approximation of the coupling coefficient in which the
/// negative similarities are taken against `z_k` instead of `w_k`:
/// `1 - exp(s_kk) / (exp(s_kk) + Σ_{j≠k} exp(z_jᵀz_k / tau))`.
pub fn npc_paper_approx(z: &Matrix, w: &Matrix, cfg: &ContrastConfig) -> Result<Vec<f64>> {
    check_pair(z, w, cfg)?;
    let k = z.rows();
    let zz = matmul_nt(z, z)?;
    let zw = matmul_nt(z, w)?;
    let mut out = Vec::with_capacity(k);
    let mut neg = Vec::with_capacity(k - 1);
    for q in 0..k {
        neg.clear();
        neg.extend((0..k).filter(|&j| j != q).map(|j| zz.get(j, q) / cfg.tau));
        let b = lse(&neg);
        let pos = zw.get(q, q) / cfg.tau;
        out.push((b - log_add_exp(pos, b)).exp());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use proptest::prelude::*;

    fn basis2() -> Matrix {
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    fn cfg(tau: f64, gamma: f64) -> ContrastConfig {
        ContrastConfig { tau, gamma, detach_weights: false }
    }

    #[test]
    fn two_patch_closed_forms() {
        let z = basis2();
        let e = 1f64.exp();
        let r = infonce(&z, &z, &cfg(1.0, 0.0)).unwrap();
        let want = (1.0 + 1.0 / e).ln();
        assert!(r.per_positive.iter().all(|v| (v - want).abs() < 1e-15));
        assert!((want - 0.313262).abs() < 1e-6);
        assert!(r.npc.iter().all(|v| (v - 1.0 / (e + 1.0)).abs() < 1e-15));

        let r = dce(&z, &z, &cfg(1.0, 0.0)).unwrap();
        assert!(r.per_positive.iter().all(|v| (v + 1.0).abs() < 1e-15));
        assert!((r.loss + 1.0).abs() < 1e-15);

        let approx = npc_paper_approx(&z, &z, &cfg(1.0, 0.0)).unwrap();
        assert!(approx.iter().all(|v| (v - 1.0 / (e + 1.0)).abs() < 1e-15));
    }

    #[test]
    fn symmetric_batches() {
        let k = 6;
        let z = Matrix::from_rows(&vec![vec![0.0, 1.0, 0.0]; k]).unwrap();
        let a = infonce(&z, &z, &cfg(0.3, 0.0)).unwrap();
        let b = dce(&z, &z, &cfg(0.3, 0.0)).unwrap();
        for (x, y) in a.per_positive.iter().zip(&b.per_positive) {
            assert!((x - (k as f64).ln()).abs() < 1e-12);
            assert!((y - ((k - 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_negative_instance() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let e = 1f64.exp();
        let e_hat = (e * e + 1.0 / (e * e)) / (e + 1.0 / e);
        assert!((importance_estimate(&z, &w, 0, &cfg(1.0, 1.0)).unwrap() - e_hat).abs() < 1e-14);
        assert!((e_hat - 2.438106996).abs() < 1e-9);
        let h = hdce(&z, &w, &cfg(1.0, 1.0)).unwrap();
        let want = -1.0 + (2.0 * e_hat).ln();
        assert!((h.per_positive[0] - want).abs() < 1e-14);
        assert!((want - 0.584369097).abs() < 1e-9);
        let d = dce(&z, &w, &cfg(1.0, 0.0)).unwrap();
        assert!((d.per_positive[0] - (-1.0 + (e + 1.0 / e).ln())).abs() < 1e-14);
        assert!((d.per_positive[0] - 0.126928011).abs() < 1e-9);
        assert!(h.per_positive[0] > d.per_positive[0]);
    }

    #[test]
    fn vanishing_coupling_instance() {
        let k = 256;
        let z = Matrix::identity(k);
        let r = npc_paper_approx(&z, &z, &cfg(0.07, 0.0)).unwrap();
        let want = 255.0 / ((1.0f64 / 0.07).exp() + 255.0);
        assert!((r[0] - want).abs() < 1e-15);
        assert!(r[0] > 1.5e-4 && r[0] < 1.7e-4);
    }

    #[test]
    fn importance_estimate_matches_enumeration() {
        let mut rng = RngState::new(3);
        for _ in 0..25 {
            let z = rng.unit_rows(4, 3);
            let w = rng.unit_rows(4, 3);
            let c = cfg(0.5, 1.7);
            for k in 0..4 {
                let (mut num, mut den) = (0.0, 0.0);
                for j in 0..4 {
                    if j == k {
                        continue;
                    }
                    let (mut zz, mut zw) = (0.0, 0.0);
                    for d in 0..3 {
                        zz += z.get(k, d) * z.get(j, d);
                        zw += z.get(j, d) * w.get(k, d);
                    }
                    let u = (c.gamma * zz).exp();
                    num += u * (zw / c.tau).exp();
                    den += u;
                }
                let got = importance_estimate(&z, &w, k, &c).unwrap();
                assert!((got - num / den).abs() <= 1e-12 * (num / den).max(1.0));
            }
        }
    }

    #[test]
    fn gamma_zero_reduces_exactly() {
        let mut rng = RngState::new(17);
        let z = rng.unit_rows(7, 5);
        let w = rng.unit_rows(7, 5);
        let d = dce(&z, &w, &cfg(0.2, 0.0)).unwrap();
        let h = hdce(&z, &w, &cfg(0.2, 0.0)).unwrap();
        assert_eq!(d, h);
        let i = infonce(&z, &w, &cfg(0.2, 0.0)).unwrap();
        let hi = hard_infonce(&z, &w, &cfg(0.2, 0.0)).unwrap();
        assert_eq!(i, hi);
    }

    #[test]
    fn coupling_identity() {
        let mut rng = RngState::new(29);
        let z = rng.unit_rows(6, 4);
        let w = rng.unit_rows(6, 4);
        let c = cfg(0.1, 0.0);
        let i = infonce(&z, &w, &c).unwrap();
        let d = dce(&z, &w, &c).unwrap();
        for q in 0..6 {
            for (gi, gd) in i.grad_w.row(q).iter().zip(d.grad_w.row(q)) {
                assert!((gi - i.npc[q] * gd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn detached_weights_drop_tilt_gradient() {
        let mut rng = RngState::new(31);
        let z = rng.unit_rows(5, 3);
        let w = rng.unit_rows(5, 3);
        let a = hdce(&z, &w, &cfg(0.5, 2.0)).unwrap();
        let b = hdce(&z, &w, &ContrastConfig { detach_weights: true, ..cfg(0.5, 2.0) }).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.grad_w, b.grad_w);
        assert!(a.grad_z != b.grad_z);
    }

    #[test]
    fn preconditions() {
        let one = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(infonce(&one, &one, &cfg(1.0, 0.0)).is_err());
        assert!(dce(&basis2(), &basis2(), &cfg(0.0, 0.0)).is_err());
        assert!(hdce(&basis2(), &basis2(), &cfg(1.0, -1.0)).is_err());
        assert!(npc_paper_approx(&one, &one, &cfg(1.0, 0.0)).is_err());
        let three = Matrix::zeros(3, 2);
        assert!(dce(&basis2(), &three, &cfg(1.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn hdce_nondecreasing_in_gamma_at_aligned_positives(seed in any::<u64>(), k in 3usize..10) {
            let mut rng = RngState::new(seed);
            let z = rng.unit_rows(k, 4);
            let mut prev: Option<Vec<f64>> = None;
            for g in [0.0, 0.5, 1.0, 2.0, 4.0] {
                let r = hdce(&z, &z, &cfg(0.5, g)).unwrap();
                if let Some(p) = &prev {
                    for (a, b) in p.iter().zip(&r.per_positive) {
                        prop_assert!(*b >= a - 1e-12);
                    }
                }
                prev = Some(r.per_positive);
            }
        }

        #[test]
        fn joint_permutation_reorders_per_positive(seed in any::<u64>(), k in 2usize..8) {
            let mut rng = RngState::new(seed);
            let z = rng.unit_rows(k, 3);
            let w = rng.unit_rows(k, 3);
            let perm = rng.sample_without_replacement(k, k);
            let (zp, wp) = (z.select_rows(&perm), w.select_rows(&perm));
            for f in [infonce, dce, hdce] {
                let c = cfg(0.3, 1.0);
                let a = f(&z, &w, &c).unwrap();
                let b = f(&zp, &wp, &c).unwrap();
                for (i, &p) in perm.iter().enumerate() {
                    prop_assert!((a.per_positive[p] - b.per_positive[i]).abs() < 1e-12);
                }
                prop_assert!((a.loss - b.loss).abs() < 1e-12);
            }
        }
    }
}
