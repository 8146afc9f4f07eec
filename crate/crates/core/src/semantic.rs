//! Hardness curriculum and the composite objective
//! `λ_src · L_src + λ_hdce · L_hdce(γ(t), τ)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::contrast::{hard_infonce, hdce, infonce, ContrastConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::relation::{src_loss, RelationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleShape {
    #[default]
    Linear,
    Cosine,
}

/// Ramp of the hardness parameter from `gamma_min` at step 0 to `gamma_max`
/// at `warmup_steps` and after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSchedule {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub warmup_steps: u64,
    pub shape: ScheduleShape,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule { gamma_min: 0.0, gamma_max: 2.0, warmup_steps: 1000, shape: ScheduleShape::Linear }
    }
}

impl CurriculumSchedule {
    pub fn constant(gamma: f64) -> Self {
        CurriculumSchedule { gamma_min: gamma, gamma_max: gamma, warmup_steps: 0, shape: ScheduleShape::Linear }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_min >= 0.0 && self.gamma_min.is_finite() && self.gamma_max.is_finite()) {
            return Err(Error::pre(format!("gamma_min must be nonnegative, got {}", self.gamma_min)));
        }
        if self.gamma_max < self.gamma_min {
            return Err(Error::pre(format!(
                "gamma_max {} is below gamma_min {}",
                self.gamma_max, self.gamma_min
            )));
        }
        Ok(())
    }

    /// True when the schedule is identically zero.
    pub fn is_zero(&self) -> bool {
        self.gamma_min == 0.0 && self.gamma_max == 0.0
    }
}

pub fn gamma_at(s: &CurriculumSchedule, t: u64) -> f64 {
    let frac = if s.warmup_steps == 0 { 1.0 } else { (t as f64 / s.warmup_steps as f64).min(1.0) };
    let ramp = match s.shape {
        ScheduleShape::Linear => frac,
        ScheduleShape::Cosine => (1.0 - (PI * frac).cos()) / 2.0,
    };
    if frac >= 1.0 {
        return s.gamma_max;
    }
    s.gamma_min + (s.gamma_max - s.gamma_min) * ramp
}

/// Which contrastive form carries the `λ_hdce` weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastKind {
    /// Decoupled form; with a nonzero schedule this is hDCE.
    #[default]
    Dce,
    /// Positive kept in the denominator.
    Infonce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemanticLossConfig {
    pub lambda_src: f64,
    pub lambda_hdce: f64,
    pub contrastive: ContrastKind,
    /// `gamma` here is ignored; the schedule supplies it.
    pub contrast: ContrastConfig,
    pub relation: RelationConfig,
    pub schedule: CurriculumSchedule,
    /// Evaluate the side InfoNCE for coupling statistics (no gradient).
    pub diagnostics: bool,
}

impl Default for SemanticLossConfig {
    fn default() -> Self {
        SemanticLossConfig {
            lambda_src: 1.0,
            lambda_hdce: 1.0,
            contrastive: ContrastKind::Dce,
            contrast: ContrastConfig::default(),
            relation: RelationConfig::default(),
            schedule: CurriculumSchedule::default(),
            diagnostics: true,
        }
    }
}

impl SemanticLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_src", self.lambda_src), ("lambda_hdce", self.lambda_hdce)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::pre(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.lambda_src == 0.0 && self.lambda_hdce == 0.0 {
            return Err(Error::pre("at least one of lambda_src, lambda_hdce must be positive"));
        }
        self.contrast.validate()?;
        self.relation.validate()?;
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    pub l_src: f64,
    /// Value of the contrastive term (hDCE, or InfoNCE for that variant).
    pub l_hdce: f64,
    pub gamma: f64,
    pub l_infonce: f64,
    pub npc_mean: f64,
    pub npc_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticOutput {
    pub loss: f64,
    pub grad_z: Matrix,
    pub grad_w: Matrix,
    pub diagnostics: Diagnostics,
}

pub fn semantic_loss(z: &Matrix, w: &Matrix, cfg: &SemanticLossConfig, t: u64) -> Result<SemanticOutput> {
    cfg.validate()?;
    if z.shape() != w.shape() {
        return Err(Error::shape(format!("z is {:?}, w is {:?}", z.shape(), w.shape())));
    }
    let gamma = gamma_at(&cfg.schedule, t);
    let contrast = ContrastConfig { gamma, ..cfg.contrast };
    let mut grad_z = Matrix::zeros(z.rows(), z.cols());
    let mut grad_w = Matrix::zeros(w.rows(), w.cols());
    let mut loss = 0.0;
    let mut diag = Diagnostics { gamma, ..Default::default() };

    if cfg.lambda_src != 0.0 || cfg.diagnostics {
        let r = src_loss(z, w, &cfg.relation)?;
        diag.l_src = r.loss;
        if cfg.lambda_src != 0.0 {
            loss += cfg.lambda_src * r.loss;
            grad_z.axpy(cfg.lambda_src, &r.grad_z)?;
            grad_w.axpy(cfg.lambda_src, &r.grad_w)?;
        }
    }
    if cfg.lambda_hdce != 0.0 || cfg.diagnostics {
        let r = match cfg.contrastive {
            ContrastKind::Dce => hdce(z, w, &contrast)?,
            ContrastKind::Infonce => hard_infonce(z, w, &contrast)?,
        };
        diag.l_hdce = r.loss;
        if cfg.lambda_hdce != 0.0 {
            loss += cfg.lambda_hdce * r.loss;
            grad_z.axpy(cfg.lambda_hdce, &r.grad_z)?;
            grad_w.axpy(cfg.lambda_hdce, &r.grad_w)?;
        }
    }
    if cfg.diagnostics {
        let side = infonce(z, w, &contrast)?;
        diag.l_infonce = side.loss;
        diag.npc_mean = side.npc.iter().sum::<f64>() / side.npc.len() as f64;
        diag.npc_min = side.npc.iter().copied().fold(f64::INFINITY, f64::min);
    }
    Ok(SemanticOutput { loss, grad_z, grad_w, diagnostics: diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::dce;
    use crate::numerics::RngState;
    use proptest::prelude::*;

    fn linear(min: f64, max: f64, t: u64) -> CurriculumSchedule {
        CurriculumSchedule { gamma_min: min, gamma_max: max, warmup_steps: t, shape: ScheduleShape::Linear }
    }

    #[test]
    fn linear_schedule_examples() {
        let s = linear(0.0, 2.0, 100);
        assert_eq!(gamma_at(&s, 0), 0.0);
        assert_eq!(gamma_at(&s, 50), 1.0);
        assert_eq!(gamma_at(&s, 1_000_000), 2.0);
        assert_eq!(gamma_at(&s, 100), 2.0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = CurriculumSchedule { shape: ScheduleShape::Cosine, ..linear(0.5, 1.5, 10) };
        assert_eq!(gamma_at(&s, 0), 0.5);
        assert!((gamma_at(&s, 5) - 1.0).abs() < 1e-15);
        assert_eq!(gamma_at(&s, 10), 1.5);
        assert_eq!(gamma_at(&CurriculumSchedule::constant(3.0), 0), 3.0);
    }

    #[test]
    fn schedule_validation() {
        assert!(linear(1.0, 0.5, 10).validate().is_err());
        assert!(linear(-1.0, 0.5, 10).validate().is_err());
    }

    #[test]
    fn reduces_to_dce() {
        let mut rng = RngState::new(6);
        let z = rng.unit_rows(6, 4);
        let w = rng.unit_rows(6, 4);
        let cfg = SemanticLossConfig {
            lambda_src: 0.0,
            lambda_hdce: 1.0,
            schedule: CurriculumSchedule::constant(0.0),
            ..Default::default()
        };
        let s = semantic_loss(&z, &w, &cfg, 17).unwrap();
        let d = dce(&z, &w, &cfg.contrast).unwrap();
        assert_eq!(s.loss, d.loss);
        assert_eq!(s.grad_z, d.grad_z);
        assert_eq!(s.grad_w, d.grad_w);
    }

    #[test]
    fn src_only_vanishes_on_identical_sides() {
        let mut rng = RngState::new(7);
        let z = rng.unit_rows(5, 3);
        let cfg = SemanticLossConfig { lambda_src: 1.0, lambda_hdce: 0.0, ..Default::default() };
        assert_eq!(semantic_loss(&z, &z, &cfg, 0).unwrap().loss, 0.0);
    }

    #[test]
    fn both_lambdas_zero_is_rejected() {
        let z = Matrix::identity(3);
        let cfg = SemanticLossConfig { lambda_src: 0.0, lambda_hdce: 0.0, ..Default::default() };
        assert!(semantic_loss(&z, &z, &cfg, 0).is_err());
    }

    #[test]
    fn diagnostics_do_not_change_gradients() {
        let mut rng = RngState::new(8);
        let z = rng.unit_rows(6, 4);
        let w = rng.unit_rows(6, 4);
        let on = SemanticLossConfig::default();
        let off = SemanticLossConfig { diagnostics: false, ..on };
        let a = semantic_loss(&z, &w, &on, 300).unwrap();
        let b = semantic_loss(&z, &w, &off, 300).unwrap();
        assert_eq!((a.loss, &a.grad_z, &a.grad_w), (b.loss, &b.grad_z, &b.grad_w));
        assert!(a.diagnostics.npc_min > 0.0 && a.diagnostics.npc_mean < 1.0);
    }

    #[test]
    fn composition_matches_parts() {
        let mut rng = RngState::new(9);
        let z = rng.unit_rows(7, 4);
        let w = rng.unit_rows(7, 4);
        let cfg = SemanticLossConfig::default();
        let t = 400;
        let s = semantic_loss(&z, &w, &cfg, t).unwrap();
        let contrast = ContrastConfig { gamma: gamma_at(&cfg.schedule, t), ..cfg.contrast };
        let src = src_loss(&z, &w, &cfg.relation).unwrap().loss;
        let h = hdce(&z, &w, &contrast).unwrap().loss;
        assert!((s.loss - (src + h)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gamma_monotone(min in 0.0f64..3.0, span in 0.0f64..3.0, warm in 0u64..500, cosine: bool) {
            let s = CurriculumSchedule {
                gamma_min: min,
                gamma_max: min + span,
                warmup_steps: warm,
                shape: if cosine { ScheduleShape::Cosine } else { ScheduleShape::Linear },
            };
            prop_assert_eq!(gamma_at(&s, 0), if warm == 0 { min + span } else { min });
            let mut prev = gamma_at(&s, 0);
            for t in 1..600 {
                let g = gamma_at(&s, t);
                prop_assert!(g >= prev);
                prev = g;
            }
            prop_assert_eq!(gamma_at(&s, warm.max(1) * 3), min + span);
        }

        #[test]
        fn linear_in_lambdas(seed in any::<u64>(), l1 in 0.1f64..3.0, l2 in 0.1f64..3.0) {
            let mut rng = RngState::new(seed);
            let z = rng.unit_rows(6, 3);
            let w = rng.unit_rows(6, 3);
            let base = SemanticLossConfig { diagnostics: false, ..Default::default() };
            let both = semantic_loss(&z, &w, &SemanticLossConfig { lambda_src: l1, lambda_hdce: l2, ..base }, 250).unwrap();
            let src = semantic_loss(&z, &w, &SemanticLossConfig { lambda_src: 1.0, lambda_hdce: 0.0, ..base }, 250).unwrap();
            let hd = semantic_loss(&z, &w, &SemanticLossConfig { lambda_src: 0.0, lambda_hdce: 1.0, ..base }, 250).unwrap();
            prop_assert!((both.loss - (l1 * src.loss + l2 * hd.loss)).abs() < 1e-12);
            for (g, (a, b)) in both.grad_z.data().iter().zip(src.grad_z.data().iter().zip(hd.grad_z.data())) {
                prop_assert!((g - (l1 * a + l2 * b)).abs() < 1e-12);
            }
            for (g, (a, b)) in both.grad_w.data().iter().zip(src.grad_w.data().iter().zip(hd.grad_w.data())) {
                prop_assert!((g - (l1 * a + l2 * b)).abs() < 1e-12);
            }
        }
    }
}
