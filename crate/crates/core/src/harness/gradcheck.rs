//! Central finite-difference checks of every analytic gradient in the crate.

use std::fmt;

use crate::contrast::{dce, hdce, infonce, ContrastConfig, ContrastResult};
use crate::embedding::{head_backward, head_forward, HeadGrads, ProjectionHead, Side};
use crate::error::Result;
use crate::numerics::{Matrix, RngState};
use crate::relation::{src_loss, RelationConfig};
use crate::semantic::{semantic_loss, CurriculumSchedule, SemanticLossConfig};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Largest relative error `gradcheck_all` accepts.
pub const PASS_THRESHOLD: f64 = 1e-5;
/// Pre-activations closer than this to the rectifier kink are resampled.
pub const KINK_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Src,
    InfoNce,
    Dce,
    HDce,
    Head,
    Composite,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::Src, Family::InfoNce, Family::Dce, Family::HDce, Family::Head, Family::Composite];

    pub fn name(self) -> &'static str {
        match self {
            Family::Src => "src",
            Family::InfoNce => "infonce",
            Family::Dce => "dce",
            Family::HDce => "hdce",
            Family::Head => "head",
            Family::Composite => "composite",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// `max|a - n| / max(max|a|, max|n|)`, the relative error of the gradient as a
/// whole. Zero when both are zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub max_patches: usize,
    pub max_dim: usize,
    /// Flip the sign of this family's analytic gradient (mutation check).
    pub corrupt: Option<Family>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { trials: 100, max_patches: 8, max_dim: 8, corrupt: None }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub entries: Vec<(Family, f64)>,
}

impl GradcheckReport {
    pub fn max_error(&self, family: Family) -> Option<f64> {
        self.entries.iter().find(|(f, _)| *f == family).map(|(_, e)| *e)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|(_, e)| *e < PASS_THRESHOLD)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (family, err) in &self.entries {
            let verdict = if *err < PASS_THRESHOLD { "ok" } else { "FAIL" };
            writeln!(f, "{:<10} max_rel_err={:.3e} {}", family.name(), err, verdict)?;
        }
        Ok(())
    }
}

struct Instance {
    z: Matrix,
    w: Matrix,
    tau: f64,
}

fn random_instance(rng: &mut RngState, opts: &GradcheckOptions, min_k: usize) -> Instance {
    let k = min_k + rng.below(opts.max_patches - min_k + 1);
    let d = 2 + rng.below(opts.max_dim - 1);
    Instance { z: rng.unit_rows(k, d), w: rng.unit_rows(k, d), tau: rng.uniform_range(0.1, 1.0) }
}

fn sign(corrupt: bool) -> f64 {
    if corrupt {
        -1.0
    } else {
        1.0
    }
}

fn pair_error(inst: &Instance, analytic: (&Matrix, &Matrix), flip: bool, f: impl Fn(&Matrix, &Matrix) -> f64) -> f64 {
    let s = sign(flip);
    let nz = numeric_grad(&inst.z, FD_STEP, |z| f(z, &inst.w));
    let nw = numeric_grad(&inst.w, FD_STEP, |w| f(&inst.z, w));
    let az = analytic.0.scaled(s);
    let aw = analytic.1.scaled(s);
    relative_error(az.data(), nz.data()).max(relative_error(aw.data(), nw.data()))
}

fn check_contrast(
    rng: &mut RngState,
    opts: &GradcheckOptions,
    family: Family,
    loss: fn(&Matrix, &Matrix, &ContrastConfig) -> Result<ContrastResult>,
    gamma: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..opts.trials {
        let inst = random_instance(rng, opts, 2);
        let cfg = ContrastConfig { tau: inst.tau, gamma, detach_weights: false };
        let r = loss(&inst.z, &inst.w, &cfg)?;
        let e = pair_error(&inst, (&r.grad_z, &r.grad_w), opts.corrupt == Some(family), |z, w| {
            loss(z, w, &cfg).expect("valid instance").loss
        });
        worst = worst.max(e);
    }
    Ok(worst)
}

fn check_src(rng: &mut RngState, opts: &GradcheckOptions) -> Result<f64> {
    let mut worst = 0.0f64;
    for trial in 0..opts.trials {
        let include_self = trial % 2 == 0;
        let inst = random_instance(rng, opts, 3);
        let cfg = RelationConfig { include_self, tau_rel: inst.tau * 2.0, ..Default::default() };
        let r = src_loss(&inst.z, &inst.w, &cfg)?;
        let e = pair_error(&inst, (&r.grad_z, &r.grad_w), opts.corrupt == Some(Family::Src), |z, w| {
            src_loss(z, w, &cfg).expect("valid instance").loss
        });
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Draws patches whose hidden pre-activations all stay clear of the kink.
fn head_instance(rng: &mut RngState, opts: &GradcheckOptions) -> (ProjectionHead, Matrix, Matrix) {
    loop {
        let k = 2 + rng.below(opts.max_patches - 1);
        let c = 2 + rng.below(opts.max_dim - 1);
        let d = 2 + rng.below(opts.max_dim - 1);
        let mut head = ProjectionHead::init(rng, c, d);
        head.b1 = (0..d).map(|_| 0.1 * rng.gaussian()).collect();
        head.b2 = (0..d).map(|_| 0.1 * rng.gaussian()).collect();
        let x_in = rng.gaussian_matrix(k, c, 1.0);
        let x_out = rng.gaussian_matrix(k, c, 1.0);
        let clear = [&x_in, &x_out].iter().all(|x| {
            let (_, cache) = head_forward(&head, x, Side::Input).expect("shapes match");
            cache.pre_hidden.data().iter().all(|v| v.abs() > KINK_MARGIN)
        });
        if clear {
            return (head, x_in, x_out);
        }
    }
}

fn param_count(h: &ProjectionHead) -> usize {
    h.w1.data().len() + h.b1.len() + h.w2.data().len() + h.b2.len()
}

fn param_mut(h: &mut ProjectionHead, mut i: usize) -> &mut f64 {
    if i < h.w1.data().len() {
        return &mut h.w1.data_mut()[i];
    }
    i -= h.w1.data().len();
    if i < h.b1.len() {
        return &mut h.b1[i];
    }
    i -= h.b1.len();
    if i < h.w2.data().len() {
        return &mut h.w2.data_mut()[i];
    }
    &mut h.b2[i - h.w2.data().len()]
}

fn flatten(g: &HeadGrads) -> Vec<f64> {
    let mut v = g.w1.data().to_vec();
    v.extend(&g.b1);
    v.extend(g.w2.data());
    v.extend(&g.b2);
    v
}

fn head_param_fd(head: &ProjectionHead, mut f: impl FnMut(&ProjectionHead) -> f64) -> Vec<f64> {
    let mut probe = head.clone();
    (0..param_count(head))
        .map(|i| {
            let orig = *param_mut(&mut probe, i);
            *param_mut(&mut probe, i) = orig + FD_STEP;
            let up = f(&probe);
            *param_mut(&mut probe, i) = orig - FD_STEP;
            let down = f(&probe);
            *param_mut(&mut probe, i) = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn check_head(rng: &mut RngState, opts: &GradcheckOptions) -> Result<f64> {
    let mut worst = 0.0f64;
    let s = sign(opts.corrupt == Some(Family::Head));
    for _ in 0..opts.trials {
        let (head, x, _) = head_instance(rng, opts);
        let (e, cache) = head_forward(&head, &x, Side::Input)?;
        let g = rng.gaussian_matrix(e.len(), e.dim(), 1.0);
        let scalar = |h: &ProjectionHead, x: &Matrix| -> f64 {
            let (e, _) = head_forward(h, x, Side::Input).expect("shapes match");
            e.vectors().data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        let (grads, gx) = head_backward(&head, &cache, &g)?;
        let analytic: Vec<f64> = flatten(&grads).iter().map(|v| s * v).collect();
        let numeric = head_param_fd(&head, |h| scalar(h, &x));
        let nx = numeric_grad(&x, FD_STEP, |xp| scalar(&head, xp));
        let ax = gx.scaled(s);
        worst = worst.max(relative_error(&analytic, &numeric)).max(relative_error(ax.data(), nx.data()));
    }
    Ok(worst)
}

/// Composite objective through a shared head, gradient with respect to the
/// head parameters.
fn check_composite(rng: &mut RngState, opts: &GradcheckOptions) -> Result<f64> {
    let mut worst = 0.0f64;
    let s = sign(opts.corrupt == Some(Family::Composite));
    for trial in 0..opts.trials {
        let (head, x_in, x_out) = head_instance(rng, opts);
        let cfg = SemanticLossConfig {
            lambda_src: rng.uniform_range(0.2, 2.0),
            lambda_hdce: rng.uniform_range(0.2, 2.0),
            contrast: ContrastConfig { tau: rng.uniform_range(0.1, 1.0), ..Default::default() },
            schedule: CurriculumSchedule::constant(rng.uniform_range(0.0, 2.0)),
            relation: RelationConfig { include_self: trial % 2 == 0, ..Default::default() },
            diagnostics: false,
            ..Default::default()
        };
        if !cfg.relation.include_self && x_in.rows() < 3 {
            continue;
        }
        let value = |h: &ProjectionHead| -> f64 {
            let (z, _) = head_forward(h, &x_in, Side::Input).expect("shapes match");
            let (w, _) = head_forward(h, &x_out, Side::Output).expect("shapes match");
            semantic_loss(z.vectors(), w.vectors(), &cfg, 0).expect("valid config").loss
        };
        let (z, cz) = head_forward(&head, &x_in, Side::Input)?;
        let (w, cw) = head_forward(&head, &x_out, Side::Output)?;
        let out = semantic_loss(z.vectors(), w.vectors(), &cfg, 0)?;
        let (mut gz, _) = head_backward(&head, &cz, &out.grad_z)?;
        let (gw, _) = head_backward(&head, &cw, &out.grad_w)?;
        gz.decay_add(1.0, &gw);
        let analytic: Vec<f64> = flatten(&gz).iter().map(|v| s * v).collect();
        let numeric = head_param_fd(&head, value);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

pub fn gradcheck_with(seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let root = RngState::new(seed);
    let mut entries = Vec::new();
    for (i, family) in Family::ALL.into_iter().enumerate() {
        let mut rng = root.child(i as u64);
        let err = match family {
            Family::Src => check_src(&mut rng, opts)?,
            Family::InfoNce => check_contrast(&mut rng, opts, family, infonce, 0.0)?,
            Family::Dce => check_contrast(&mut rng, opts, family, dce, 0.0)?,
            Family::HDce => check_contrast(&mut rng, opts, family, hdce, 1.0)?,
            Family::Head => check_head(&mut rng, opts)?,
            Family::Composite => check_composite(&mut rng, opts)?,
        };
        entries.push((family, err));
    }
    Ok(GradcheckReport { entries })
}

/// Runs every finite-difference suite with default options.
pub fn gradcheck_all(seed: u64) -> Result<GradcheckReport> {
    gradcheck_with(seed, &GradcheckOptions::default())
}
