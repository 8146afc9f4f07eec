//! Training loop for the projection head under the composite objective, and
//! the retrieval/consistency metrics used as desk-scale quality proxies.

use serde::{Deserialize, Serialize};

use crate::embedding::{
    gather_patches, head_backward, head_forward, sample_patch_indices, HeadGrads, ProjectionHead, Side,
};
use crate::error::Result;
use crate::harness::config::RunConfig;
use crate::harness::synthetic::{generate_pair, SyntheticPair};
use crate::numerics::{matmul_nt, Matrix, RngState};
use crate::relation::src_loss;
use crate::semantic::{semantic_loss, SemanticLossConfig};

/// Heads applied to the input and output maps. `output` is `None` when the
/// input head is shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heads {
    pub input: ProjectionHead,
    #[serde(default)]
    pub output: Option<ProjectionHead>,
}

impl Heads {
    pub fn output_head(&self) -> &ProjectionHead {
        self.output.as_ref().unwrap_or(&self.input)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("heads serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let h: Heads = serde_json::from_str(text)?;
        h.input.validate()?;
        if let Some(o) = &h.output {
            o.validate()?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_semantic: f64,
    pub l_src: f64,
    pub l_hdce: f64,
    pub l_infonce: f64,
    pub gamma: f64,
    pub npc_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Fraction of queries `w_k` whose most similar input embedding is `z_k`.
    pub top1_retrieval: f64,
    /// `L_src` over all locations of the evaluation pair.
    pub src_div: f64,
    /// Fraction of patches whose strongest output-side relation shares their cluster.
    pub cluster_consistency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<StepRecord>,
    pub last: FinalMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub heads: Heads,
    pub pair: SyntheticPair,
}

fn argmax(values: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, v) in values {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Retrieval and consistency metrics of embeddings `z`, `w` for every location.
pub fn evaluate(z: &Matrix, w: &Matrix, labels: &[usize], loss: &SemanticLossConfig) -> Result<FinalMetrics> {
    let n = z.rows();
    let zw = matmul_nt(w, z)?; // [q][j] = w_qᵀz_j
    let ww = matmul_nt(w, w)?;
    let mut hits = 0usize;
    let mut consistent = 0usize;
    for q in 0..n {
        if argmax(zw.row(q).iter().copied().enumerate()) == q {
            hits += 1;
        }
        let nearest = argmax(ww.row(q).iter().copied().enumerate().filter(|(j, _)| *j != q));
        if nearest < n && labels[nearest] == labels[q] {
            consistent += 1;
        }
    }
    let src_div = src_loss(z, w, &loss.relation)?.loss;
    Ok(FinalMetrics {
        top1_retrieval: hits as f64 / n as f64,
        src_div,
        cluster_consistency: consistent as f64 / n as f64,
    })
}

/// Embeds every location of the pair with the given heads.
pub fn embed_pair(heads: &Heads, pair: &SyntheticPair) -> Result<(Matrix, Matrix)> {
    let z = heads.input.embed_map(&pair.input, Side::Input)?;
    let w = heads.output_head().embed_map(&pair.output, Side::Output)?;
    Ok((z.vectors().clone(), w.vectors().clone()))
}

pub fn evaluate_heads(heads: &Heads, pair: &SyntheticPair, loss: &SemanticLossConfig) -> Result<FinalMetrics> {
    let (z, w) = embed_pair(heads, pair)?;
    evaluate(&z, &w, &pair.labels, loss)
}

/// Heavy-ball SGD: `v = μ v + g`, `θ -= lr v`.
struct Momentum {
    velocity: HeadGrads,
    mu: f64,
}

impl Momentum {
    fn step(&mut self, head: &mut ProjectionHead, grad: &HeadGrads, lr: f64) {
        self.velocity.decay_add(self.mu, grad);
        head.apply(&self.velocity, lr);
    }
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let root = RngState::new(cfg.seed);
    let mut init_rng = root.child(0);
    let mut data_rng = root.child(1);
    let mut patch_rng = root.child(2);

    let mut input = ProjectionHead::init(&mut init_rng, cfg.task.channels, cfg.model.embed_dim);
    input.normalize = cfg.model.normalize;
    let mut output = (!cfg.model.shared_head).then(|| {
        let mut h = ProjectionHead::init(&mut init_rng, cfg.task.channels, cfg.model.embed_dim);
        h.normalize = cfg.model.normalize;
        h
    });
    let mut opt_in = Momentum { velocity: HeadGrads::zeros_like(&input), mu: cfg.optimizer.momentum };
    let mut opt_out = output
        .as_ref()
        .map(|h| Momentum { velocity: HeadGrads::zeros_like(h), mu: cfg.optimizer.momentum });

    let loss_cfg = cfg.effective_loss();
    let k = cfg.patch_count();
    let mut pair = generate_pair(&mut data_rng, &cfg.task)?;
    let mut records = Vec::new();

    for t in 0..cfg.optimizer.steps {
        if cfg.resample_pair && t > 0 {
            pair = generate_pair(&mut data_rng, &cfg.task)?;
        }
        // One index set for both maps: row r of z and w is the same location.
        let idx = sample_patch_indices(&mut patch_rng, cfg.task.height, cfg.task.width, k)?;
        let x_in = gather_patches(&pair.input, &idx)?;
        let x_out = gather_patches(&pair.output, &idx)?;

        let out_head = output.as_ref().unwrap_or(&input);
        let (z, cache_in) = head_forward(&input, &x_in, Side::Input)?;
        let (w, cache_out) = head_forward(out_head, &x_out, Side::Output)?;

        let log_now = t % cfg.log_every == 0 || t + 1 == cfg.optimizer.steps;
        let step_cfg = SemanticLossConfig { diagnostics: loss_cfg.diagnostics && log_now, ..loss_cfg };
        let out = semantic_loss(z.vectors(), w.vectors(), &step_cfg, t)?;
        if log_now {
            let d = out.diagnostics;
            records.push(StepRecord {
                step: t,
                l_semantic: out.loss,
                l_src: d.l_src,
                l_hdce: d.l_hdce,
                l_infonce: d.l_infonce,
                gamma: d.gamma,
                npc_mean: d.npc_mean,
            });
        }

        let (mut g_in, _) = head_backward(&input, &cache_in, &out.grad_z)?;
        let (g_out, _) = head_backward(out_head, &cache_out, &out.grad_w)?;
        match (&mut output, &mut opt_out) {
            (Some(head), Some(opt)) => {
                opt_in.step(&mut input, &g_in, cfg.optimizer.lr);
                opt.step(head, &g_out, cfg.optimizer.lr);
            }
            _ => {
                g_in.decay_add(1.0, &g_out);
                opt_in.step(&mut input, &g_in, cfg.optimizer.lr);
            }
        }
    }

    let heads = Heads { input, output };
    let eval_pair = if cfg.resample_pair { generate_pair(&mut root.child(3), &cfg.task)? } else { pair };
    let last = evaluate_heads(&heads, &eval_pair, &loss_cfg)?;
    Ok(TrainOutcome { metrics: RunMetrics { records, last }, heads, pair: eval_pair })
}
