//! Patch-wise contrastive objectives for unpaired translation features.
//!
//! The crate provides:
//!
//! * [`relation`]: per-patch similarity distributions and the semantic relation
//!   consistency loss (Jensen-Shannon divergence between input and output relations).
//! * [`contrast`]: InfoNCE, decoupled InfoNCE (DCE) and hard-negative DCE with
//!   von Mises-Fisher importance weights, plus the negative-positive coupling diagnostic.
//! * [`semantic`]: the curriculum for the hardness parameter and the weighted
//!   composite objective.
//! * [`embedding`]: patch sampling and a two-layer projection head with exact backward.
//! * [`harness`]: synthetic paired feature maps, a training loop, the ablation runner,
//!   similarity-map export, gradient checks and file formats.
//!
//! Every loss returns analytic gradients with respect to both embedding sets.
//! All randomness flows through [`numerics::RngState`].

pub mod contrast;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod relation;
pub mod semantic;

pub use contrast::{dce, hdce, infonce, npc_paper_approx, ContrastConfig, ContrastResult};
pub use embedding::{
    gather_patches, head_backward, head_forward, sample_patch_indices, EmbeddingSet, FeatureMap,
    ForwardCache, HeadGrads, PatchIndexSet, ProjectionHead, Side,
};
pub use error::{Error, Result};
pub use numerics::{Matrix, RngState};
pub use relation::{jsd, similarity_distribution, src_loss, RelationConfig, SimilarityDistribution, SrcResult};
pub use semantic::{gamma_at, semantic_loss, CurriculumSchedule, ScheduleShape, SemanticLossConfig};
