//! Forgetting mitigation: consolidation penalties (EWC, online EWC, SI),
//! output distillation (KD), and gradient projection against an episodic
//! memory (GEM) with rehearsal selection policies.

mod ewc;
mod gem;
mod kd;
mod memory;
mod si;

pub use ewc::{ewc_penalty, fisher_diagonal, Anchor, EwcMode, EwcState, ImportanceMap};
pub use gem::{gem_project, memory_gradient, Projection};
pub use kd::{distill_loss_and_grad, kd_loss, DistillTerms};
pub use memory::{median_length, rank_for_memory, select_for_memory, EpisodicMemory, SelectionPolicy};
pub use si::SiState;

use serde::{Deserialize, Serialize};

/// Scalars of the regularization-based methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizerConfig {
    /// Consolidation penalty scale.
    pub lambda: f64,
    pub kd_temperature: f64,
    pub kd_weight: f64,
    pub ewc_online_decay: f64,
    /// SI damping ξ.
    pub si_xi: f64,
    /// Utterances sampled for the Fisher diagonal.
    pub fisher_samples: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            kd_temperature: 2.0,
            kd_weight: 3.0,
            ewc_online_decay: 0.9,
            si_xi: 0.1,
            fisher_samples: 64,
        }
    }
}
