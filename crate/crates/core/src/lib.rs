//! Group-relative policy optimization with domain- and difficulty-aware
//! reward scaling, exercised on synthetic multi-domain answer tasks.
//!
//! The numeric layers ([`scaling`], [`objective`], [`policy`]) are generic
//! over a [`Scalar`] (`f32` or `f64`). The training loop and everything
//! above it run in `f64`; the aliases below name those concrete types.

pub mod dataset;
pub mod env;
pub mod error;
pub mod experiment;
pub mod objective;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod sampler;
pub mod scalar;
pub mod scaling;
pub mod stats;
pub mod trainer;

pub use dataset::{domain_proportions, validate_dataset, DatasetSummary, DomainCatalog, ParamKey, PromptRecord};
pub use env::{em_reward, make_env, DomainSpec, EnvData, EnvSpec};
pub use error::{Error, Result};
pub use experiment::{
    export_report, read_report, run_cells, run_experiment, run_sweep, ComparisonTable, ExperimentOutcome,
    ExperimentSpec, Format, PairwiseTest,
};
pub use objective::{clipped_term, group_objective, k3_kl, prob_ratio, Aggregation, ObjectiveConfig};
pub use policy::{FrozenPolicy, Logits, PolicyInit, TabularPolicy};
pub use sampler::{build_mixture, shuffle_batches, MixturePreset, MixtureSpec};
pub use scalar::Scalar;
pub use scaling::{
    centered_advantages, compute_group_advantages, difficulty_weight, domain_weight, normalized_advantages,
    scale_rewards, self_consistency, GroupAdvantages, Method, ScalingConfig, WeightVariant,
};
pub use stats::{paired_t_test, PairedTTest};
pub use trainer::{evaluate, run_training, sweep_group_size, RunReport, TrainConfig, Trainer};

pub type Policy = TabularPolicy<f64>;
pub type PolicyF32 = TabularPolicy<f32>;
pub type Frozen = FrozenPolicy<f64>;
pub type Rollout = RolloutGroup<f64>;
pub type Advantages = GroupAdvantages<f64>;
pub type ObjectiveOutput = objective::ObjectiveOutput<f64>;
pub type Gradient = policy::ParamTable<f64>;

pub use rollout::RolloutGroup;
