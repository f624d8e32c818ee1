//! Training loop, greedy evaluation and group-size sweeps.
//!
//! Each batch: snapshot the rollout policy, sample `G` answers per prompt
//! from it, score them by exact match, turn rewards into advantages, and
//! take gradient steps on the clipped objective with a KL penalty towards
//! the initial policy. Every random draw comes from a stream keyed by
//! `(seed, epoch, batch, group)`, and groups are reduced in index order, so
//! a config fully determines its report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{by_domain, domain_proportions, validate_dataset, DomainCatalog, PromptRecord};
use crate::env::{em_reward, make_env, EnvSpec};
use crate::error::{Error, Result};
use crate::objective::{group_objective, Aggregation, ObjectiveConfig};
use crate::policy::{FrozenPolicy, PolicyInit, TabularPolicy};
use crate::rng::stream;
use crate::rollout::RolloutGroup;
use crate::sampler::{build_mixture, shuffle_batches, MixturePreset, MixtureSpec};
use crate::scaling::{compute_group_advantages, GroupAdvantages, Method, ScalingConfig, WeightVariant};

/// Objective settings as they appear in a training config; the aggregation
/// defaults to the method's own when absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSettings {
    #[serde(default = "default_clip_eps")]
    pub clip_eps: f64,
    #[serde(default = "default_kl_beta")]
    pub kl_beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Aggregation>,
}

fn default_clip_eps() -> f64 {
    0.2
}
fn default_kl_beta() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    64
}
fn default_one() -> usize {
    1
}
fn default_learning_rate() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_eval_every() -> usize {
    16
}
fn default_mixture() -> MixtureSpec {
    MixtureSpec::preset(4000, MixturePreset::Balanced)
}
fn default_env() -> EnvSpec {
    EnvSpec::default_four_domain(0)
}

/// Step size for the tabular policy. The loss averages over every group in
/// a batch, so each block sees roughly `lr / batch_size` per visit: 1.0 at
/// the default batch size of 64.
pub const DEFAULT_LEARNING_RATE: f64 = 64.0;

/// Random initial logits, so a single lucky success does not flip the
/// greedy answer and step sizes matter.
pub const DEFAULT_INIT: PolicyInit = PolicyInit::SeededGaussian { sigma: 1.0 };

fn default_init() -> PolicyInit {
    DEFAULT_INIT
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        ObjectiveSettings {
            clip_eps: default_clip_eps(),
            kl_beta: default_kl_beta(),
            aggregation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub objective: ObjectiveSettings,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub epochs: usize,
    /// Gradient steps per batch against the same rollout snapshot.
    #[serde(default = "default_one")]
    pub inner_steps: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mixture")]
    pub mixture: MixtureSpec,
    #[serde(default = "default_env")]
    pub env: EnvSpec,
    /// Batches between evaluations; 0 evaluates only at start and end.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_init")]
    pub init: PolicyInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 4,
            scaling: ScalingConfig::default(),
            objective: ObjectiveSettings::default(),
            batch_size: default_batch_size(),
            epochs: 1,
            inner_steps: 1,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            mixture: default_mixture(),
            env: default_env(),
            eval_every: default_eval_every(),
            init: DEFAULT_INIT,
        }
    }
}

impl TrainConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.scaling.method = method;
        self
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            clip_eps: self.objective.clip_eps,
            kl_beta: self.objective.kl_beta,
            aggregation: self
                .objective
                .aggregation
                .unwrap_or_else(|| Aggregation::default_for(self.scaling.method)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            )));
        }
        if self.epochs < 1 || self.inner_steps < 1 || self.batch_size < 1 {
            return Err(Error::InvalidConfig(
                "epochs, inner_steps and batch_size must be at least 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        self.scaling.validate()?;
        self.objective_config().validate()?;
        self.env.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardPoint {
    pub batch: usize,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCheckpoint {
    /// Gradient batches completed before this evaluation.
    pub checkpoint: usize,
    /// Exact-match accuracy in percent, per domain.
    pub accuracy: BTreeMap<String, f64>,
    /// Unweighted mean of the per-domain accuracies.
    pub average: f64,
}

impl EvalCheckpoint {
    pub fn new(checkpoint: usize, accuracy: BTreeMap<String, f64>) -> Self {
        let average = unweighted_mean(accuracy.values().copied());
        EvalCheckpoint {
            checkpoint,
            accuracy,
            average,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub variant: WeightVariant,
    pub aggregation: Aggregation,
    pub mixture: String,
    pub seed: u64,
    pub group_size: usize,
    pub reward_curve: Vec<RewardPoint>,
    pub eval_table: Vec<EvalCheckpoint>,
}

impl RunReport {
    pub fn final_eval(&self) -> &EvalCheckpoint {
        self.eval_table
            .last()
            .expect("a report always has an initial evaluation")
    }

    pub fn final_average(&self) -> f64 {
        self.final_eval().average
    }
}

pub fn unweighted_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Greedy exact-match accuracy (percent) per domain. Ties in the argmax go
/// to the lowest token index.
pub fn evaluate(policy: &TabularPolicy<f64>, eval_records: &[PromptRecord]) -> Result<BTreeMap<String, f64>> {
    if eval_records.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in eval_records {
        let hit = em_reward(&policy.greedy(r)?, &r.target)? as usize;
        let entry = tally.entry(r.domain.clone()).or_insert((0, 0));
        entry.0 += hit;
        entry.1 += 1;
    }
    Ok(tally
        .into_iter()
        .map(|(d, (hits, n))| (d, 100.0 * hits as f64 / n as f64))
        .collect())
}

/// Per-batch diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub mean_reward: f64,
    pub loss: f64,
}

/// Owns the live policy and the fixed reference for one run.
pub struct Trainer {
    config: TrainConfig,
    objective: ObjectiveConfig,
    catalog: DomainCatalog,
    policy: TabularPolicy<f64>,
    reference: FrozenPolicy<f64>,
}

impl Trainer {
    /// `train` fixes the domain proportions; `policy` must cover every
    /// prompt that will be trained on.
    pub fn new(config: TrainConfig, train: &[PromptRecord], policy: TabularPolicy<f64>) -> Result<Self> {
        config.validate()?;
        let catalog = domain_proportions(&validate_dataset(train)?)?;
        let reference = policy.snapshot();
        Ok(Trainer {
            objective: config.objective_config(),
            config,
            catalog,
            policy,
            reference,
        })
    }

    pub fn policy(&self) -> &TabularPolicy<f64> {
        &self.policy
    }

    pub fn catalog(&self) -> &DomainCatalog {
        &self.catalog
    }

    fn rollout(
        &self,
        rollout_policy: &FrozenPolicy<f64>,
        prompt: &PromptRecord,
        epoch: usize,
        batch: usize,
        group: usize,
    ) -> Result<(RolloutGroup<f64>, GroupAdvantages<f64>)> {
        let mut rng = stream(self.config.seed, &[epoch as u64, batch as u64, group as u64]);
        let outputs = rollout_policy.sample_outputs(prompt, self.config.group_size, &mut rng)?;
        let rewards = outputs
            .iter()
            .map(|o| em_reward(o, &prompt.target).map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        let logp_old = outputs
            .iter()
            .map(|o| rollout_policy.log_prob(prompt, o))
            .collect::<Result<Vec<_>>>()?;
        let logp_ref = outputs
            .iter()
            .map(|o| self.reference.log_prob(prompt, o))
            .collect::<Result<Vec<_>>>()?;
        let group = RolloutGroup {
            prompt_id: prompt.prompt_id.clone(),
            domain: prompt.domain.clone(),
            key: prompt.param_key(),
            outputs,
            rewards,
            logp_new: logp_old.clone(),
            logp_old,
            logp_ref,
        };
        let advantages = compute_group_advantages(&group, &self.catalog, &self.config.scaling)?;
        Ok((group, advantages))
    }

    /// Rolls out one batch and applies `inner_steps` gradient steps.
    pub fn step(&mut self, batch: &[PromptRecord], epoch: usize, batch_index: usize) -> Result<BatchStats> {
        let rollout_policy = self.policy.snapshot();
        let scored = batch
            .par_iter()
            .enumerate()
            .map(|(gi, prompt)| self.rollout(&rollout_policy, prompt, epoch, batch_index, gi))
            .collect::<Result<Vec<_>>>()?;

        let rewards = scored.iter().flat_map(|(g, _)| g.rewards.iter().copied());
        let mean_reward = unweighted_mean(rewards);

        let mut loss = 0.0;
        for _ in 0..self.config.inner_steps {
            let out = group_objective(&self.policy, &scored, &self.objective)?;
            self.policy.apply_gradient(&out.gradient, self.config.learning_rate)?;
            loss = out.loss;
        }
        Ok(BatchStats { mean_reward, loss })
    }
}

/// Builds the environment and mixture, trains, and evaluates on the
/// held-out split.
pub fn run_training(config: &TrainConfig) -> Result<RunReport> {
    config.validate()?;
    let env = make_env(&config.env)?;
    let domains = config.env.domain_names();
    let train = build_mixture(&by_domain(&env.train), &config.mixture, &domains, config.seed)?;

    let mut scope = train.clone();
    scope.extend(env.eval.iter().cloned());
    let policy = TabularPolicy::init(&scope, config.init, config.seed)?;
    let mut trainer = Trainer::new(config.clone(), &train, policy)?;

    let mut eval_table = vec![EvalCheckpoint::new(0, evaluate(trainer.policy(), &env.eval)?)];
    let mut reward_curve = Vec::new();
    let mut done = 0usize;
    for epoch in 0..config.epochs {
        let batches = shuffle_batches(
            &train,
            config.batch_size,
            config.seed ^ (epoch as u64).wrapping_mul(0x9e37),
        )?;
        for (bi, batch) in batches.iter().enumerate() {
            let stats = trainer.step(batch, epoch, bi)?;
            reward_curve.push(RewardPoint {
                batch: done,
                mean_reward: stats.mean_reward,
            });
            done += 1;
            if config.eval_every > 0 && done.is_multiple_of(config.eval_every) {
                eval_table.push(EvalCheckpoint::new(done, evaluate(trainer.policy(), &env.eval)?));
            }
        }
    }
    if eval_table.last().map(|c| c.checkpoint) != Some(done) {
        eval_table.push(EvalCheckpoint::new(done, evaluate(trainer.policy(), &env.eval)?));
    }

    Ok(RunReport {
        method: config.scaling.method,
        variant: config.scaling.variant,
        aggregation: config.objective_config().aggregation,
        mixture: config.mixture.label(),
        seed: config.seed,
        group_size: config.group_size,
        reward_curve,
        eval_table,
    })
}

/// One run per group size, all sharing the base seed and mixture.
pub fn sweep_group_size(base: &TrainConfig, group_sizes: &[usize]) -> Result<Vec<RunReport>> {
    group_sizes
        .par_iter()
        .map(|&g| {
            let mut config = base.clone();
            config.group_size = g;
            run_training(&config)
        })
        .collect()
}
