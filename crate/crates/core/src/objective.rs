//! Clipped surrogate objective with a K3 KL penalty, and its exact gradient
//! with respect to the tabular logits.
//!
//! For one group of `G` answers with advantages `A_i` the objective is
//!
//! ```text
//! J = (1/G) Σ_i S_i  -  β · KL
//! S_i = min(ρ A_i, clip(ρ, 1-ε, 1+ε) A_i)      (aggregated per `Aggregation`)
//! KL  = mean of k3(ρ_ref) = ρ_ref - ln ρ_ref - 1, ρ_ref = π_ref / π_θ
//! ```
//!
//! averaged over groups. The returned loss is `-J`, and the gradient is that
//! of the loss. Advantages are constants.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{log_softmax, softmax, Logits, ParamTable, TabularPolicy};
use crate::rollout::RolloutGroup;
use crate::scalar::Scalar;
use crate::scaling::{GroupAdvantages, Method};

/// How per-token terms are combined into one value per answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One ratio for the whole sequence.
    Sequence,
    /// Per-token terms averaged over the answer length.
    TokenMean,
    /// Per-token terms summed, no length normalization.
    TokenSum,
}

impl Aggregation {
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::DrGrpo => Aggregation::TokenSum,
            _ => Aggregation::TokenMean,
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Sequence => "sequence",
            Aggregation::TokenMean => "token_mean",
            Aggregation::TokenSum => "token_sum",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    #[serde(default = "default_clip_eps")]
    pub clip_eps: f64,
    #[serde(default = "default_kl_beta")]
    pub kl_beta: f64,
    pub aggregation: Aggregation,
}

fn default_clip_eps() -> f64 {
    0.2
}

fn default_kl_beta() -> f64 {
    1e-3
}

impl ObjectiveConfig {
    pub fn for_method(method: Method) -> Self {
        ObjectiveConfig {
            clip_eps: default_clip_eps(),
            kl_beta: default_kl_beta(),
            aggregation: Aggregation::default_for(method),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "clip_eps must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        if !self.kl_beta.is_finite() || self.kl_beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "kl_beta must be non-negative, got {}",
                self.kl_beta
            )));
        }
        Ok(())
    }
}

fn finite<T: Scalar>(x: T) -> Result<T> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteLogProb)
    }
}

pub fn prob_ratio<T: Scalar>(logp_new: T, logp_old: T) -> Result<T> {
    Ok((finite(logp_new)? - finite(logp_old)?).exp())
}

pub fn clipped_term<T: Scalar>(ratio: T, advantage: T, clip_eps: T) -> T {
    let clipped = ratio.max(T::one() - clip_eps).min(T::one() + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// `true` when the unclipped branch attains the minimum, i.e. the term
/// depends on the ratio.
fn unclipped<T: Scalar>(ratio: T, advantage: T, clip_eps: T) -> bool {
    let clipped = ratio.max(T::one() - clip_eps).min(T::one() + clip_eps);
    ratio * advantage <= clipped * advantage
}

/// `exp(x) - x - 1` without cancellation near zero.
fn exp_minus_linear<T: Scalar>(x: T) -> T {
    if x.abs() < T::of(0.1) {
        // Taylor tail x^2/2! + x^3/3! + ...; |x| < 0.1 reaches f64 precision by n = 14
        let mut term = x * x / T::of(2.0);
        let mut sum = term;
        for n in 3..16 {
            term = term * x / T::of_usize(n);
            sum = sum + term;
        }
        sum
    } else {
        x.exp_m1() - x
    }
}

/// K3 estimate `ρ - ln ρ - 1` with `ρ = π_ref / π_θ`.
pub fn k3_kl<T: Scalar>(logp_ref: T, logp_new: T) -> Result<T> {
    let x = finite(logp_ref)? - finite(logp_new)?;
    Ok(exp_minus_linear(x))
}

/// Negated objective and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput<T> {
    pub loss: T,
    /// Only blocks touched by the batch are present.
    pub gradient: ParamTable<T>,
}

/// Evaluates the loss at `policy` for a batch of scored groups.
///
/// The live log-probabilities are recomputed from `policy`; the groups'
/// stored `logp_old` and `logp_ref` are used as given.
pub fn group_objective<T: Scalar>(
    policy: &TabularPolicy<T>,
    groups: &[(RolloutGroup<T>, GroupAdvantages<T>)],
    config: &ObjectiveConfig,
) -> Result<ObjectiveOutput<T>> {
    config.validate()?;
    let eps = T::of(config.clip_eps);
    let beta = T::of(config.kl_beta);
    let mut gradient: ParamTable<T> = ParamTable::new();
    let mut objective = T::zero();
    if groups.is_empty() {
        return Ok(ObjectiveOutput {
            loss: T::zero(),
            gradient,
        });
    }
    let n_groups = T::of_usize(groups.len());

    for (group, adv) in groups {
        group.validate()?;
        let g = group.group_size();
        if adv.advantages.len() != g {
            return Err(Error::MismatchedGroupSizes(format!(
                "{} advantages for {g} outputs in `{}`",
                adv.advantages.len(),
                group.prompt_id
            )));
        }
        let block = policy.block(&group.key)?;
        let log_probs: Vec<Vec<T>> = (0..block.rows).map(|r| log_softmax(block.row(r))).collect();
        let probs: Vec<Vec<T>> = (0..block.rows).map(|r| softmax(block.row(r))).collect();
        let weight = (n_groups * T::of_usize(g)).recip();
        let grad_block = gradient
            .entry(group.key.clone())
            .or_insert_with(|| Logits::zeros(block.rows, block.cols));

        for (i, output) in group.outputs.iter().enumerate() {
            if output.len() != block.rows {
                return Err(Error::LengthMismatch(format!(
                    "output {i} of `{}` has {} tokens, parameters have {} rows",
                    group.prompt_id,
                    output.len(),
                    block.rows
                )));
            }
            if let Some(&tok) = output.iter().find(|&&t| t >= block.cols) {
                return Err(Error::TokenOutOfRange {
                    token: tok,
                    vocab: block.cols,
                });
            }
            let a = adv.advantages[i];
            let lp: Vec<T> = output.iter().enumerate().map(|(t, &o)| log_probs[t][o]).collect();
            let lo = &group.logp_old[i];
            let lr = &group.logp_ref[i];
            let len = T::of_usize(output.len());

            // d(S_i - β KL_i)/d lp_t for every token t
            let mut coef = vec![T::zero(); output.len()];
            let (surrogate, kl) = match config.aggregation {
                Aggregation::Sequence => {
                    let lp_sum = lp.iter().fold(T::zero(), |s, &x| s + x);
                    let lo_sum = lo.iter().fold(T::zero(), |s, &x| s + x);
                    let lr_sum = lr.iter().fold(T::zero(), |s, &x| s + x);
                    let ratio = prob_ratio(lp_sum, lo_sum)?;
                    let s = clipped_term(ratio, a, eps);
                    let kl = k3_kl(lr_sum, lp_sum)?;
                    let ds = if unclipped(ratio, a, eps) { ratio * a } else { T::zero() };
                    let dkl = T::one() - (lr_sum - lp_sum).exp();
                    coef.iter_mut().for_each(|c| *c = ds - beta * dkl);
                    (s, kl)
                }
                Aggregation::TokenMean | Aggregation::TokenSum => {
                    let scale = match config.aggregation {
                        Aggregation::TokenMean => len.recip(),
                        _ => T::one(),
                    };
                    let mut s = T::zero();
                    let mut kl = T::zero();
                    for t in 0..output.len() {
                        let ratio = prob_ratio(lp[t], lo[t])?;
                        s = s + clipped_term(ratio, a, eps);
                        kl = kl + k3_kl(lr[t], lp[t])?;
                        let ds = if unclipped(ratio, a, eps) { ratio * a } else { T::zero() };
                        let dkl = T::one() - (lr[t] - lp[t]).exp();
                        coef[t] = scale * ds - beta * dkl / len;
                    }
                    (s * scale, kl / len)
                }
            };
            objective = objective + weight * (surrogate - beta * kl);

            // d lp_t / d logit[t][v] = 1{v = o_t} - p_t(v); loss = -objective
            for (t, &o) in output.iter().enumerate() {
                let c = weight * coef[t];
                let row = grad_block.row_mut(t);
                for (v, gv) in row.iter_mut().enumerate() {
                    let indicator = if v == o { T::one() } else { T::zero() };
                    *gv = *gv - c * (indicator - probs[t][v]);
                }
            }
        }
    }

    Ok(ObjectiveOutput {
        loss: -objective,
        gradient,
    })
}
