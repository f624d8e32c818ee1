//! Advantage computation for every supported method.
//!
//! * `naive` standardizes raw rewards within the group: `(r - mean) / std`.
//! * `dr_grpo` only centers raw rewards.
//! * `domain_only`, `diff_only` and `disco` multiply binary rewards by a
//!   domain weight, a difficulty weight or both, then center the scaled
//!   rewards without dividing by the standard deviation, so the weights
//!   keep their absolute effect on the update size.
//!
//! Domain weights come from the dataset proportion `p` of the prompt's
//! domain (natural log throughout):
//!
//! | variant | weight              |
//! |---------|---------------------|
//! | `v1`    | `ln(1 + 1/p)`       |
//! | `v2`    | `ln(1 + 1/p)^2`     |
//! | `v3`    | `1/p`               |
//!
//! The difficulty weight is `1 / (sc + eps')` where `sc` is the fraction of
//! correct answers in the group. A group with no correct answer has all
//! scaled rewards equal to zero, so its advantages vanish no matter how
//! large the weight is.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::DomainCatalog;
use crate::error::{Error, Result};
use crate::rollout::RolloutGroup;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    DrGrpo,
    Disco,
    DomainOnly,
    DiffOnly,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Naive,
        Method::DrGrpo,
        Method::Disco,
        Method::DomainOnly,
        Method::DiffOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::DrGrpo => "dr_grpo",
            Method::Disco => "disco",
            Method::DomainOnly => "domain_only",
            Method::DiffOnly => "diff_only",
        }
    }

    fn uses_domain_weight(self) -> bool {
        matches!(self, Method::Disco | Method::DomainOnly)
    }

    fn uses_difficulty_weight(self) -> bool {
        matches!(self, Method::Disco | Method::DiffOnly)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum WeightVariant {
    #[default]
    #[serde(rename = "v1")]
    V1Log,
    #[serde(rename = "v2")]
    V2LogSquared,
    #[serde(rename = "v3")]
    V3Inverse,
}

impl WeightVariant {
    pub const ALL: [WeightVariant; 3] = [
        WeightVariant::V1Log,
        WeightVariant::V2LogSquared,
        WeightVariant::V3Inverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightVariant::V1Log => "v1",
            WeightVariant::V2LogSquared => "v2",
            WeightVariant::V3Inverse => "v3",
        }
    }
}

impl fmt::Display for WeightVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown weight variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub method: Method,
    #[serde(default)]
    pub variant: WeightVariant,
    #[serde(default = "default_eps_prime")]
    pub eps_prime: f64,
}

fn default_eps_prime() -> f64 {
    1e-6
}

impl ScalingConfig {
    pub fn new(method: Method) -> Self {
        ScalingConfig {
            method,
            variant: WeightVariant::V1Log,
            eps_prime: default_eps_prime(),
        }
    }

    pub fn with_variant(mut self, variant: WeightVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eps_prime.is_finite() || self.eps_prime <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eps_prime must be positive, got {}",
                self.eps_prime
            )));
        }
        Ok(())
    }
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig::new(Method::Naive)
    }
}

/// Advantages for one group and the weights that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroupAdvantages<T> {
    pub advantages: Vec<T>,
    pub w_dom: T,
    pub w_diff: T,
    pub sc: T,
    pub method: Method,
}

pub fn domain_weight<T: Scalar>(variant: WeightVariant, p: T) -> Result<T> {
    if !(p > T::zero() && p <= T::one()) {
        return Err(Error::InvalidProportion(p.as_f64()));
    }
    let inv = p.recip();
    Ok(match variant {
        WeightVariant::V1Log => inv.ln_1p(),
        WeightVariant::V2LogSquared => {
            let l = inv.ln_1p();
            l * l
        }
        WeightVariant::V3Inverse => inv,
    })
}

/// Fraction of correct answers in a group of binary rewards.
pub fn self_consistency<T: Scalar>(rewards: &[T]) -> Result<T> {
    if rewards.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut correct = 0usize;
    for &r in rewards {
        if r == T::one() {
            correct += 1;
        } else if r != T::zero() {
            return Err(Error::NonBinaryReward(r.as_f64()));
        }
    }
    Ok(T::of_usize(correct) / T::of_usize(rewards.len()))
}

pub fn difficulty_weight<T: Scalar>(sc: T, eps_prime: T) -> T {
    debug_assert!(sc >= T::zero() && sc <= T::one());
    debug_assert!(eps_prime > T::zero());
    (sc + eps_prime).recip()
}

pub fn scale_rewards<T: Scalar>(rewards: &[T], w_dom: T, w_diff: T) -> Vec<T> {
    let w = w_dom * w_diff;
    rewards.iter().map(|&r| r * w).collect()
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |acc, &x| acc + x) / T::of_usize(xs.len())
}

/// Subtracts the group mean; no standard-deviation division.
pub fn centered_advantages<T: Scalar>(scaled: &[T]) -> Result<Vec<T>> {
    if scaled.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let m = mean(scaled);
    Ok(scaled.iter().map(|&x| x - m).collect())
}

/// Standardizes rewards with the population standard deviation. A group
/// with zero spread yields all-zero advantages.
pub fn normalized_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>> {
    let centered = centered_advantages(rewards)?;
    let var = centered.iter().fold(T::zero(), |acc, &c| acc + c * c) / T::of_usize(rewards.len());
    if var == T::zero() {
        return Ok(vec![T::zero(); rewards.len()]);
    }
    let sd = var.sqrt();
    Ok(centered.into_iter().map(|c| c / sd).collect())
}

pub fn compute_group_advantages<T: Scalar>(
    group: &RolloutGroup<T>,
    catalog: &DomainCatalog,
    config: &ScalingConfig,
) -> Result<GroupAdvantages<T>> {
    let rewards = &group.rewards;
    // SC always comes from the raw binary rewards.
    let sc = self_consistency(rewards)?;

    let w_dom = if config.method.uses_domain_weight() {
        domain_weight(config.variant, T::of(catalog.proportion(&group.domain)?))?
    } else {
        // Still surface unknown domains for every method.
        catalog.proportion(&group.domain)?;
        T::one()
    };
    let w_diff = if config.method.uses_difficulty_weight() {
        difficulty_weight(sc, T::of(config.eps_prime))
    } else {
        T::one()
    };

    let advantages = match config.method {
        Method::Naive => normalized_advantages(rewards)?,
        Method::DrGrpo => centered_advantages(rewards)?,
        Method::Disco | Method::DomainOnly | Method::DiffOnly => {
            centered_advantages(&scale_rewards(rewards, w_dom, w_diff))?
        }
    };

    Ok(GroupAdvantages {
        advantages,
        w_dom,
        w_diff,
        sc,
        method: config.method,
    })
}
