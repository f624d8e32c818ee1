use serde::{Deserialize, Serialize};

use crate::dataset::ParamKey;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `G` sampled answers for one prompt together with their binary rewards
/// and per-token log-probabilities under the live, rollout and reference
/// policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RolloutGroup<T> {
    pub prompt_id: String,
    pub domain: String,
    pub key: ParamKey,
    pub outputs: Vec<Vec<usize>>,
    pub rewards: Vec<T>,
    pub logp_new: Vec<Vec<T>>,
    pub logp_old: Vec<Vec<T>>,
    pub logp_ref: Vec<Vec<T>>,
}

impl<T: Scalar> RolloutGroup<T> {
    pub fn group_size(&self) -> usize {
        self.outputs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.outputs.len();
        if g < 2 {
            return Err(Error::MismatchedGroupSizes(format!(
                "group `{}` has {g} outputs, need at least 2",
                self.prompt_id
            )));
        }
        if self.rewards.len() != g {
            return Err(Error::MismatchedGroupSizes(format!(
                "{} rewards for {g} outputs",
                self.rewards.len()
            )));
        }
        if let Some(r) = self.rewards.iter().find(|&&r| r != T::zero() && r != T::one()) {
            return Err(Error::NonBinaryReward(r.as_f64()));
        }
        for (name, lps) in [
            ("new", &self.logp_new),
            ("old", &self.logp_old),
            ("ref", &self.logp_ref),
        ] {
            if lps.len() != g {
                return Err(Error::MissingLogProbs(format!(
                    "{name}: {} sequences for {g} outputs",
                    lps.len()
                )));
            }
            for (i, (lp, o)) in lps.iter().zip(&self.outputs).enumerate() {
                if lp.len() != o.len() {
                    return Err(Error::MissingLogProbs(format!(
                        "{name}: output {i} has {} tokens but {} log-probs",
                        o.len(),
                        lp.len()
                    )));
                }
            }
        }
        Ok(())
    }
}
