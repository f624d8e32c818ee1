//! Synthetic multi-domain answer tasks and the exact-match reward.
//!
//! A domain with vocabulary `V` and answer length `L` has a chance
//! exact-match rate of `V^-L` under a uniform policy. With `contexts = K`
//! every prompt shows one of `K` cues and its answer is a fixed hidden
//! function of the cue, so what is learned on training prompts carries over
//! to held-out prompts with the same cue. Without contexts every prompt is
//! unique.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PromptRecord;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub prompt_count: usize,
    pub vocab: usize,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<u32>,
}

impl DomainSpec {
    pub fn chance_em(&self) -> f64 {
        (self.vocab as f64).powi(-(self.length as i32))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub domains: Vec<DomainSpec>,
    pub seed: u64,
}

impl EnvSpec {
    /// Four domains in the canonical order math, nq, arc, imdb. `imdb` is a
    /// single binary choice; the others need multi-token answers.
    pub fn default_four_domain(seed: u64) -> Self {
        let domain = |name: &str, vocab, length, contexts| DomainSpec {
            name: name.into(),
            prompt_count: 5000,
            vocab,
            length,
            contexts: Some(contexts),
        };
        EnvSpec {
            domains: vec![
                domain("math", 4, 2, 120),
                domain("nq", 3, 2, 120),
                domain("arc", 4, 2, 100),
                domain("imdb", 2, 1, 200),
            ],
            seed,
        }
    }

    pub fn domain_names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::InvalidSpec("no domains".into()));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if d.name.is_empty() {
                return Err(Error::InvalidSpec(format!("domain {i} has an empty name")));
            }
            if self.domains[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidSpec(format!("duplicate domain `{}`", d.name)));
            }
            if d.vocab < 2 || d.length < 1 || d.prompt_count < 1 {
                return Err(Error::InvalidSpec(format!(
                    "domain `{}` needs vocab >= 2, length >= 1, prompt_count >= 1",
                    d.name
                )));
            }
            if d.contexts == Some(0) {
                return Err(Error::InvalidSpec(format!("domain `{}` has zero contexts", d.name)));
            }
        }
        Ok(())
    }
}

/// Disjoint train and evaluation splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvData {
    pub train: Vec<PromptRecord>,
    pub eval: Vec<PromptRecord>,
}

/// Generates every domain's prompts; within a domain, every fifth record
/// (index `i % 5 == 4`) goes to the evaluation split.
pub fn make_env(spec: &EnvSpec) -> Result<EnvData> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (di, d) in spec.domains.iter().enumerate() {
        let mut rng = stream(spec.seed, &[0x0065_6e76, di as u64]);
        let answer = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
            (0..d.length).map(|_| rng.gen_range(0..d.vocab)).collect()
        };
        let table: Vec<Vec<usize>> = match d.contexts {
            Some(k) => (0..k).map(|_| answer(&mut rng)).collect(),
            None => Vec::new(),
        };
        for i in 0..d.prompt_count {
            let (context, target) = match d.contexts {
                Some(k) => {
                    let c = rng.gen_range(0..k);
                    (Some(c), table[c as usize].clone())
                }
                None => (None, answer(&mut rng)),
            };
            let record = PromptRecord {
                prompt_id: format!("{}-{i:05}", d.name),
                domain: d.name.clone(),
                target,
                vocab_size: d.vocab,
                context,
            };
            if i % 5 == 4 {
                eval.push(record);
            } else {
                train.push(record);
            }
        }
    }
    Ok(EnvData { train, eval })
}

/// 1 for an exact match, 0 otherwise.
pub fn em_reward(output: &[usize], target: &[usize]) -> Result<u8> {
    if output.len() != target.len() {
        return Err(Error::LengthMismatch(format!(
            "output has {} tokens, target {}",
            output.len(),
            target.len()
        )));
    }
    Ok((output == target) as u8)
}
