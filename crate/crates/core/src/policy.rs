//! Tabular softmax policy over fixed-length answer sequences.
//!
//! Every parameter block is a `length x vocab` matrix of logits; position
//! `t` of an answer is drawn from `softmax(logits[t])`, independently of the
//! other positions. Blocks are keyed by [`ParamKey`], so prompts that share
//! observable content share parameters.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ParamKey, PromptRecord};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Logits<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Logits<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Logits {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data.len() == other.data.len()
    }
}

/// Parameter-shaped values, e.g. logits or a gradient.
pub type ParamTable<T> = BTreeMap<ParamKey, Logits<T>>;

/// Numerically stable log-softmax of one row.
pub fn log_softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + row.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp()).ln();
    row.iter().map(|&x| x - lse).collect()
}

pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    log_softmax(row).into_iter().map(T::exp).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyInit {
    #[default]
    Uniform,
    SeededGaussian {
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TabularPolicy<T> {
    params: ParamTable<T>,
    version: u64,
}

impl<T: Scalar> TabularPolicy<T> {
    /// Allocates one block per distinct parameter key among `records`.
    /// Gaussian logits are drawn in key order, so the result depends only
    /// on the set of keys and the seed.
    pub fn init(records: &[PromptRecord], init: PolicyInit, seed: u64) -> Result<Self> {
        let mut shapes: BTreeMap<ParamKey, (usize, usize)> = BTreeMap::new();
        for r in records {
            let shape = (r.target.len(), r.vocab_size);
            if let Some(prev) = shapes.insert(r.param_key(), shape) {
                if prev != shape {
                    return Err(Error::ShapeMismatch(format!(
                        "prompts sharing `{}` disagree on shape {prev:?} vs {shape:?}",
                        r.param_key()
                    )));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = match init {
            PolicyInit::Uniform => None,
            PolicyInit::SeededGaussian { sigma } => {
                Some(Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(format!("gaussian init: {e}")))?)
            }
        };
        let params = shapes
            .into_iter()
            .map(|(key, (rows, cols))| {
                let mut block = Logits::zeros(rows, cols);
                if let Some(normal) = &normal {
                    for x in &mut block.data {
                        *x = T::of(normal.sample(&mut rng));
                    }
                }
                (key, block)
            })
            .collect();
        Ok(TabularPolicy { params, version: 0 })
    }

    pub fn from_params(params: ParamTable<T>) -> Result<Self> {
        if params
            .values()
            .any(|b| b.data.len() != b.rows * b.cols || b.data.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::ShapeMismatch("malformed or non-finite logits".into()));
        }
        Ok(TabularPolicy { params, version: 0 })
    }

    pub fn params(&self) -> &ParamTable<T> {
        &self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn block(&self, key: &ParamKey) -> Result<&Logits<T>> {
        self.params
            .get(key)
            .ok_or_else(|| Error::UnknownPrompt(key.to_string()))
    }

    fn block_for(&self, prompt: &PromptRecord) -> Result<&Logits<T>> {
        let block = self.block(&prompt.param_key())?;
        if block.rows != prompt.target.len() || block.cols != prompt.vocab_size {
            return Err(Error::ShapeMismatch(format!(
                "prompt `{}` is {}x{}, parameters are {}x{}",
                prompt.prompt_id,
                prompt.target.len(),
                prompt.vocab_size,
                block.rows,
                block.cols
            )));
        }
        Ok(block)
    }

    /// Per-position probabilities for a prompt.
    pub fn probabilities(&self, prompt: &PromptRecord) -> Result<Vec<Vec<T>>> {
        let block = self.block_for(prompt)?;
        Ok((0..block.rows).map(|r| softmax(block.row(r))).collect())
    }

    /// Draws `g` answers; positions are sampled independently by inverse CDF.
    pub fn sample_outputs<R: Rng + ?Sized>(
        &self,
        prompt: &PromptRecord,
        g: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<usize>>> {
        let probs = self.probabilities(prompt)?;
        let outputs = (0..g)
            .map(|_| {
                probs
                    .iter()
                    .map(|p| {
                        let u = T::of(rng.gen::<f64>());
                        let mut acc = T::zero();
                        for (v, &pv) in p.iter().enumerate() {
                            acc = acc + pv;
                            if u < acc {
                                return v;
                            }
                        }
                        // u landed in the rounding gap above the last partial sum
                        p.iter().rposition(|&pv| pv > T::zero()).unwrap_or(p.len() - 1)
                    })
                    .collect()
            })
            .collect();
        Ok(outputs)
    }

    /// Per-token log-probabilities of `output`; their sum is the sequence log-probability.
    pub fn log_prob(&self, prompt: &PromptRecord, output: &[usize]) -> Result<Vec<T>> {
        let block = self.block_for(prompt)?;
        if output.len() != block.rows {
            return Err(Error::LengthMismatch(format!(
                "output has {} tokens, prompt `{}` expects {}",
                output.len(),
                prompt.prompt_id,
                block.rows
            )));
        }
        output
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                if tok >= block.cols {
                    return Err(Error::TokenOutOfRange {
                        token: tok,
                        vocab: block.cols,
                    });
                }
                Ok(log_softmax(block.row(t))[tok])
            })
            .collect()
    }

    /// Argmax per position, ties going to the lowest token index.
    pub fn greedy(&self, prompt: &PromptRecord) -> Result<Vec<usize>> {
        let block = self.block_for(prompt)?;
        Ok((0..block.rows)
            .map(|r| {
                let row = block.row(r);
                let mut best = 0;
                for (v, &x) in row.iter().enumerate().skip(1) {
                    if x > row[best] {
                        best = v;
                    }
                }
                best
            })
            .collect())
    }

    pub fn snapshot(&self) -> FrozenPolicy<T> {
        FrozenPolicy(self.clone())
    }

    /// Plain gradient descent on the blocks present in `gradient`.
    pub fn apply_gradient(&mut self, gradient: &ParamTable<T>, learning_rate: T) -> Result<()> {
        for (key, g) in gradient {
            let block = self.block(key)?;
            if !block.same_shape(g) {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for `{key}` is {}x{}, parameters are {}x{}",
                    g.rows, g.cols, block.rows, block.cols
                )));
            }
        }
        for (key, g) in gradient {
            let block = self.params.get_mut(key).expect("checked above");
            for (x, &d) in block.data.iter_mut().zip(&g.data) {
                *x = *x - learning_rate * d;
            }
        }
        self.version += 1;
        Ok(())
    }

    pub fn zero_gradient(&self) -> ParamTable<T> {
        self.params
            .iter()
            .map(|(k, b)| (k.clone(), Logits::zeros(b.rows, b.cols)))
            .collect()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let policy: Self = serde_json::from_slice(&fs::read(path)?)?;
        let version = policy.version;
        let mut checked = Self::from_params(policy.params)?;
        checked.version = version;
        Ok(checked)
    }

    /// Direct access for tests and finite-difference checks; shapes must be preserved.
    pub fn params_mut(&mut self) -> &mut ParamTable<T> {
        &mut self.params
    }
}

/// Read-only copy of a policy taken at one point in training.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPolicy<T>(TabularPolicy<T>);

impl<T: Scalar> FrozenPolicy<T> {
    pub fn snapshot(&self) -> FrozenPolicy<T> {
        self.clone()
    }
}

impl<T> Deref for FrozenPolicy<T> {
    type Target = TabularPolicy<T>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}
