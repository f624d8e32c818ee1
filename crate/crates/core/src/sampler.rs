//! Training mixtures and deterministic batching.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::PromptRecord;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixturePreset {
    Balanced,
    /// 75% of prompts from the named domain, the rest split evenly.
    Heavy(String),
}

impl MixturePreset {
    pub fn label(&self) -> String {
        match self {
            MixturePreset::Balanced => "balanced".into(),
            MixturePreset::Heavy(d) => format!("{d}-heavy"),
        }
    }
}

impl fmt::Display for MixturePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<MixturePreset>,
    /// Explicit fractions, used when no preset is given.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub proportions: BTreeMap<String, f64>,
}

impl MixtureSpec {
    pub fn preset(total: usize, preset: MixturePreset) -> Self {
        MixtureSpec {
            total,
            preset: Some(preset),
            proportions: BTreeMap::new(),
        }
    }

    pub fn label(&self) -> String {
        self.preset
            .as_ref()
            .map(MixturePreset::label)
            .unwrap_or_else(|| "custom".into())
    }

    /// Fractions in canonical domain order.
    pub fn fractions(&self, domains: &[String]) -> Result<Vec<f64>> {
        if domains.is_empty() {
            return Err(Error::InvalidConfig("mixture over zero domains".into()));
        }
        let n = domains.len() as f64;
        let fractions: Vec<f64> = match &self.preset {
            Some(MixturePreset::Balanced) => vec![1.0 / n; domains.len()],
            Some(MixturePreset::Heavy(heavy)) => {
                if !domains.contains(heavy) {
                    return Err(Error::UnknownDomain(heavy.clone()));
                }
                if domains.len() == 1 {
                    vec![1.0]
                } else {
                    let rest = 0.25 / (n - 1.0);
                    domains.iter().map(|d| if d == heavy { 0.75 } else { rest }).collect()
                }
            }
            None => {
                if let Some(unknown) = self.proportions.keys().find(|k| !domains.contains(k)) {
                    return Err(Error::UnknownDomain(unknown.clone()));
                }
                domains
                    .iter()
                    .map(|d| self.proportions.get(d).copied().unwrap_or(0.0))
                    .collect()
            }
        };
        let sum: f64 = fractions.iter().sum();
        if fractions.iter().any(|&f| f.is_nan() || f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "mixture fractions must be non-negative and sum to 1, got {fractions:?}"
            )));
        }
        Ok(fractions)
    }

    /// Integer counts per domain, in canonical order.
    pub fn counts(&self, domains: &[String]) -> Result<Vec<usize>> {
        Ok(largest_remainder(&self.fractions(domains)?, self.total))
    }
}

/// Apportions `total` by largest remainder. Equal remainders favor the
/// later index, so a three-way tie over 1000 gives 333/333/334.
pub fn largest_remainder(fractions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        if (ra - rb).abs() <= 1e-9 {
            b.cmp(&a)
        } else {
            rb.partial_cmp(&ra).expect("finite remainders")
        }
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Samples each domain's count without replacement from its pool, then
/// shuffles the union.
pub fn build_mixture(
    pools: &BTreeMap<String, Vec<PromptRecord>>,
    spec: &MixtureSpec,
    domains: &[String],
    seed: u64,
) -> Result<Vec<PromptRecord>> {
    let counts = spec.counts(domains)?;
    let mut out = Vec::with_capacity(spec.total);
    for (di, (domain, &n)) in domains.iter().zip(&counts).enumerate() {
        if n == 0 {
            continue;
        }
        let pool = pools.get(domain).map(Vec::as_slice).unwrap_or(&[]);
        if pool.len() < n {
            return Err(Error::InsufficientPool {
                domain: domain.clone(),
                requested: n,
                available: pool.len(),
            });
        }
        let mut rng = stream(seed, &[0x006d_6978, di as u64]);
        out.extend(pool.choose_multiple(&mut rng, n).cloned());
    }
    out.shuffle(&mut stream(seed, &[0x006d_6978, u64::MAX]));
    Ok(out)
}

/// Seeded permutation cut into contiguous batches; the last may be short.
pub fn shuffle_batches<T: Clone>(items: &[T], batch_size: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut stream(seed, &[0x0062_6174_6368]));
    Ok(shuffled.chunks(batch_size).map(<[T]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{by_domain, domain_proportions, validate_dataset};
    use crate::env::{make_env, EnvSpec};

    fn names() -> Vec<String> {
        ["math", "nq", "arc", "imdb"].iter().map(|s| s.to_string()).collect()
    }

    fn heavy(d: &str) -> MixturePreset {
        MixturePreset::Heavy(d.into())
    }

    #[test]
    fn preset_counts() {
        let d = names();
        assert_eq!(
            MixtureSpec::preset(4000, MixturePreset::Balanced).counts(&d).unwrap(),
            vec![1000; 4]
        );
        assert_eq!(
            MixtureSpec::preset(4000, heavy("math")).counts(&d).unwrap(),
            vec![3000, 333, 333, 334]
        );
        assert_eq!(
            MixtureSpec::preset(4000, heavy("imdb")).counts(&d).unwrap(),
            vec![333, 333, 334, 3000]
        );
        assert_eq!(
            MixtureSpec::preset(2000, heavy("math")).counts(&d).unwrap(),
            vec![1500, 166, 167, 167]
        );
        assert!(matches!(
            MixtureSpec::preset(4000, heavy("law")).counts(&d),
            Err(Error::UnknownDomain(_))
        ));
    }

    #[test]
    fn custom_fractions() {
        let d = names();
        let spec = MixtureSpec {
            total: 10,
            preset: None,
            proportions: BTreeMap::from([("math".into(), 0.5), ("imdb".into(), 0.5)]),
        };
        assert_eq!(spec.counts(&d).unwrap(), vec![5, 0, 0, 5]);
        let bad = MixtureSpec {
            proportions: BTreeMap::from([("math".into(), 0.7)]),
            ..spec
        };
        assert!(bad.counts(&d).is_err());
    }

    #[test]
    fn mixture_realizes_counts() {
        let env = make_env(&EnvSpec::default_four_domain(1)).unwrap();
        let pools = by_domain(&env.train);
        let spec = MixtureSpec::preset(4000, heavy("nq"));
        let mix = build_mixture(&pools, &spec, &names(), 5).unwrap();
        let summary = validate_dataset(&mix).unwrap();
        assert_eq!(summary.counts["nq"], 3000);
        assert_eq!(summary.counts["math"], 333);
        assert_eq!(summary.counts["arc"], 333);
        assert_eq!(summary.counts["imdb"], 334);
        assert_eq!(domain_proportions(&summary).unwrap().proportion("nq").unwrap(), 0.75);
        // without replacement
        let ids: std::collections::HashSet<_> = mix.iter().map(|r| &r.prompt_id).collect();
        assert_eq!(ids.len(), mix.len());
        assert_eq!(mix, build_mixture(&pools, &spec, &names(), 5).unwrap());
        assert_ne!(mix, build_mixture(&pools, &spec, &names(), 6).unwrap());

        let too_many = MixtureSpec::preset(6000, heavy("nq"));
        assert!(matches!(
            build_mixture(&pools, &too_many, &names(), 5),
            Err(Error::InsufficientPool { .. })
        ));
    }

    #[test]
    fn batches() {
        let items: Vec<usize> = (0..4000).collect();
        let b = shuffle_batches(&items, 64, 3).unwrap();
        assert_eq!(b.len(), 63);
        assert!(b[..62].iter().all(|x| x.len() == 64));
        assert_eq!(b[62].len(), 32);
        assert_eq!(b, shuffle_batches(&items, 64, 3).unwrap());
        assert_eq!(shuffle_batches(&items, 5000, 3).unwrap().len(), 1);
        assert!(shuffle_batches(&items, 0, 3).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn batches_preserve_multiset(items in prop::collection::vec(0u32..50, 0..300), bs in 1usize..70, seed in any::<u64>()) {
                let mut flat: Vec<u32> = shuffle_batches(&items, bs, seed).unwrap().concat();
                let mut orig = items.clone();
                flat.sort_unstable();
                orig.sort_unstable();
                prop_assert_eq!(flat, orig);
            }

            #[test]
            fn allocation_sums_to_total(weights in prop::collection::vec(0.01f64..1.0, 1..8), total in 0usize..10_000) {
                let s: f64 = weights.iter().sum();
                let fr: Vec<f64> = weights.iter().map(|w| w / s).collect();
                let counts = largest_remainder(&fr, total);
                prop_assert_eq!(counts.iter().sum::<usize>(), total);
                for (c, f) in counts.iter().zip(&fr) {
                    prop_assert!((*c as f64 - f * total as f64).abs() < 1.0 + 1e-9);
                }
            }

            #[test]
            fn heavy_divisible_totals_are_exact(k in 1usize..2000, which in 0usize..4) {
                let total = 4 * k;
                let d = names();
                let counts = MixtureSpec::preset(total, heavy(&d[which])).counts(&d).unwrap();
                prop_assert_eq!(counts[which], 3 * k);
                prop_assert_eq!(counts.iter().sum::<usize>(), total);
            }
        }
    }
}
