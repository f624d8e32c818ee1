//! Prompt records, dataset validation and domain-proportion bookkeeping.
//!
//! Datasets are stored as JSON lines, one record per line:
//!
//! ```text
//! {"id":"math-0000","domain":"math","target":[2,1],"vocab":4,"context":17}
//! ```
//!
//! `context` is optional. It is the observable content of the prompt: two
//! records of the same domain with the same context are the same question,
//! so a policy conditioned on prompt content treats them identically. A
//! record without a context is its own unique question.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training or evaluation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptRecord {
    #[serde(rename = "id")]
    pub prompt_id: String,
    pub domain: String,
    /// Ground-truth answer, one token index per position.
    pub target: Vec<usize>,
    /// Per-position vocabulary size.
    #[serde(rename = "vocab")]
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<u32>,
}

impl PromptRecord {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Checks the record's own invariants, returning the first violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.domain.is_empty() {
            return Err("domain label is empty".into());
        }
        if self.vocab_size < 2 {
            return Err(format!("vocabulary size {} < 2", self.vocab_size));
        }
        if self.target.is_empty() {
            return Err("target is empty".into());
        }
        if let Some((pos, tok)) = self.target.iter().enumerate().find(|(_, &t)| t >= self.vocab_size) {
            return Err(format!(
                "target token {tok} at position {pos} >= vocab {}",
                self.vocab_size
            ));
        }
        Ok(())
    }

    /// Key of the parameter block that answers this prompt.
    pub fn param_key(&self) -> ParamKey {
        match self.context {
            Some(c) => ParamKey(format!("ctx:{}:{c}", self.domain)),
            None => ParamKey(format!("id:{}", self.prompt_id)),
        }
    }
}

/// Identifies one block of policy parameters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamKey(pub String);

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Per-domain record counts of a validated dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
}

/// Domain counts together with their proportions `p_d = N_d / Σ N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainCatalog {
    counts: BTreeMap<String, usize>,
    proportions: BTreeMap<String, f64>,
}

impl DomainCatalog {
    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    pub fn proportions(&self) -> &BTreeMap<String, f64> {
        &self.proportions
    }

    pub fn proportion(&self, domain: &str) -> Result<f64> {
        self.proportions
            .get(domain)
            .copied()
            .ok_or_else(|| Error::UnknownDomain(domain.to_string()))
    }
}

pub fn validate_dataset(records: &[PromptRecord]) -> Result<DatasetSummary> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = BTreeMap::new();
    for (index, record) in records.iter().enumerate() {
        record
            .check()
            .map_err(|reason| Error::MalformedRecord { index, reason })?;
        *counts.entry(record.domain.clone()).or_insert(0) += 1;
    }
    Ok(DatasetSummary {
        counts,
        total: records.len(),
    })
}

pub fn domain_proportions(summary: &DatasetSummary) -> Result<DomainCatalog> {
    let total: usize = summary.counts.values().sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let proportions = summary
        .counts
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(d, &n)| (d.clone(), n as f64 / total as f64))
        .collect();
    Ok(DomainCatalog {
        counts: summary.counts.clone(),
        proportions,
    })
}

/// Groups records by domain, preserving their relative order.
pub fn by_domain(records: &[PromptRecord]) -> BTreeMap<String, Vec<PromptRecord>> {
    let mut pools: BTreeMap<String, Vec<PromptRecord>> = BTreeMap::new();
    for r in records {
        pools.entry(r.domain.clone()).or_default().push(r.clone());
    }
    pools
}

pub fn write_jsonl(path: &Path, records: &[PromptRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines dataset. Blank lines are skipped; parse failures
/// report the 1-based line number.
pub fn read_jsonl(path: &Path) -> Result<Vec<PromptRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::ConfigParse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
