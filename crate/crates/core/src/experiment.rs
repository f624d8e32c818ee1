//! Experiment grids, comparison tables and on-disk artifacts.
//!
//! An [`ExperimentSpec`] is one JSON document. Every (method, mixture, seed)
//! cell is an independent training run; cells run in parallel and each
//! writes only under its own directory:
//!
//! ```text
//! <out>/<name>/<method>/<mixture>/seed-<seed>/{report.json, reward_curve.csv, eval_table.csv, timing.json}
//! <out>/<name>/{comparison.csv, comparison.md, ttests.json}
//! ```
//!
//! `report.json` depends only on the spec, so reruns overwrite it with the
//! same bytes. Wall-clock time goes to `timing.json` for that reason.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{by_domain, write_jsonl};
use crate::env::make_env;
use crate::error::{Error, Result};
use crate::sampler::{build_mixture, MixturePreset, MixtureSpec};
use crate::scaling::Method;
use crate::stats::{paired_t_test, PairedTTest};
use crate::trainer::{run_training, sweep_group_size, unweighted_mean, RunReport, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    /// Directory name for the artifacts; letters, digits, `.`, `_`, `-`.
    pub name: String,
    pub train: TrainConfig,
    pub comparisons: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Columns of the comparison table. Empty means the train mixture alone.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mixtures: Vec<MixturePreset>,
}

impl ExperimentSpec {
    /// Parses and validates. Syntax and schema errors carry the line.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
            line: e.line(),
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !is_safe_component(&self.name) {
            return Err(Error::InvalidConfig(format!(
                "name `{}` must be nonempty and use only letters, digits, `.`, `_`, `-`",
                self.name
            )));
        }
        if self.comparisons.is_empty() {
            return Err(Error::InvalidConfig("comparisons must list at least one method".into()));
        }
        if has_duplicates(&self.comparisons) {
            return Err(Error::InvalidConfig("comparisons contain a duplicate method".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be nonempty".into()));
        }
        if has_duplicates(&self.seeds) {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if has_duplicates(&self.mixtures) {
            return Err(Error::InvalidConfig("mixtures contain a duplicate preset".into()));
        }
        let domains = self.train.env.domain_names();
        for m in self.mixture_specs() {
            m.counts(&domains)?;
        }
        self.train.validate()
    }

    /// One mixture per table column, all with the train mixture's total.
    pub fn mixture_specs(&self) -> Vec<MixtureSpec> {
        if self.mixtures.is_empty() {
            vec![self.train.mixture.clone()]
        } else {
            self.mixtures
                .iter()
                .map(|p| MixtureSpec::preset(self.train.mixture.total, p.clone()))
                .collect()
        }
    }

    /// The training config for one cell.
    pub fn cell_config(&self, method: Method, mixture: &MixtureSpec, seed: u64) -> TrainConfig {
        let mut config = self.train.clone().with_method(method);
        config.mixture = mixture.clone();
        config.seed = seed;
        config
    }

    /// Cells in table order: method, then mixture, then seed.
    pub fn cells(&self) -> Vec<(Method, MixtureSpec, u64)> {
        let mixtures = self.mixture_specs();
        let mut cells = Vec::new();
        for &method in &self.comparisons {
            for mixture in &mixtures {
                for &seed in &self.seeds {
                    cells.push((method, mixture.clone(), seed));
                }
            }
        }
        cells
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().any(|(i, x)| items[..i].contains(x))
}

fn is_safe_component(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub report: RunReport,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    /// Mean over seeds of the final unweighted average, per mixture column.
    pub cells: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn from_reports(methods: &[Method], columns: &[String], reports: &[RunReport]) -> Self {
        let rows = methods
            .iter()
            .map(|&method| {
                let cells: Vec<f64> = columns
                    .iter()
                    .map(|col| {
                        unweighted_mean(
                            reports
                                .iter()
                                .filter(|r| r.method == method && &r.mixture == col)
                                .map(RunReport::final_average),
                        )
                    })
                    .collect();
                let average = unweighted_mean(cells.iter().copied());
                ComparisonRow { method, cells, average }
            })
            .collect();
        ComparisonTable {
            columns: columns.to_vec(),
            rows,
        }
    }

    pub fn row(&self, method: Method) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("avg".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.method.name().to_string()];
            rec.extend(row.cells.iter().map(f64::to_string));
            rec.push(row.average.to_string());
            w.write_record(&rec)?;
        }
        csv_string(w)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Method |");
        for c in &self.columns {
            let _ = write!(s, " {c} |");
        }
        s.push_str(" Avg. |\n|---|");
        s.push_str(&"---:|".repeat(self.columns.len() + 1));
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "| {} |", row.method);
            for v in &row.cells {
                let _ = write!(s, " {v:.2} |");
            }
            let _ = writeln!(s, " {:.2} |", row.average);
        }
        s
    }
}

/// Paired test of `a` against `b` over matching (mixture, seed) cells.
/// `result` is absent when the test is undefined, e.g. identical scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: Method,
    pub b: Method,
    pub pairs: usize,
    pub result: Option<PairedTTest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Final averages of `method` in cell order (mixture, then seed).
pub fn final_scores(reports: &[RunReport], method: Method) -> Vec<f64> {
    reports
        .iter()
        .filter(|r| r.method == method)
        .map(RunReport::final_average)
        .collect()
}

/// One test per unordered pair. Each method is tested as `a` against every
/// method listed before it, so list baselines first and a positive `t`
/// means the later method scored higher.
pub fn pairwise_tests(methods: &[Method], reports: &[RunReport]) -> Vec<PairwiseTest> {
    let mut tests = Vec::new();
    for (i, &b) in methods.iter().enumerate() {
        for &a in &methods[i + 1..] {
            let sa = final_scores(reports, a);
            let sb = final_scores(reports, b);
            let (result, note) = match paired_t_test(&sa, &sb) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            tests.push(PairwiseTest {
                a,
                b,
                pairs: sa.len().min(sb.len()),
                result,
                note,
            });
        }
    }
    tests
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub spec: ExperimentSpec,
    /// In [`ExperimentSpec::cells`] order.
    pub cells: Vec<CellResult>,
    pub table: ComparisonTable,
    pub tests: Vec<PairwiseTest>,
}

impl ExperimentOutcome {
    pub fn reports(&self) -> Vec<RunReport> {
        self.cells.iter().map(|c| c.report.clone()).collect()
    }
}

/// Runs every cell in memory.
pub fn run_cells(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let cells = spec
        .cells()
        .par_iter()
        .map(|(method, mixture, seed)| {
            let start = Instant::now();
            let report = run_training(&spec.cell_config(*method, mixture, *seed))?;
            Ok(CellResult {
                report,
                wall_clock_secs: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<RunReport> = cells.iter().map(|c| c.report.clone()).collect();
    let columns: Vec<String> = spec.mixture_specs().iter().map(MixtureSpec::label).collect();
    Ok(ExperimentOutcome {
        table: ComparisonTable::from_reports(&spec.comparisons, &columns, &reports),
        tests: pairwise_tests(&spec.comparisons, &reports),
        spec: spec.clone(),
        cells,
    })
}

/// Directory of one cell's artifacts.
pub fn cell_dir(out: &Path, name: &str, method: Method, mixture: &str, seed: u64) -> PathBuf {
    out.join(name)
        .join(method.name())
        .join(mixture)
        .join(format!("seed-{seed}"))
}

/// Runs the spec at `spec_path` and writes every artifact under `out`.
pub fn run_experiment(spec_path: &Path, out: &Path) -> Result<ExperimentOutcome> {
    let spec = ExperimentSpec::load(spec_path)?;
    let outcome = run_cells(&spec)?;
    write_outcome(&outcome, out)?;
    Ok(outcome)
}

pub fn write_outcome(outcome: &ExperimentOutcome, out: &Path) -> Result<()> {
    let root = out.join(&outcome.spec.name);
    fs::create_dir_all(&root)?;
    for cell in &outcome.cells {
        let r = &cell.report;
        let dir = cell_dir(out, &outcome.spec.name, r.method, &r.mixture, r.seed);
        write_run(&dir, r)?;
        write_timing(&dir, cell.wall_clock_secs)?;
    }
    fs::write(root.join("spec.json"), outcome.spec.to_json()?)?;
    fs::write(root.join("comparison.csv"), outcome.table.to_csv()?)?;
    fs::write(root.join("comparison.md"), outcome.table.to_markdown())?;
    fs::write(root.join("ttests.json"), serde_json::to_string_pretty(&outcome.tests)?)?;
    Ok(())
}

pub fn write_timing(dir: &Path, secs: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let timing = serde_json::json!({ "wall_clock_secs": secs });
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    Ok(())
}

/// Writes `report.json` and both CSVs into `dir`.
pub fn write_run(dir: &Path, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    export_report_to(report, Format::Json, dir)?;
    export_report_to(report, Format::Csv, dir)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub const REPORT_FILE: &str = "report.json";

pub fn read_report(run_dir: &Path) -> Result<RunReport> {
    let path = run_dir.join(REPORT_FILE);
    if !path.is_file() {
        return Err(Error::MissingReport(path.display().to_string()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Re-serializes the report in `run_dir` into `dest`. Returns the files
/// written.
pub fn export_report(run_dir: &Path, format: Format, dest: &Path) -> Result<Vec<PathBuf>> {
    let report = read_report(run_dir)?;
    fs::create_dir_all(dest)?;
    export_report_to(&report, format, dest)
}

fn export_report_to(report: &RunReport, format: Format, dest: &Path) -> Result<Vec<PathBuf>> {
    match format {
        Format::Json => {
            let path = dest.join(REPORT_FILE);
            fs::write(&path, serde_json::to_string_pretty(report)?)?;
            Ok(vec![path])
        }
        Format::Csv => {
            let curve = dest.join("reward_curve.csv");
            fs::write(&curve, reward_curve_csv(report)?)?;
            let table = dest.join("eval_table.csv");
            fs::write(&table, eval_table_csv(report)?)?;
            Ok(vec![curve, table])
        }
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Columns `batch, mean_reward`.
pub fn reward_curve_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &report.reward_curve {
        w.serialize(p)?;
    }
    csv_string(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub checkpoint: usize,
    pub domain: String,
    pub accuracy: f64,
}

/// Columns `checkpoint, domain, accuracy`; one row per (checkpoint, domain).
pub fn eval_table_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &report.eval_table {
        for (domain, &accuracy) in &c.accuracy {
            w.serialize(EvalRow {
                checkpoint: c.checkpoint,
                domain: domain.clone(),
                accuracy,
            })?;
        }
    }
    csv_string(w)
}

/// Group-size study: one run per (method, G, seed), reusing the spec's
/// first mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Method,
    pub group_size: usize,
    pub seed: u64,
    pub final_average: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub reports: Vec<RunReport>,
    pub points: Vec<SweepPoint>,
}

impl SweepOutcome {
    /// Mean final average over seeds for one (method, G).
    pub fn mean_final(&self, method: Method, group_size: usize) -> f64 {
        unweighted_mean(
            self.points
                .iter()
                .filter(|p| p.method == method && p.group_size == group_size)
                .map(|p| p.final_average),
        )
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.points {
            w.serialize(p)?;
        }
        csv_string(w)
    }
}

pub fn run_sweep(spec: &ExperimentSpec, group_sizes: &[usize]) -> Result<SweepOutcome> {
    spec.validate()?;
    if group_sizes.is_empty() || group_sizes.iter().any(|&g| g < 2) {
        return Err(Error::InvalidConfig(format!(
            "group sizes must all be at least 2, got {group_sizes:?}"
        )));
    }
    let mixture = spec.mixture_specs().remove(0);
    let jobs: Vec<(Method, u64)> = spec
        .comparisons
        .iter()
        .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(method, seed)| sweep_group_size(&spec.cell_config(method, &mixture, seed), group_sizes))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<RunReport> = per_job.into_iter().flatten().collect();
    let points = reports
        .iter()
        .map(|r| SweepPoint {
            method: r.method,
            group_size: r.group_size,
            seed: r.seed,
            final_average: r.final_average(),
        })
        .collect();
    Ok(SweepOutcome { reports, points })
}

/// `<out>/<name>/sweep-g/<method>/g-<G>/seed-<seed>/` per run, plus
/// `<out>/<name>/sweep-g/sweep.csv`.
pub fn write_sweep(spec: &ExperimentSpec, outcome: &SweepOutcome, out: &Path) -> Result<PathBuf> {
    let root = out.join(&spec.name).join("sweep-g");
    for r in &outcome.reports {
        let dir = root
            .join(r.method.name())
            .join(format!("g-{}", r.group_size))
            .join(format!("seed-{}", r.seed));
        write_run(&dir, r)?;
    }
    fs::create_dir_all(&root)?;
    let path = root.join("sweep.csv");
    fs::write(&path, outcome.to_csv()?)?;
    Ok(path)
}

/// Writes the train mixture and eval split the spec's train config would
/// use for `seed`, as JSONL. Returns (train, eval) paths.
pub fn generate_data(config: &TrainConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    config.validate()?;
    let env = make_env(&config.env)?;
    let domains = config.env.domain_names();
    let train = build_mixture(&by_domain(&env.train), &config.mixture, &domains, config.seed)?;
    fs::create_dir_all(out)?;
    let train_path = out.join("train.jsonl");
    let eval_path = out.join("eval.jsonl");
    write_jsonl(&train_path, &train)?;
    write_jsonl(&eval_path, &env.eval)?;
    Ok((train_path, eval_path))
}
