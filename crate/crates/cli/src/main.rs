use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use disco::experiment::{cell_dir, generate_data, run_sweep, write_outcome, write_run, write_sweep, write_timing};
use disco::{export_report, run_cells, run_training, ExperimentSpec, Format, Method, WeightVariant};

const OUT_ENV: &str = "DISCO_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "disco",
    version,
    about = "Group-relative policy optimization experiments on synthetic tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train mixture and eval split as JSONL.
    GenData(Common),
    /// Train one cell: the first (or given) method and seed.
    Train(Common),
    /// Run every (method, mixture, seed) cell and write comparison tables.
    Experiment(Common),
    /// Train each method and seed at several group sizes.
    SweepG {
        #[command(flatten)]
        common: Common,
        /// Comma-separated group sizes.
        #[arg(long = "g", value_delimiter = ',', default_value = "2,4,8,16")]
        group_sizes: Vec<usize>,
    },
    /// Re-export a run's report.json as JSON or CSV.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, value_enum)]
        format: ReportFormat,
        /// Destination directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; the DISCO_OUT_DIR environment variable takes precedence.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run only this method.
    #[arg(long)]
    method: Option<Method>,
    /// Domain-weight variant for every run.
    #[arg(long)]
    variant: Option<WeightVariant>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<disco::Error> for Failure {
    fn from(e: disco::Error) -> Self {
        if e.is_config() {
            Failure::Usage(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<disco::Error>() {
            Some(inner) if inner.is_config() => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.out.clone(),
        }
    }

    /// Loads the spec and applies the command-line overrides.
    fn load(&self) -> Result<ExperimentSpec, Failure> {
        let text = std::fs::read_to_string(&self.spec)
            .with_context(|| format!("reading spec {}", self.spec.display()))
            .map_err(Failure::Usage)?;
        let mut spec = ExperimentSpec::from_json(&text)?;
        if let Some(seed) = self.seed {
            spec.seeds = vec![seed];
        }
        if let Some(method) = self.method {
            spec.comparisons = vec![method];
        }
        if let Some(variant) = self.variant {
            spec.train.scaling.variant = variant;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn gen_data(common: &Common) -> Result<(), Failure> {
    let spec = common.load()?;
    let mixture = spec.mixture_specs().remove(0);
    let config = spec.cell_config(spec.comparisons[0], &mixture, spec.seeds[0]);
    let dir = common.out_dir().join(&spec.name).join("data");
    let (train, eval) = generate_data(&config, &dir)?;
    println!("{}\n{}", train.display(), eval.display());
    Ok(())
}

fn train(common: &Common) -> Result<(), Failure> {
    let spec = common.load()?;
    let mixture = spec.mixture_specs().remove(0);
    let config = spec.cell_config(spec.comparisons[0], &mixture, spec.seeds[0]);
    let start = std::time::Instant::now();
    let report = run_training(&config)?;
    let dir = cell_dir(
        &common.out_dir(),
        &spec.name,
        report.method,
        &report.mixture,
        report.seed,
    );
    write_run(&dir, &report)?;
    write_timing(&dir, start.elapsed().as_secs_f64())?;
    println!(
        "{} {} seed {}: final average {:.2}% -> {}",
        report.method,
        report.mixture,
        report.seed,
        report.final_average(),
        dir.display()
    );
    Ok(())
}

fn experiment(common: &Common) -> Result<(), Failure> {
    let spec = common.load()?;
    let outcome = run_cells(&spec)?;
    let out = common.out_dir();
    write_outcome(&outcome, &out)?;
    print!("{}", outcome.table.to_markdown());
    for t in &outcome.tests {
        match &t.result {
            Some(r) => println!(
                "{} vs {}: t = {:.4}, one-tailed p = {:.3e}",
                t.a, t.b, r.t_statistic, r.p_one_tailed
            ),
            None => println!("{} vs {}: undefined ({})", t.a, t.b, t.note.as_deref().unwrap_or("")),
        }
    }
    println!("artifacts in {}", out.join(&spec.name).display());
    Ok(())
}

fn sweep(common: &Common, group_sizes: &[usize]) -> Result<(), Failure> {
    let spec = common.load()?;
    let outcome = run_sweep(&spec, group_sizes)?;
    let path = write_sweep(&spec, &outcome, &common.out_dir())?;
    for &method in &spec.comparisons {
        for &g in group_sizes {
            println!(
                "{method} G={g}: mean final average {:.2}%",
                outcome.mean_final(method, g)
            );
        }
    }
    println!("{}", path.display());
    Ok(())
}

fn report(run_dir: &Path, format: ReportFormat, out: Option<&Path>) -> Result<(), Failure> {
    let format = match format {
        ReportFormat::Csv => Format::Csv,
        ReportFormat::Json => Format::Json,
    };
    for path in export_report(run_dir, format, out.unwrap_or(run_dir))? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(c) => gen_data(c),
        Command::Train(c) => train(c),
        Command::Experiment(c) => experiment(c),
        Command::SweepG { common, group_sizes } => sweep(common, group_sizes),
        Command::Report { run_dir, format, out } => report(run_dir, *format, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
