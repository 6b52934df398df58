use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use phasegen::dataset;
use phasegen::experiment::{self, Execution, ExperimentSpec, TrialRecord};
use phasegen::solvers::{median, project, LatentInit, SolverConfig, SolverKind};
use phasegen::{train_glo, GeneratorNetwork, GloConfig, RngStream};

#[derive(Parser)]
#[command(name = "phasegen", version, about = "Phase retrieval under generative priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Appgd,
    Apgd,
    Gd,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Run a measurement sweep described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads for trial-level parallelism (1 = sequential).
        #[arg(long, env = "PHASEGEN_THREADS")]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value = "all")]
        solver: SolverArg,
    },
    /// Project a vector onto the range of a saved generator.
    Project {
        #[arg(long)]
        weights: PathBuf,
        /// JSON array, whitespace/comma separated text, or flat vector file
        /// (first vector is used).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        eta_in: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a generator by joint latent/weight optimization.
    TrainGlo {
        /// IDX image file or flat vector file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            out_dir,
            threads,
            solver,
        } => run(&config, out_dir, threads, solver),
        Command::Project {
            weights,
            input,
            steps,
            eta_in,
            seed,
            output,
        } => project_cmd(&weights, &input, steps, eta_in, seed, output.as_deref()),
        Command::TrainGlo { data, config } => train_cmd(&data, &config),
    }
}

fn execution(threads: Option<usize>) -> Result<Execution> {
    match threads {
        Some(0) => bail!("--threads must be >= 1"),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        other => Ok(Execution::Parallel { threads: other }),
        #[cfg(not(feature = "parallel"))]
        _ => Ok(Execution::Sequential),
    }
}

fn run(config: &Path, out_dir: Option<PathBuf>, threads: Option<usize>, solver: SolverArg) -> Result<()> {
    let mut spec = ExperimentSpec::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(dir) = out_dir {
        spec.output.dir = dir;
    }
    spec.solvers = match solver {
        SolverArg::All => spec.solvers,
        SolverArg::Appgd => vec![SolverKind::Appgd],
        SolverArg::Apgd => vec![SolverKind::Apgd],
        SolverArg::Gd => vec![SolverKind::Gd],
    };
    let records = experiment::run_experiment_with(&spec, execution(threads)?)?;
    let (csv, json) = (spec.output.csv_path(), spec.output.manifest_path());
    experiment::emit_results(&spec, &records, &csv, &json)?;
    print_summary(&spec, &records);
    eprintln!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn print_summary(spec: &ExperimentSpec, records: &[TrialRecord]) {
    eprintln!("{:<6} {:>6} {:>14} {:>8}", "solver", "m", "median rel", "failed");
    for kind in &spec.solvers {
        for &m in &spec.m_values {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.solver == *kind && r.m == m).collect();
            let med = median(rows.iter().map(|r| r.relative_dist()));
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            let med = med.map_or("-".to_string(), |v| format!("{v:.3e}"));
            eprintln!("{:<6} {:>6} {:>14} {:>8}", kind.name(), m, med, failed);
        }
    }
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(dataset::FLAT_MAGIC) {
        return dataset::parse_flat_vectors(&bytes)?
            .into_iter()
            .next()
            .context("flat vector file is empty");
    }
    let text = String::from_utf8(bytes).context("vector file is neither flat binary nor UTF-8")?;
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return Ok(serde_json::from_str(trimmed)?);
    }
    trimmed
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad number {t:?}")))
        .collect()
}

#[derive(Serialize)]
struct ProjectionReport {
    x: Vec<f64>,
    z: Vec<f64>,
    loss: f64,
}

fn project_cmd(
    weights: &Path,
    input: &Path,
    steps: usize,
    eta_in: f64,
    seed: u64,
    output: Option<&Path>,
) -> Result<()> {
    let g = GeneratorNetwork::load_weights_from(weights)?;
    let w = read_vector(input)?;
    let cfg = SolverConfig {
        inner_iters: steps,
        eta_in,
        z_init: LatentInit::FreshRandom,
        ..SolverConfig::default()
    };
    cfg.validate()?;
    let p = project(&g, &w, &cfg, &mut RngStream::new(seed), None)?;
    let report = serde_json::to_string_pretty(&ProjectionReport {
        x: p.x,
        z: p.z,
        loss: p.loss,
    })?;
    match output {
        Some(path) => std::fs::write(path, report + "\n")?,
        None => println!("{report}"),
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    #[serde(default)]
    seed: u64,
    /// Nearest-neighbour resize applied to IDX images, `[rows, cols]`.
    resize: Option<[usize; 2]>,
    /// Keep only the first `max_samples` vectors.
    max_samples: Option<usize>,
    weights_out: PathBuf,
    /// Epoch losses and per-sample latent codes, as JSON.
    report_out: Option<PathBuf>,
    glo: GloConfig,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    epoch_losses: &'a [f64],
    latents: Vec<&'a [f64]>,
}

fn train_cmd(data: &Path, config: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: TrainConfig = toml::from_str(&text)?;
    let mut samples = dataset::load_vectors(data, cfg.resize.map(|[r, c]| (r, c)))?;
    if let Some(n) = cfg.max_samples {
        samples.truncate(n);
    }
    let out = train_glo(&samples, &cfg.glo, &mut RngStream::new(cfg.seed))?;
    out.generator.save_weights_to(&cfg.weights_out)?;
    if let Some(path) = &cfg.report_out {
        let report = TrainReport {
            epoch_losses: &out.epoch_losses,
            latents: out.codes.iter().map(|z| &z[..]).collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    if let Some(last) = out.epoch_losses.last() {
        eprintln!("trained {} epochs on {} samples; final epoch loss {last:.4e}", out.epoch_losses.len(), samples.len());
    }
    eprintln!("wrote {}", cfg.weights_out.display());
    Ok(())
}
