//! Seeded measurement sweeps over `(m, seed)` with every configured solver.
//!
//! Each `(m, seed)` pair is one trial. A trial draws its sensing matrix and
//! initial latent once, and every solver in the trial consumes exactly those
//! arrays. Trials are independent and may run in parallel; records are sorted
//! before emission, so thread count never changes the CSV bytes.
//!
//! Random streams per trial, all children of `RngStream::new(seed).split(m)`:
//! `split(0)` sensing matrix, `split(1)` initial latent, `split(2)` noise,
//! `split(3 + i)` solver `i` in [`SolverKind::ALL`] order. Planted truths come
//! from `RngStream::new(truth_seed).split(seed)` and so do not depend on `m`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset;
use crate::error::{Error, Result};
use crate::generator::{random_generator, GeneratorNetwork};
use crate::metrics::{dist_up_to_sign, recon_error_per_pixel, sign_correct, ssim, SsimConfig};
use crate::numerics::{norm, sub, RngStream};
use crate::sensing::{make_sensing, observe_noisy};
use crate::solvers::{initial_latent, median, Problem, RecoveryResult, SolverConfig, SolverKind};

/// Iterations with `dist` at or below this are excluded from contraction
/// statistics.
pub const CONTRACTION_DIST_FLOOR: f64 = 1e-6;

/// Phase-noise ratios are collected while `dist < PHASE_NOISE_BALL·‖x*‖`.
pub const PHASE_NOISE_BALL: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSource {
    Random {
        latent_dim: usize,
        #[serde(default)]
        hidden_dims: Vec<usize>,
        output_dim: usize,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl GeneratorSource {
    pub fn build(&self) -> Result<GeneratorNetwork> {
        match self {
            GeneratorSource::Random {
                latent_dim,
                hidden_dims,
                output_dim,
                seed,
            } => random_generator(*latent_dim, hidden_dims, *output_dim, &mut RngStream::new(*seed)),
            GeneratorSource::File { path } => GeneratorNetwork::load_weights_from(path),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Idx,
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSource {
    /// `x* = G(z*)` with `z*` uniform on the unit sphere.
    PlantedSynthetic { seed: u64 },
    /// Trial `seed` uses image `seed mod count`.
    DatasetImages {
        path: PathBuf,
        format: DatasetFormat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resize: Option<[usize; 2]>,
    },
}

impl TruthSource {
    pub fn is_planted(&self) -> bool {
        matches!(self, TruthSource::PlantedSynthetic { .. })
    }
}

/// How the shared initial latent `z_0` is drawn.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitPolicy {
    /// Uniform on the unit sphere.
    #[default]
    UnitSphere,
    /// Unit-sphere draws, rejected until `‖G(z_0) − x*‖ ≤ radius·‖x*‖`.
    /// Uses the ground truth, so it only serves local-convergence studies.
    NearTruth {
        radius: f64,
        #[serde(default = "default_max_draws")]
        max_draws: usize,
    },
}

fn default_max_draws() -> usize {
    100_000
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Compute SSIM; needs `image_height × image_width = n`.
    #[serde(default)]
    pub ssim: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_width: Option<usize>,
    /// SSIM dynamic range; the truth's `max − min` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_range: Option<f64>,
    /// Write wall-clock seconds into the CSV. Off by default because timings
    /// differ between runs; the manifest always carries them.
    #[serde(default)]
    pub wall_clock: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_manifest")]
    pub manifest: String,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_csv() -> String {
    "results.csv".into()
}
fn default_manifest() -> String {
    "manifest.json".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            csv: default_csv(),
            manifest: default_manifest(),
        }
    }
}

impl OutputConfig {
    pub fn csv_path(&self) -> PathBuf {
        self.dir.join(&self.csv)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(&self.manifest)
    }
}

fn default_solvers() -> Vec<SolverKind> {
    SolverKind::ALL.to_vec()
}

fn default_gd() -> SolverConfig {
    SolverConfig {
        total_steps: Some(2500),
        ..SolverConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub m_values: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_solvers")]
    pub solvers: Vec<SolverKind>,
    pub generator: GeneratorSource,
    pub truth: TruthSource,
    #[serde(default)]
    pub init: InitPolicy,
    /// Additive Gaussian measurement noise; zero gives `y = |A x*|`.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub appgd: SolverConfig,
    #[serde(default)]
    pub apgd: SolverConfig,
    #[serde(default = "default_gd")]
    pub gd: SolverConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn solver_config(&self, kind: SolverKind) -> &SolverConfig {
        match kind {
            SolverKind::Appgd => &self.appgd,
            SolverKind::Apgd => &self.apgd,
            SolverKind::Gd => &self.gd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() {
            return Err(Error::Spec("m_values must not be empty".into()));
        }
        if self.m_values.contains(&0) {
            return Err(Error::Spec("every m must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Spec("seeds must not be empty".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::Spec("solvers must not be empty".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Spec("noise_std must be finite and >= 0".into()));
        }
        if let InitPolicy::NearTruth { radius, max_draws } = self.init {
            if radius.is_nan() || radius <= 0.0 || max_draws == 0 {
                return Err(Error::Spec("near_truth init needs radius > 0 and max_draws >= 1".into()));
            }
        }
        for kind in &self.solvers {
            self.solver_config(*kind)
                .validate()
                .map_err(|e| Error::Spec(format!("[{kind}] {e}")))?;
        }
        if self.metrics.ssim && (self.metrics.image_height.is_none() || self.metrics.image_width.is_none()) {
            return Err(Error::Spec("ssim needs image_height and image_width".into()));
        }
        Ok(())
    }
}

/// One row of results: a solver on one `(m, seed)` trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub solver: SolverKind,
    pub m: usize,
    pub seed: u64,
    pub final_dist: f64,
    pub truth_norm: f64,
    pub per_pixel_error: f64,
    pub ssim: Option<f64>,
    pub wall_seconds: f64,
    pub outer_losses: Vec<f64>,
    /// Median of `dist(x_{t+1})/dist(x_t)` over iterations with
    /// `dist(x_t) > CONTRACTION_DIST_FLOOR`.
    pub median_contraction: Option<f64>,
    /// Largest `‖e_t‖ / dist(x_t)` over iterations with
    /// `0 < dist(x_t) < PHASE_NOISE_BALL·‖x*‖`.
    pub max_phase_noise_ratio: Option<f64>,
    /// SHA-256 over the bits of `A`, `y` and `x_0` consumed by the solver.
    pub input_hash: String,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn relative_dist(&self) -> f64 {
        self.final_dist / self.truth_norm
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library: String,
    pub version: String,
    pub spec: ExperimentSpec,
    pub trials: Vec<TrialRecord>,
}

/// How trials are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing over trials. `threads = None` uses the global
    /// pool; `Some(n)` builds a dedicated pool of `n` threads.
    #[cfg(feature = "parallel")]
    Parallel { threads: Option<usize> },
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel { threads: None }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

struct Truths {
    images: Option<Vec<Vec<f64>>>,
}

impl Truths {
    fn load(spec: &ExperimentSpec, n: usize) -> Result<Self> {
        let images = match &spec.truth {
            TruthSource::PlantedSynthetic { .. } => None,
            TruthSource::DatasetImages {
                path,
                format,
                labels,
                resize,
            } => {
                let resize = resize.map(|[r, c]| (r, c));
                let imgs = match format {
                    DatasetFormat::Idx => dataset::load_mnist_idx(path, labels.as_deref(), resize)?,
                    DatasetFormat::Flat => dataset::load_flat_vectors(path)?,
                };
                if imgs.is_empty() {
                    return Err(Error::Spec(format!("{} holds no images", path.display())));
                }
                if let Some(bad) = imgs.iter().find(|v| v.len() != n) {
                    return Err(Error::Spec(format!(
                        "dataset vectors have length {}, generator outputs {n}",
                        bad.len()
                    )));
                }
                Some(imgs)
            }
        };
        Ok(Self { images })
    }

    fn truth(&self, spec: &ExperimentSpec, g: &GeneratorNetwork, seed: u64) -> Result<Vec<f64>> {
        match (&spec.truth, &self.images) {
            (TruthSource::PlantedSynthetic { seed: base }, _) => {
                let z = RngStream::new(*base).split(seed).unit_sphere(g.latent_dim());
                g.forward(&z)
            }
            (_, Some(imgs)) => Ok(imgs[(seed % imgs.len() as u64) as usize].clone()),
            _ => unreachable!("dataset truths are loaded up front"),
        }
    }
}

fn hash_inputs(a: &[f64], y: &[f64], x0: &[f64]) -> String {
    let mut h = Sha256::new();
    for part in [a, y, x0] {
        h.update((part.len() as u64).to_le_bytes());
        for v in part {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn draw_init(
    spec: &ExperimentSpec,
    g: &GeneratorNetwork,
    truth: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    match spec.init {
        InitPolicy::UnitSphere => Ok(initial_latent(g.latent_dim(), rng)),
        InitPolicy::NearTruth { radius, max_draws } => {
            let limit = radius * norm(truth);
            for _ in 0..max_draws {
                let z = initial_latent(g.latent_dim(), rng);
                if norm(&sub(&g.forward(&z)?, truth)) <= limit {
                    return Ok(z);
                }
            }
            Err(Error::Spec(format!(
                "no initial latent within {radius}·‖x*‖ after {max_draws} draws"
            )))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    spec: &ExperimentSpec,
    kind: SolverKind,
    m: usize,
    seed: u64,
    truth: &[f64],
    input_hash: &str,
    wall_seconds: f64,
    outcome: Result<RecoveryResult>,
) -> TrialRecord {
    let truth_norm = norm(truth);
    let mut rec = TrialRecord {
        solver: kind,
        m,
        seed,
        final_dist: f64::NAN,
        truth_norm,
        per_pixel_error: f64::NAN,
        ssim: None,
        wall_seconds,
        outer_losses: Vec::new(),
        median_contraction: None,
        max_phase_noise_ratio: None,
        input_hash: input_hash.to_string(),
        error: None,
    };
    let result = match outcome.and_then(|r| {
        let d = dist_up_to_sign(&r.x_hat, truth)?;
        Ok((r, d))
    }) {
        Ok(v) => v,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let (r, dist) = result;
    rec.final_dist = dist;
    rec.per_pixel_error = recon_error_per_pixel(&r.x_hat, truth).unwrap_or(f64::NAN);
    rec.outer_losses = r.outer_losses();
    rec.median_contraction = median(
        r.trace
            .iter()
            .filter(|e| e.dist.is_some_and(|d| d > CONTRACTION_DIST_FLOOR))
            .filter_map(|e| e.contraction),
    );
    let ball = PHASE_NOISE_BALL * truth_norm;
    rec.max_phase_noise_ratio = r
        .trace
        .iter()
        .filter_map(|e| match (e.dist, e.phase_noise) {
            (Some(d), Some(pn)) if d > 0.0 && d < ball => Some(pn / d),
            _ => None,
        })
        .reduce(f64::max);
    if spec.metrics.ssim {
        let (h, w) = (
            spec.metrics.image_height.unwrap_or(0),
            spec.metrics.image_width.unwrap_or(0),
        );
        let range = spec.metrics.dynamic_range.unwrap_or_else(|| {
            let (lo, hi) = truth
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        });
        let cfg = SsimConfig::new(h, w, range);
        match sign_correct(&r.x_hat, truth).and_then(|x| ssim(&x, truth, &cfg)) {
            Ok(s) => rec.ssim = Some(s),
            Err(e) => rec.error = Some(format!("ssim: {e}")),
        }
    }
    rec
}

fn run_trial(
    spec: &ExperimentSpec,
    g: &GeneratorNetwork,
    truths: &Truths,
    m: usize,
    seed: u64,
) -> Vec<TrialRecord> {
    let fail_all = |truth: &[f64], err: Error| -> Vec<TrialRecord> {
        spec.solvers
            .iter()
            .map(|&k| summarize(spec, k, m, seed, truth, "", 0.0, Err(Error::Spec(err.to_string()))))
            .collect()
    };
    let truth = match truths.truth(spec, g, seed) {
        Ok(t) => t,
        Err(e) => return fail_all(&[], e),
    };
    let root = RngStream::new(seed).split(m as u64);
    let setup = (|| -> Result<_> {
        let sensing = make_sensing(m, g.output_dim(), &mut root.split(0))?;
        let z0 = draw_init(spec, g, &truth, &mut root.split(1))?;
        let obs = observe_noisy(&sensing, &truth, spec.noise_std, &mut root.split(2))?;
        Ok((sensing, z0, obs))
    })();
    let (sensing, z0, obs) = match setup {
        Ok(v) => v,
        Err(e) => return fail_all(&truth, e),
    };
    let x0 = g.forward(&z0).unwrap_or_default();
    let input_hash = hash_inputs(sensing.matrix().entries(), &obs.y, &x0);

    spec.solvers
        .iter()
        .map(|&kind| {
            let idx = SolverKind::ALL.iter().position(|&k| k == kind).expect("known solver");
            let mut rng = root.split(3 + idx as u64);
            let start = Instant::now();
            let outcome = Problem::new(&sensing, &obs, g)
                .and_then(|p| p.with_truth(&truth))
                .and_then(|p| kind.run(&p, spec.solver_config(kind), &z0, &mut rng));
            let wall = start.elapsed().as_secs_f64();
            summarize(spec, kind, m, seed, &truth, &input_hash, wall, outcome)
        })
        .collect()
}

/// Runs every trial of the sweep and returns records sorted by
/// `(solver name, m, seed)`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    run_experiment_with(spec, Execution::default())
}

pub fn run_experiment_with(spec: &ExperimentSpec, exec: Execution) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let g = spec.generator.build()?;
    let truths = Truths::load(spec, g.output_dim())?;
    let trials: Vec<(usize, u64)> = spec
        .m_values
        .iter()
        .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();

    let mut records: Vec<TrialRecord> = match exec {
        Execution::Sequential => trials
            .iter()
            .flat_map(|&(m, s)| run_trial(spec, &g, &truths, m, s))
            .collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel { threads } => {
            use rayon::prelude::*;
            let go = || -> Vec<TrialRecord> {
                trials
                    .par_iter()
                    .flat_map_iter(|&(m, s)| run_trial(spec, &g, &truths, m, s))
                    .collect()
            };
            match threads {
                None => go(),
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
                    .install(go),
            }
        }
    };
    sort_records(&mut records);
    Ok(records)
}

pub fn sort_records(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        (a.solver.name(), a.m, a.seed).cmp(&(b.solver.name(), b.m, b.seed))
    });
}

pub const CSV_HEADER: &str = "solver,m,seed,final_dist,per_pixel_error,ssim,wall_seconds";

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Renders the CSV (header plus one row per record in sorted order).
pub fn render_csv(records: &[TrialRecord], wall_clock: bool) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &sorted {
        let ssim = r.ssim.map(fmt_f64).unwrap_or_else(|| "NaN".into());
        let wall = if wall_clock { fmt_f64(r.wall_seconds) } else { String::new() };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.solver,
            r.m,
            r.seed,
            fmt_f64(r.final_dist),
            fmt_f64(r.per_pixel_error),
            ssim,
            wall
        ));
    }
    out
}

pub fn build_manifest(spec: &ExperimentSpec, records: &[TrialRecord]) -> Manifest {
    let mut trials = records.to_vec();
    sort_records(&mut trials);
    Manifest {
        library: env!("CARGO_PKG_NAME").into(),
        version: crate::VERSION.into(),
        spec: spec.clone(),
        trials,
    }
}

/// Writes the CSV and JSON manifest, creating parent directories.
pub fn emit_results(
    spec: &ExperimentSpec,
    records: &[TrialRecord],
    csv_path: &Path,
    json_path: &Path,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to emit".into()));
    }
    for p in [csv_path, json_path] {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(csv_path, render_csv(records, spec.metrics.wall_clock))
        .map_err(|e| Error::io(csv_path, e))?;
    let f = std::fs::File::create(json_path).map_err(|e| Error::io(json_path, e))?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &build_manifest(spec, records))?;
    w.write_all(b"\n").map_err(|e| Error::io(json_path, e))?;
    w.flush().map_err(|e| Error::io(json_path, e))
}
