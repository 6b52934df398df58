//! Phase retrieval solvers over the range of a generator.
//!
//! * [`appgd`]: alternating phase projected gradient descent. Each outer
//!   iteration estimates the phase `p = sign(Ax)`, takes one ambient gradient
//!   step on `‖y⊙p − Ax‖²` and projects the result back onto the range of `G`.
//! * [`apgd`]: alternating phase gradient descent. The phase is estimated the
//!   same way, then `‖y⊙p − A·G(z)‖²` is minimized directly over `z`.
//! * [`gd_baseline`]: plain gradient descent on `‖y − |A·G(z)|‖²` over `z`.
//!
//! All three run a fixed number of updates with no early exit and no
//! restarts. `sign(0)` is `+1` everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::generator::GeneratorNetwork;
use crate::metrics::dist_up_to_sign;
use crate::numerics::{axpy, norm_sq, sub, RngStream};
use crate::sensing::{Observation, SensingModel};

/// Where inner latent descent starts in each outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInit {
    /// A new uniform draw on the unit sphere every outer iteration.
    FreshRandom,
    /// The latent code found in the previous outer iteration.
    WarmStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Outer iterations `T`.
    pub outer_iters: usize,
    /// Inner latent-descent steps `T_in` per outer iteration.
    pub inner_iters: usize,
    /// Ambient gradient step size (APPGD only).
    pub eta: f64,
    /// Latent gradient step size.
    pub eta_in: f64,
    pub z_init: LatentInit,
    /// Ambient gradient steps taken before the first projection (APPGD).
    pub warmup_steps: usize,
    /// GD-baseline step budget; `outer_iters × inner_iters` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<usize>,
}

impl Default for SolverConfig {
    /// MNIST-scale settings: `η = 0.9`, `η_in = 0.01`, `T = 50`, `T_in = 500`.
    /// Fields missing from a config file take these values.
    fn default() -> Self {
        Self {
            outer_iters: 50,
            inner_iters: 500,
            eta: 0.9,
            eta_in: 0.01,
            z_init: LatentInit::FreshRandom,
            warmup_steps: 1,
            total_steps: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::InvalidArgument(
                "outer_iters and inner_iters must be >= 1".into(),
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite() && self.eta_in > 0.0 && self.eta_in.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step sizes must be positive and finite (eta={}, eta_in={})",
                self.eta, self.eta_in
            )));
        }
        if self.warmup_steps == 0 {
            return Err(Error::InvalidArgument("warmup_steps must be >= 1".into()));
        }
        if self.total_steps == Some(0) {
            return Err(Error::InvalidArgument("total_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn gd_budget(&self) -> usize {
        self.total_steps
            .unwrap_or(self.outer_iters * self.inner_iters)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Appgd,
    Apgd,
    Gd,
}

impl SolverKind {
    pub const ALL: [SolverKind; 3] = [SolverKind::Appgd, SolverKind::Apgd, SolverKind::Gd];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Appgd => "appgd",
            SolverKind::Apgd => "apgd",
            SolverKind::Gd => "gd",
        }
    }

    pub fn run(
        self,
        problem: &Problem<'_>,
        cfg: &SolverConfig,
        z0: &[f64],
        rng: &mut RngStream,
    ) -> Result<RecoveryResult> {
        match self {
            SolverKind::Appgd => appgd(problem, cfg, z0, rng),
            SolverKind::Apgd => apgd(problem, cfg, z0, rng),
            SolverKind::Gd => gd_baseline(problem, cfg, z0),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appgd" => Ok(SolverKind::Appgd),
            "apgd" => Ok(SolverKind::Apgd),
            "gd" => Ok(SolverKind::Gd),
            other => Err(Error::InvalidArgument(format!("unknown solver {other:?}"))),
        }
    }
}

/// Everything a solver reads. `truth` is only used for diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub sensing: &'a SensingModel,
    pub obs: &'a Observation,
    pub generator: &'a GeneratorNetwork,
    pub truth: Option<&'a [f64]>,
}

impl<'a> Problem<'a> {
    pub fn new(
        sensing: &'a SensingModel,
        obs: &'a Observation,
        generator: &'a GeneratorNetwork,
    ) -> Result<Self> {
        check_len("observation", obs.m(), sensing.m())?;
        check_len("generator output", generator.output_dim(), sensing.n())?;
        Ok(Self {
            sensing,
            obs,
            generator,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: &'a [f64]) -> Result<Self> {
        check_len("ground truth", truth.len(), self.sensing.n())?;
        self.truth = Some(truth);
        Ok(self)
    }
}

/// One outer iteration. `phase` is computed from `iterate`; `next` is
/// exactly `G(latent)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iterate: Vec<f64>,
    pub phase: Vec<f64>,
    /// Ambient point handed to the projection (APPGD only).
    pub pre_projection: Option<Vec<f64>>,
    pub next: Vec<f64>,
    pub latent: Vec<f64>,
    /// `‖y⊙p − A·iterate‖²`
    pub outer_loss: f64,
    pub dist: Option<f64>,
    pub next_dist: Option<f64>,
    /// `‖(p − s·p*)⊙y‖` with `s` the sign of the branch nearest the truth.
    pub phase_noise: Option<f64>,
    /// `next_dist / dist`
    pub contraction: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub solver: SolverKind,
    pub x_hat: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub trace: Vec<TraceEntry>,
}

impl RecoveryResult {
    pub fn outer_losses(&self) -> Vec<f64> {
        self.trace.iter().map(|e| e.outer_loss).collect()
    }
}

/// `sign(Ax)` with `sign(0) = +1`.
pub fn phase_update(sensing: &SensingModel, x: &[f64]) -> Result<Vec<f64>> {
    Ok(signs(&sensing.apply(x)?))
}

fn signs(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&u| if u >= 0.0 { 1.0 } else { -1.0 }).collect()
}

/// `x + η·Aᵀ(y⊙p − Ax)`
pub fn gradient_step(
    x: &[f64],
    sensing: &SensingModel,
    y: &[f64],
    p: &[f64],
    eta: f64,
) -> Result<Vec<f64>> {
    check_len("measurements", y.len(), sensing.m())?;
    check_len("phase", p.len(), sensing.m())?;
    let ax = sensing.apply(x)?;
    let resid: Vec<f64> = y.iter().zip(p).zip(&ax).map(|((y, p), a)| y * p - a).collect();
    let g = sensing.adjoint(&resid)?;
    let mut w = x.to_vec();
    axpy(eta, &g, &mut w);
    Ok(w)
}

/// Result of projecting an ambient vector onto the generator's range.
#[derive(Clone, Debug)]
pub struct Projection {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub loss: f64,
}

/// Approximates `argmin_z ‖w − G(z)‖²` by `inner_iters` gradient steps of
/// size `eta_in`, returning the lowest-loss latent seen.
///
/// The start is `warm` under [`LatentInit::WarmStart`] when given, and a
/// fresh unit-sphere draw from `rng` otherwise.
pub fn project(
    generator: &GeneratorNetwork,
    w: &[f64],
    cfg: &SolverConfig,
    rng: &mut RngStream,
    warm: Option<&[f64]>,
) -> Result<Projection> {
    check_len("projection target", w.len(), generator.output_dim())?;
    let z = start_latent(generator.latent_dim(), cfg.z_init, rng, warm)?;
    let (z, loss) = descend(z, cfg.inner_iters, cfg.eta_in, "projection", 0, |z| {
        generator.inner_loss_and_grad(z, w)
    })?;
    let x = generator.forward(&z)?;
    Ok(Projection { x, z, loss })
}

fn start_latent(
    k: usize,
    policy: LatentInit,
    rng: &mut RngStream,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match (policy, warm) {
        (LatentInit::WarmStart, Some(z)) => {
            check_len("warm-start latent", z.len(), k)?;
            Ok(z.to_vec())
        }
        _ => Ok(rng.unit_sphere(k)),
    }
}

/// Fixed-step gradient descent tracking the best point. The loss at the
/// final iterate is evaluated too, so `steps` updates cost `steps + 1`
/// evaluations. `offset` shifts reported step indices.
fn descend<F>(
    mut z: Vec<f64>,
    steps: usize,
    lr: f64,
    stage: &'static str,
    offset: usize,
    mut loss_and_grad: F,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut best_loss = f64::INFINITY;
    let mut best_z = z.clone();
    for step in 0..=steps {
        let (loss, grad) = loss_and_grad(&z)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                stage,
                step: offset + step,
                loss,
            });
        }
        if loss < best_loss {
            best_loss = loss;
            best_z.copy_from_slice(&z);
        }
        if step < steps {
            axpy(-lr, &grad, &mut z);
        }
    }
    Ok((best_z, best_loss))
}

/// Reference quantities for diagnostics, computed once per solve.
struct Diagnostics<'a> {
    truth: &'a [f64],
    true_phase: Vec<f64>,
}

impl<'a> Diagnostics<'a> {
    fn new(problem: &Problem<'a>) -> Result<Option<Self>> {
        problem
            .truth
            .map(|truth| {
                Ok(Diagnostics {
                    truth,
                    true_phase: phase_update(problem.sensing, truth)?,
                })
            })
            .transpose()
    }

    fn phase_noise(&self, x: &[f64], p: &[f64], y: &[f64]) -> f64 {
        let minus = norm_sq(&sub(x, self.truth));
        let plus: f64 = x.iter().zip(self.truth).map(|(a, b)| (a + b) * (a + b)).sum();
        let s = if minus <= plus { 1.0 } else { -1.0 };
        p.iter()
            .zip(&self.true_phase)
            .zip(y)
            .map(|((p, q), y)| ((p - s * q) * y).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn outer_loss(sensing: &SensingModel, x: &[f64], y: &[f64], p: &[f64]) -> Result<f64> {
    let ax = sensing.apply(x)?;
    Ok(y.iter()
        .zip(p)
        .zip(&ax)
        .map(|((y, p), a)| (y * p - a).powi(2))
        .sum())
}

fn build_entry(
    problem: &Problem<'_>,
    diag: Option<&Diagnostics<'_>>,
    iterate: Vec<f64>,
    phase: Vec<f64>,
    pre_projection: Option<Vec<f64>>,
    next: Vec<f64>,
    latent: Vec<f64>,
) -> Result<TraceEntry> {
    let y = &problem.obs.y;
    let loss = outer_loss(problem.sensing, &iterate, y, &phase)?;
    let (dist, next_dist, phase_noise, contraction) = match diag {
        Some(d) => {
            let a = dist_up_to_sign(&iterate, d.truth)?;
            let b = dist_up_to_sign(&next, d.truth)?;
            let ratio = if a > 0.0 { Some(b / a) } else { None };
            (Some(a), Some(b), Some(d.phase_noise(&iterate, &phase, y)), ratio)
        }
        None => (None, None, None, None),
    };
    Ok(TraceEntry {
        iterate,
        phase,
        pre_projection,
        next,
        latent,
        outer_loss: loss,
        dist,
        next_dist,
        phase_noise,
        contraction,
    })
}

fn check_start(problem: &Problem<'_>, cfg: &SolverConfig, z0: &[f64]) -> Result<()> {
    cfg.validate()?;
    check_len("initial latent", z0.len(), problem.generator.latent_dim())
}

/// Alternating phase projected gradient descent, starting from `x_0 = G(z0)`.
pub fn appgd(
    problem: &Problem<'_>,
    cfg: &SolverConfig,
    z0: &[f64],
    rng: &mut RngStream,
) -> Result<RecoveryResult> {
    check_start(problem, cfg, z0)?;
    let diag = Diagnostics::new(problem)?;
    let (s, y, g) = (problem.sensing, &problem.obs.y, problem.generator);

    let mut z = z0.to_vec();
    let mut x = g.forward(&z)?;
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    for t in 0..cfg.outer_iters {
        let p = phase_update(s, &x)?;
        let steps = if t == 0 { cfg.warmup_steps } else { 1 };
        let mut w = x.clone();
        for _ in 0..steps {
            w = gradient_step(&w, s, y, &p, cfg.eta)?;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                stage: "appgd gradient step",
                step: t,
                loss: f64::NAN,
            });
        }
        let proj = project(g, &w, cfg, rng, Some(&z)).map_err(|e| match e {
            Error::Divergence { step, loss, .. } => Error::Divergence {
                stage: "appgd projection",
                step: t * (cfg.inner_iters + 1) + step,
                loss,
            },
            other => other,
        })?;
        let entry = build_entry(
            problem,
            diag.as_ref(),
            std::mem::take(&mut x),
            p,
            Some(w),
            proj.x.clone(),
            proj.z.clone(),
        )?;
        trace.push(entry);
        x = proj.x;
        z = proj.z;
    }
    Ok(RecoveryResult {
        solver: SolverKind::Appgd,
        x_hat: x,
        z_hat: z,
        trace,
    })
}

/// Gradient of `‖target − A·G(z)‖²` in `z`.
fn measurement_loss_and_grad(
    problem: &Problem<'_>,
    target: &[f64],
    z: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let g = problem.generator;
    let cache = g.forward_cached(z)?;
    let agz = problem.sensing.apply(&cache.output)?;
    let resid = sub(target, &agz);
    let loss = norm_sq(&resid);
    let back = problem.sensing.adjoint(&resid)?;
    let mut grad = g.backward(&cache, &back, false)?.0;
    grad.iter_mut().for_each(|v| *v *= -2.0);
    Ok((loss, grad))
}

/// Public entry to the APGD inner objective, for gradient checks.
pub fn apgd_inner_loss_and_grad(
    problem: &Problem<'_>,
    phase: &[f64],
    z: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_len("phase", phase.len(), problem.sensing.m())?;
    let target: Vec<f64> = problem.obs.y.iter().zip(phase).map(|(y, p)| y * p).collect();
    measurement_loss_and_grad(problem, &target, z)
}

/// Alternating phase gradient descent, starting from `x_0 = G(z0)`.
pub fn apgd(
    problem: &Problem<'_>,
    cfg: &SolverConfig,
    z0: &[f64],
    rng: &mut RngStream,
) -> Result<RecoveryResult> {
    check_start(problem, cfg, z0)?;
    let diag = Diagnostics::new(problem)?;
    let (s, y, g) = (problem.sensing, &problem.obs.y, problem.generator);

    let mut z = z0.to_vec();
    let mut x = g.forward(&z)?;
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    for t in 0..cfg.outer_iters {
        let p = phase_update(s, &x)?;
        let target: Vec<f64> = y.iter().zip(&p).map(|(y, p)| y * p).collect();
        let start = start_latent(g.latent_dim(), cfg.z_init, rng, Some(&z))?;
        let (z_next, _) = descend(
            start,
            cfg.inner_iters,
            cfg.eta_in,
            "apgd inner descent",
            t * (cfg.inner_iters + 1),
            |z| measurement_loss_and_grad(problem, &target, z),
        )?;
        let x_next = g.forward(&z_next)?;
        let entry = build_entry(
            problem,
            diag.as_ref(),
            std::mem::take(&mut x),
            p,
            None,
            x_next.clone(),
            z_next.clone(),
        )?;
        trace.push(entry);
        x = x_next;
        z = z_next;
    }
    Ok(RecoveryResult {
        solver: SolverKind::Apgd,
        x_hat: x,
        z_hat: z,
        trace,
    })
}

/// `‖y − |A·G(z)|‖²` and its gradient, using `d|u|/du = sign(u)`.
pub fn magnitude_loss_and_grad(problem: &Problem<'_>, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let g = problem.generator;
    let cache = g.forward_cached(z)?;
    let u = problem.sensing.apply(&cache.output)?;
    let mut loss = 0.0;
    let weighted: Vec<f64> = problem
        .obs
        .y
        .iter()
        .zip(&u)
        .map(|(&y, &u)| {
            let r = y - u.abs();
            loss += r * r;
            if u >= 0.0 {
                r
            } else {
                -r
            }
        })
        .collect();
    let back = problem.sensing.adjoint(&weighted)?;
    let mut grad = g.backward(&cache, &back, false)?.0;
    grad.iter_mut().for_each(|v| *v *= -2.0);
    Ok((loss, grad))
}

/// Latent gradient descent on the magnitude loss for `cfg.gd_budget()`
/// steps. The trace holds one entry per block of `inner_iters` steps.
pub fn gd_baseline(
    problem: &Problem<'_>,
    cfg: &SolverConfig,
    z0: &[f64],
) -> Result<RecoveryResult> {
    check_start(problem, cfg, z0)?;
    let diag = Diagnostics::new(problem)?;
    let g = problem.generator;
    let budget = cfg.gd_budget();

    let mut z = z0.to_vec();
    let mut x = g.forward(&z)?;
    let mut best_z = z.clone();
    let mut best_loss = f64::INFINITY;
    let mut trace = Vec::new();
    let mut done = 0;
    while done < budget {
        let block = cfg.inner_iters.min(budget - done);
        let p = phase_update(problem.sensing, &x)?;
        for step in 0..block {
            let (loss, grad) = magnitude_loss_and_grad(problem, &z)?;
            if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    stage: "gd baseline",
                    step: done + step,
                    loss,
                });
            }
            if loss < best_loss {
                best_loss = loss;
                best_z.copy_from_slice(&z);
            }
            axpy(-cfg.eta_in, &grad, &mut z);
        }
        done += block;
        let x_next = g.forward(&z)?;
        let entry = build_entry(
            problem,
            diag.as_ref(),
            std::mem::take(&mut x),
            p,
            None,
            x_next.clone(),
            z.clone(),
        )?;
        trace.push(entry);
        x = x_next;
    }
    let (final_loss, _) = magnitude_loss_and_grad(problem, &z)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            stage: "gd baseline",
            step: budget,
            loss: final_loss,
        });
    }
    if final_loss < best_loss {
        best_z = z;
    }
    let x_hat = g.forward(&best_z)?;
    Ok(RecoveryResult {
        solver: SolverKind::Gd,
        x_hat,
        z_hat: best_z,
        trace,
    })
}

/// Draws the shared initial latent: uniform on the unit sphere.
pub fn initial_latent(k: usize, rng: &mut RngStream) -> Vec<f64> {
    rng.unit_sphere(k)
}

/// Median of the finite values, or `None` if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}
