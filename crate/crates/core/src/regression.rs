//! Scalar Gumbel regression under matched and mismatched temperatures.
//!
//! Data are drawn as `x_i ~ -G(0, beta_data)` and a single parameter `h` is
//! fitted by minibatch SGD on a loss with temperature `beta_reg`. The
//! reference value is the exact minimizer of the empirical Gumbel loss,
//! `beta_reg * log mean exp(x_i / beta_reg)`.
//!
//! A repeat diverges when `h` or a gradient becomes non-finite, or when `h`
//! escapes the hull of the data and the starting point, widened on each side
//! by the hull's own width. Every minimizer of the supported losses lies
//! inside the data hull, so an escape of that size is a collapse, not a
//! transient overshoot.

use rand::Rng;
use rayon::prelude::*;

use crate::distributions::{sample_gumbel, GumbelParams};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::rng::{stream_rng, ExperimentRng};
use crate::stats;

/// Stream index reserved for the shared dataset when repeats reuse one.
const SHARED_DATA_STREAM: u64 = u64::MAX;

pub const DEFAULT_BETAS: [f64; 3] = [0.5, 2.0, 10.0];
pub const DEFAULT_CHECKPOINTS: [usize; 5] = [10, 100, 500, 1000, 2000];

/// How the reference value `h*` is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetDefinition {
    /// `beta * log mean exp(x / beta)`, the minimizer of the empirical Gumbel loss.
    Minimizer,
    /// `log sum exp(x / beta)` without the temperature factor or the
    /// mean; kept for comparison with figures that plot it.
    UnscaledLogSum,
}

impl TargetDefinition {
    pub fn name(self) -> &'static str {
        match self {
            TargetDefinition::Minimizer => "minimizer",
            TargetDefinition::UnscaledLogSum => "unscaled-logsum",
        }
    }
}

impl std::str::FromStr for TargetDefinition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimizer" => Ok(TargetDefinition::Minimizer),
            "unscaled-logsum" => Ok(TargetDefinition::UnscaledLogSum),
            other => Err(Error::config(format!(
                "unknown target {other:?} (expected minimizer or unscaled-logsum)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionConfig {
    pub beta_data: f64,
    pub beta_reg: f64,
    /// Its temperature must equal `beta_reg`.
    pub loss: LossSpec,
    pub n_data: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Update counts at which `|h - h*|` is recorded; strictly ascending.
    pub checkpoints: Vec<usize>,
    pub repeats: usize,
    pub master_seed: u64,
    pub initial_h: f64,
    pub target: TargetDefinition,
    /// Reuse one dataset for every repeat instead of drawing a fresh one.
    pub shared_dataset: bool,
}

impl RegressionConfig {
    /// Defaults: 10 000 points, lr 0.02, batch 32, 100 repeats,
    /// checkpoints 10/100/500/1000/2000, `h` starting at 0.
    pub fn new(beta_data: f64, loss: LossSpec) -> Result<Self> {
        let beta_reg = loss
            .beta()
            .ok_or_else(|| Error::config("regression loss needs a temperature"))?;
        let cfg = RegressionConfig {
            beta_data,
            beta_reg,
            loss,
            n_data: 10_000,
            lr: 0.02,
            batch_size: 32,
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            repeats: 100,
            master_seed: crate::rng::DEFAULT_SEED,
            initial_h: 0.0,
            target: TargetDefinition::Minimizer,
            shared_dataset: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        for (name, v) in [
            ("beta_data", self.beta_data),
            ("beta_reg", self.beta_reg),
            ("lr", self.lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(b) = self.loss.beta() {
            if b != self.beta_reg {
                return Err(Error::config(format!(
                    "loss temperature {b} differs from beta_reg {}",
                    self.beta_reg
                )));
            }
        }
        if self.n_data == 0 || self.batch_size == 0 || self.repeats == 0 {
            return Err(Error::config(
                "n_data, batch_size and repeats must be positive",
            ));
        }
        if self.checkpoints.is_empty() || self.checkpoints[0] == 0 {
            return Err(Error::config("checkpoints must be positive update counts"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("checkpoints must be strictly ascending"));
        }
        if !self.initial_h.is_finite() {
            return Err(Error::config("initial h must be finite"));
        }
        Ok(())
    }

    pub fn updates(&self) -> usize {
        *self.checkpoints.last().expect("validated nonempty")
    }

    /// The same protocol with another cell's temperatures.
    pub fn for_cell(&self, beta_data: f64, beta_reg: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.beta_data = beta_data;
        cfg.beta_reg = beta_reg;
        cfg.loss = self.loss.with_beta(beta_reg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `n` draws from `-G(0, beta_data)`.
pub fn generate_data(beta_data: f64, n: usize, rng: &mut ExperimentRng) -> Result<Vec<f64>> {
    let params = GumbelParams::new(0.0, beta_data, true)?;
    Ok((0..n).map(|_| sample_gumbel(&params, rng)).collect())
}

/// `beta * log((1/N) sum exp(x_i / beta))`, max-shifted.
pub fn target_value(data: &[f64], beta_reg: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("target value of an empty dataset"));
    }
    if !(beta_reg.is_finite() && beta_reg > 0.0) {
        return Err(Error::config(format!(
            "beta_reg must be positive, got {beta_reg}"
        )));
    }
    Ok(beta_reg * (log_sum_exp_scaled(data, beta_reg) - (data.len() as f64).ln()))
}

/// `log sum exp(x_i / beta)` without the temperature factor or the mean.
pub fn unscaled_logsum_target(data: &[f64], beta_reg: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("target value of an empty dataset"));
    }
    Ok(log_sum_exp_scaled(data, beta_reg))
}

fn log_sum_exp_scaled(data: &[f64], beta: f64) -> f64 {
    let m = data
        .iter()
        .map(|x| x / beta)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = data.iter().map(|x| (x / beta - m).exp()).sum();
    m + s.ln()
}

pub fn target_for(def: TargetDefinition, data: &[f64], beta_reg: f64) -> Result<f64> {
    match def {
        TargetDefinition::Minimizer => target_value(data, beta_reg),
        TargetDefinition::UnscaledLogSum => unscaled_logsum_target(data, beta_reg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceKind {
    NonFinite,
    /// `h` left the widened data hull.
    Escaped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Divergence {
    /// 1-based update at which the run stopped.
    pub update: usize,
    pub kind: DivergenceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatOutcome {
    pub repeat_index: usize,
    pub target: f64,
    /// `|h - h*|` per checkpoint; `None` once the run has diverged.
    pub errors: Vec<Option<f64>>,
    pub divergence: Option<Divergence>,
    pub final_h: f64,
}

impl RepeatOutcome {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

/// Region outside of which an iterate counts as escaped.
#[derive(Debug, Clone, Copy)]
struct SafeRegion {
    lo: f64,
    hi: f64,
}

impl SafeRegion {
    fn around(data: &[f64], start: f64) -> Self {
        let (mut lo, mut hi) = (start, start);
        for &x in data {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        let width = hi - lo;
        SafeRegion {
            lo: lo - width,
            hi: hi + width,
        }
    }

    fn contains(&self, h: f64) -> bool {
        h >= self.lo && h <= self.hi
    }
}

fn draw_dataset(cfg: &RegressionConfig, repeat_rng: &mut ExperimentRng) -> Result<Vec<f64>> {
    if cfg.shared_dataset {
        let mut rng = stream_rng(cfg.master_seed, SHARED_DATA_STREAM);
        generate_data(cfg.beta_data, cfg.n_data, &mut rng)
    } else {
        generate_data(cfg.beta_data, cfg.n_data, repeat_rng)
    }
}

/// One SGD run from `initial_h`, recording `|h - h*|` at each checkpoint.
pub fn run_repeat(cfg: &RegressionConfig, repeat_index: usize) -> Result<RepeatOutcome> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.master_seed, repeat_index as u64);
    let data = draw_dataset(cfg, &mut rng)?;
    let target = target_for(cfg.target, &data, cfg.beta_reg)?;
    let region = SafeRegion::around(&data, cfg.initial_h);

    let mut h = cfg.initial_h;
    let mut errors = Vec::with_capacity(cfg.checkpoints.len());
    let mut next_checkpoint = 0;
    let mut batch = vec![0.0; cfg.batch_size];
    let mut divergence = None;

    for update in 1..=cfg.updates() {
        for r in batch.iter_mut() {
            *r = data[rng.gen_range(0..data.len())] - h;
        }
        let grad = cfg.loss.batch_grad(&batch)?;
        let next = h - cfg.lr * grad;
        if !grad.is_finite() || !next.is_finite() {
            divergence = Some(Divergence {
                update,
                kind: DivergenceKind::NonFinite,
            });
            break;
        }
        h = next;
        if !region.contains(h) {
            divergence = Some(Divergence {
                update,
                kind: DivergenceKind::Escaped,
            });
            break;
        }
        if update == cfg.checkpoints[next_checkpoint] {
            errors.push(Some((h - target).abs()));
            next_checkpoint += 1;
        }
    }
    errors.resize(cfg.checkpoints.len(), None);
    Ok(RepeatOutcome {
        repeat_index,
        target,
        errors,
        divergence,
        final_h: h,
    })
}

/// Aggregate at one checkpoint over the repeats still running there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointStats {
    pub checkpoint: usize,
    /// `None` when every repeat has diverged.
    pub mean_abs_error: Option<f64>,
    /// `None` with fewer than two surviving repeats.
    pub std_abs_error: Option<f64>,
    pub diverged: usize,
    pub repeats: usize,
}

impl CheckpointStats {
    pub fn all_diverged(&self) -> bool {
        self.diverged == self.repeats
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTrace {
    pub config: RegressionConfig,
    pub repeats: Vec<RepeatOutcome>,
    pub checkpoints: Vec<CheckpointStats>,
}

impl RegressionTrace {
    pub fn divergence_count(&self) -> usize {
        self.repeats.iter().filter(|r| r.diverged()).count()
    }

    pub fn final_stats(&self) -> &CheckpointStats {
        self.checkpoints.last().expect("validated nonempty")
    }

    pub fn stats_at(&self, checkpoint: usize) -> Option<&CheckpointStats> {
        self.checkpoints.iter().find(|c| c.checkpoint == checkpoint)
    }
}

pub fn aggregate(cfg: &RegressionConfig, repeats: &[RepeatOutcome]) -> Vec<CheckpointStats> {
    cfg.checkpoints
        .iter()
        .enumerate()
        .map(|(i, &checkpoint)| {
            let errs: Vec<f64> = repeats.iter().filter_map(|r| r.errors[i]).collect();
            let mean_abs_error = stats::mean(&errs).ok();
            let std_abs_error = stats::summarize(&errs).ok().map(|s| s.std);
            CheckpointStats {
                checkpoint,
                mean_abs_error,
                std_abs_error,
                diverged: repeats.len() - errs.len(),
                repeats: repeats.len(),
            }
        })
        .collect()
}

/// All repeats of one cell. Repeats run in parallel; each owns the stream
/// `(master_seed, repeat_index)`, so the result does not depend on scheduling.
pub fn run_cell(cfg: &RegressionConfig) -> Result<RegressionTrace> {
    cfg.validate()?;
    let repeats = (0..cfg.repeats)
        .into_par_iter()
        .map(|i| run_repeat(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let checkpoints = aggregate(cfg, &repeats);
    Ok(RegressionTrace {
        config: cfg.clone(),
        repeats,
        checkpoints,
    })
}

/// Every `(beta_data, beta_reg)` cell, `beta_data` outermost.
pub fn run_experiment(
    base: &RegressionConfig,
    betas_data: &[f64],
    betas_reg: &[f64],
) -> Result<Vec<RegressionTrace>> {
    let mut out = Vec::with_capacity(betas_data.len() * betas_reg.len());
    for &bd in betas_data {
        for &br in betas_reg {
            out.push(run_cell(&base.for_cell(bd, br)?)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOutcome {
    pub h: f64,
    pub updates: usize,
    pub diverged: bool,
}

/// Plain gradient descent on the full-batch mean loss.
pub fn full_batch_descent(
    data: &[f64],
    loss: &LossSpec,
    lr: f64,
    updates: usize,
    initial_h: f64,
) -> Result<DescentOutcome> {
    loss.validate()?;
    if data.is_empty() {
        return Err(Error::input("full-batch descent on an empty dataset"));
    }
    let mut h = initial_h;
    let mut residuals = vec![0.0; data.len()];
    for update in 1..=updates {
        for (r, x) in residuals.iter_mut().zip(data) {
            *r = x - h;
        }
        let next = h - lr * loss.batch_grad(&residuals)?;
        if !next.is_finite() {
            return Ok(DescentOutcome {
                h,
                updates: update,
                diverged: true,
            });
        }
        h = next;
    }
    Ok(DescentOutcome {
        h,
        updates,
        diverged: false,
    })
}
