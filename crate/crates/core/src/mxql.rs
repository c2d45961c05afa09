//! In-sample tabular value learning.
//!
//! `V` is fitted to in-dataset `Q(s, a)` targets with any [`LossSpec`], and
//! `Q` is fitted by least squares to `r + gamma V(s')`. The two steps
//! alternate until `V` stops moving. With the order-2 expanded loss the fixed
//! point is the behavior value; with the Gumbel loss it is the soft value.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::mdp::{OfflineDataset, TabularMdp};

pub const DEFAULT_V_STEPS: usize = 50;
pub const DEFAULT_OUTER_ITERATIONS: usize = 20_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QMode {
    ClosedForm,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VMode {
    /// Weighted mean of `Q(s, .)`; only valid for order-2 losses.
    ClosedFormN2,
    Gradient,
}

impl FromStr for QMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed_form" | "closed-form" => Ok(QMode::ClosedForm),
            "gradient" => Ok(QMode::Gradient),
            other => Err(Error::config(format!(
                "unknown q mode {other:?} (closed_form or gradient)"
            ))),
        }
    }
}

impl FromStr for VMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed_form_n2" | "closed-form-n2" => Ok(VMode::ClosedFormN2),
            "gradient" => Ok(VMode::Gradient),
            other => Err(Error::config(format!(
                "unknown v mode {other:?} (closed_form_n2 or gradient)"
            ))),
        }
    }
}

impl fmt::Display for QMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QMode::ClosedForm => "closed_form",
            QMode::Gradient => "gradient",
        })
    }
}

impl fmt::Display for VMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VMode::ClosedFormN2 => "closed_form_n2",
            VMode::Gradient => "gradient",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub v_steps: usize,
    pub q_steps: usize,
    pub q_mode: QMode,
    pub v_mode: VMode,
    pub lr_v: f64,
    pub lr_q: f64,
    pub outer_iterations: usize,
    pub tolerance: f64,
}

impl TrainConfig {
    /// Closed-form Q sweeps, gradient V fits, and a step size scaled to the
    /// loss temperature.
    pub fn new(loss: LossSpec) -> Self {
        TrainConfig {
            loss,
            v_steps: DEFAULT_V_STEPS,
            q_steps: DEFAULT_V_STEPS,
            q_mode: QMode::ClosedForm,
            v_mode: VMode::Gradient,
            lr_v: default_lr_v(&loss),
            lr_q: 0.25,
            outer_iterations: DEFAULT_OUTER_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.v_steps == 0 || self.q_steps == 0 || self.outer_iterations == 0 {
            return Err(Error::config("step and iteration counts must be positive"));
        }
        for (name, x) in [
            ("lr_v", self.lr_v),
            ("lr_q", self.lr_q),
            ("tolerance", self.tolerance),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {x}")));
            }
        }
        if self.v_mode == VMode::ClosedFormN2 && self.loss.order() != Some(2) {
            return Err(Error::config(format!(
                "closed-form V fits need an order-2 loss, got {}",
                self.loss.label()
            )));
        }
        Ok(())
    }
}

/// `0.02 beta^2`: the mean Gumbel loss has curvature `1 / beta^2` at its
/// minimizer, and more below it.
pub fn default_lr_v(loss: &LossSpec) -> f64 {
    match loss.beta() {
        Some(beta) => 0.02 * beta * beta,
        None => 0.05,
    }
}

/// Dataset-weighted empirical model: which pairs were logged, how often,
/// and where they led.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    num_states: usize,
    num_actions: usize,
    pair_weight: Vec<f64>,
    mean_reward: Vec<f64>,
    /// Per pair, `(next state, weight)`.
    next: Vec<Vec<(usize, f64)>>,
}

impl EmpiricalModel {
    pub fn from_dataset(dataset: &OfflineDataset) -> Result<Self> {
        let (ns, na) = (dataset.num_states, dataset.num_actions);
        let mut pair_weight = vec![0.0; ns * na];
        let mut reward_sum = vec![0.0; ns * na];
        let mut next_count = vec![vec![0.0; ns]; ns * na];
        for t in &dataset.transitions {
            if t.state >= ns || t.next_state >= ns || t.action >= na {
                return Err(Error::input(format!(
                    "transition {t:?} is outside the state/action space"
                )));
            }
            if !t.reward.is_finite() {
                return Err(Error::input(format!(
                    "transition {t:?} has a non-finite reward"
                )));
            }
            let i = t.state * na + t.action;
            pair_weight[i] += 1.0;
            reward_sum[i] += t.reward;
            next_count[i][t.next_state] += 1.0;
        }
        let mean_reward = reward_sum
            .iter()
            .zip(&pair_weight)
            .map(|(r, w)| if *w > 0.0 { r / w } else { 0.0 })
            .collect();
        let next = next_count
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .enumerate()
                    .filter(|(_, w)| *w > 0.0)
                    .collect()
            })
            .collect();
        Ok(EmpiricalModel {
            num_states: ns,
            num_actions: na,
            pair_weight,
            mean_reward,
            next,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn pair_weight(&self, s: usize, a: usize) -> f64 {
        self.pair_weight[s * self.num_actions + a]
    }

    fn state_weights(&self, s: usize) -> &[f64] {
        &self.pair_weight[s * self.num_actions..(s + 1) * self.num_actions]
    }

    fn state_logged(&self, s: usize) -> bool {
        self.state_weights(s).iter().any(|&w| w > 0.0)
    }

    /// Weighted mean of `r + gamma V(s')` over the transitions of `(s, a)`.
    fn target(&self, s: usize, a: usize, v: &[f64], gamma: f64) -> f64 {
        let i = s * self.num_actions + a;
        let ev: f64 =
            self.next[i].iter().map(|&(t, w)| w * v[t]).sum::<f64>() / self.pair_weight[i];
        self.mean_reward[i] + gamma * ev
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceKind {
    NonFinite,
    /// A value left the range any fixed point can occupy.
    Escaped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    /// Outer iteration, counted from 1.
    pub iteration: usize,
    pub state: usize,
    /// The offending residual `Q(s, a) - V(s)`.
    pub residual: f64,
    pub kind: DivergenceKind,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            DivergenceKind::NonFinite => "non-finite gradient",
            DivergenceKind::Escaped => "value escaped its bounds",
        };
        write!(
            f,
            "{what} at iteration {} in state {} (residual {})",
            self.iteration, self.state, self.residual
        )
    }
}

/// Fits `V` to `Q` with `steps` per-state gradient steps on the
/// dataset-weighted mean loss. States absent from the dataset are untouched.
/// The returned divergence has iteration 0; [`train`] fills it in.
pub fn v_step(
    v: &[f64],
    q: &[f64],
    model: &EmpiricalModel,
    loss: &LossSpec,
    lr: f64,
    steps: usize,
) -> std::result::Result<Vec<f64>, Divergence> {
    let na = model.num_actions;
    let mut out = v.to_vec();
    let mut residuals = vec![0.0; na];
    for s in 0..model.num_states {
        if !model.state_logged(s) {
            continue;
        }
        let weights = model.state_weights(s);
        let qs = &q[s * na..(s + 1) * na];
        for _ in 0..steps {
            for a in 0..na {
                residuals[a] = if weights[a] > 0.0 {
                    qs[a] - out[s]
                } else {
                    0.0
                };
            }
            let g = loss
                .weighted_batch_grad(&residuals, weights)
                .expect("logged state has positive weight");
            if !g.is_finite() {
                return Err(Divergence {
                    iteration: 0,
                    state: s,
                    residual: extreme_residual(&residuals, weights),
                    kind: DivergenceKind::NonFinite,
                });
            }
            out[s] -= lr * g;
        }
    }
    Ok(out)
}

fn extreme_residual(residuals: &[f64], weights: &[f64]) -> f64 {
    residuals
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&r, _)| r)
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0)
}

/// Order-2 closed form: each logged state's `V` becomes the weighted mean of
/// its `Q` values.
pub fn v_step_closed_form(v: &[f64], q: &[f64], model: &EmpiricalModel) -> Vec<f64> {
    let na = model.num_actions;
    let mut out = v.to_vec();
    for (s, vs) in out.iter_mut().enumerate() {
        let w = model.state_weights(s);
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            *vs = w
                .iter()
                .zip(&q[s * na..(s + 1) * na])
                .map(|(w, q)| w * q)
                .sum::<f64>()
                / total;
        }
    }
    out
}

/// Least-squares fit of `Q` to `r + gamma V(s')`. Pairs absent from the
/// dataset are untouched.
pub fn q_step(
    q: &[f64],
    v: &[f64],
    model: &EmpiricalModel,
    gamma: f64,
    mode: QMode,
    lr: f64,
    steps: usize,
) -> Vec<f64> {
    let na = model.num_actions;
    let mut out = q.to_vec();
    for s in 0..model.num_states {
        for a in 0..na {
            if model.pair_weight(s, a) == 0.0 {
                continue;
            }
            let target = model.target(s, a, v, gamma);
            let i = s * na + a;
            match mode {
                QMode::ClosedForm => out[i] = target,
                QMode::Gradient => {
                    // d/dQ of the mean of (target_k - Q)^2 is -2 (mean target - Q).
                    for _ in 0..steps {
                        out[i] += lr * 2.0 * (target - out[i]);
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub v: Vec<f64>,
    /// Row-major `S x A`.
    pub q: Vec<f64>,
    pub num_actions: usize,
    pub iterations: usize,
    pub converged: bool,
    pub v_loss: f64,
    pub q_loss: f64,
}

impl ValueTables {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub max_change: f64,
    pub v_loss: f64,
    pub q_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub tables: ValueTables,
    pub trace: Vec<TraceRow>,
    pub divergence: Option<Divergence>,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

/// Dataset-weighted mean of the V loss over all logged pairs.
pub fn v_loss(v: &[f64], q: &[f64], model: &EmpiricalModel, loss: &LossSpec) -> f64 {
    let na = model.num_actions;
    let residuals: Vec<f64> = q.iter().enumerate().map(|(i, q)| q - v[i / na]).collect();
    loss.weighted_batch_loss(&residuals, &model.pair_weight)
        .unwrap_or(f64::NAN)
}

/// Mean squared error of `Q` against `r + gamma V(s')` over all transitions.
pub fn q_loss(
    q: &[f64],
    v: &[f64],
    model: &EmpiricalModel,
    gamma: f64,
    dataset: &OfflineDataset,
) -> f64 {
    let na = model.num_actions;
    if dataset.is_empty() {
        return f64::NAN;
    }
    dataset
        .transitions
        .iter()
        .map(|t| {
            let e = t.reward + gamma * v[t.next_state] - q[t.state * na + t.action];
            e * e
        })
        .sum::<f64>()
        / dataset.len() as f64
}

/// Every fixed point lies in `[min(r,0), max(r,0)] / (1 - gamma)`; iterates
/// may overshoot by at most that width.
fn value_bounds(mdp: &TabularMdp) -> (f64, f64) {
    let (lo, hi) = mdp.reward_range();
    let scale = 1.0 - mdp.gamma();
    let (lo, hi) = (lo.min(0.0) / scale, hi.max(0.0) / scale);
    let width = hi - lo;
    (lo - width, hi + width)
}

/// Alternates a Q sweep and a V fit from zero tables until the largest change
/// in `V` falls below `config.tolerance`. On divergence the trace up to that
/// point is returned with the last finite tables.
pub fn train(
    mdp: &TabularMdp,
    dataset: &OfflineDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.num_states != mdp.num_states() || dataset.num_actions != mdp.num_actions() {
        return Err(Error::input(
            "dataset and MDP disagree on the state/action space",
        ));
    }
    let model = EmpiricalModel::from_dataset(dataset)?;
    let gamma = mdp.gamma();
    let (lo, hi) = value_bounds(mdp);
    let na = mdp.num_actions();
    let mut v = vec![0.0; mdp.num_states()];
    let mut q = vec![0.0; mdp.num_states() * na];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut divergence = None;
    for iteration in 1..=config.outer_iterations {
        let q_next = q_step(
            &q,
            &v,
            &model,
            gamma,
            config.q_mode,
            config.lr_q,
            config.q_steps,
        );
        let v_next = match config.v_mode {
            VMode::ClosedFormN2 => Ok(v_step_closed_form(&v, &q_next, &model)),
            VMode::Gradient => v_step(
                &v,
                &q_next,
                &model,
                &config.loss,
                config.lr_v,
                config.v_steps,
            ),
        };
        let v_next = match v_next {
            Ok(x) => x,
            Err(d) => {
                divergence = Some(Divergence { iteration, ..d });
                break;
            }
        };
        if let Some(s) = (0..v_next.len()).find(|&s| !(lo..=hi).contains(&v_next[s])) {
            let w = model.state_weights(s);
            let residuals: Vec<f64> = (0..na).map(|a| q_next[s * na + a] - v_next[s]).collect();
            divergence = Some(Divergence {
                iteration,
                state: s,
                residual: extreme_residual(&residuals, w),
                kind: if v_next[s].is_finite() {
                    DivergenceKind::Escaped
                } else {
                    DivergenceKind::NonFinite
                },
            });
            break;
        }
        let max_change = v_next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = v_next;
        q = q_next;
        trace.push(TraceRow {
            iteration,
            max_change,
            v_loss: v_loss(&v, &q, &model, &config.loss),
            q_loss: q_loss(&q, &v, &model, gamma, dataset),
        });
        if max_change < config.tolerance {
            converged = true;
            break;
        }
    }
    let (v_loss, q_loss) = trace
        .last()
        .map_or((f64::NAN, f64::NAN), |r| (r.v_loss, r.q_loss));
    Ok(TrainOutcome {
        tables: ValueTables {
            v,
            q,
            num_actions: na,
            iterations: trace.len(),
            converged,
            v_loss,
            q_loss,
        },
        trace,
        divergence,
    })
}

/// Independent runs over several configs, in parallel, in input order.
pub fn train_many(
    mdp: &TabularMdp,
    dataset: &OfflineDataset,
    configs: &[TrainConfig],
) -> Result<Vec<TrainOutcome>> {
    configs.par_iter().map(|c| train(mdp, dataset, c)).collect()
}
