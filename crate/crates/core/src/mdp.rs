//! Finite MDPs with a fixed behavior policy.
//!
//! Two exact oracles are provided: the behavior value `V^mu` (a direct linear
//! solve of the evaluation equation) and the soft value
//! `V*(s) = beta log sum_a mu(a|s) exp(Q(s,a) / beta)` (fixed-point iteration,
//! a gamma-contraction).

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::ExperimentRng;

const ROW_TOLERANCE: f64 = 1e-12;

/// Soft-value iteration stops once the sup-norm change drops below this.
pub const SOFT_VALUE_TOLERANCE: f64 = 1e-12;
const SOFT_VALUE_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// `P(s' | s, a)` at `(s * A + a) * S + s'`.
    transition: Vec<f64>,
    /// `r(s, a)` at `s * A + a`.
    reward: Vec<f64>,
    gamma: f64,
    /// `mu(a | s)` at `s * A + a`.
    behavior: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        behavior: Vec<f64>,
    ) -> Result<Self> {
        let (s, a) = (num_states, num_actions);
        if s == 0 || a == 0 {
            return Err(Error::config(
                "an MDP needs at least one state and one action",
            ));
        }
        if transition.len() != s * a * s {
            return Err(Error::config(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                s * a * s
            )));
        }
        if reward.len() != s * a || behavior.len() != s * a {
            return Err(Error::config(format!(
                "reward and policy tables need {} entries",
                s * a
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::config("rewards must be finite"));
        }
        for (i, row) in transition.chunks(s).enumerate() {
            check_distribution(row).map_err(|m| {
                Error::config(format!("transition row (s={}, a={}): {m}", i / a, i % a))
            })?;
        }
        for (i, row) in behavior.chunks(a).enumerate() {
            check_distribution(row).map_err(|m| Error::config(format!("policy row s={i}: {m}")))?;
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            transition,
            reward,
            gamma,
            behavior,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn policy(&self, s: usize, a: usize) -> f64 {
        self.behavior[s * self.num_actions + a]
    }

    /// Smallest and largest reward.
    pub fn reward_range(&self) -> (f64, f64) {
        self.reward
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(r), hi.max(r))
            })
    }

    /// `r(s, a) + gamma sum_s' P(s'|s,a) V(s')` for every pair.
    pub fn backup(&self, v: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.num_states * self.num_actions];
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let ev: f64 = self
                    .transition_row(s, a)
                    .iter()
                    .zip(v)
                    .map(|(p, x)| p * x)
                    .sum();
                q[s * self.num_actions + a] = self.reward(s, a) + self.gamma * ev;
            }
        }
        q
    }

    /// State-to-state transition matrix under the behavior policy, row-major.
    pub fn policy_transition(&self) -> Vec<f64> {
        let n = self.num_states;
        let mut m = vec![0.0; n * n];
        for s in 0..n {
            for a in 0..self.num_actions {
                let w = self.policy(s, a);
                for (t, p) in self.transition_row(s, a).iter().enumerate() {
                    m[s * n + t] += w * p;
                }
            }
        }
        m
    }

    pub fn policy_reward(&self) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|a| self.policy(s, a) * self.reward(s, a))
                    .sum()
            })
            .collect()
    }

    /// Sup-norm of `V - (r^mu + gamma P^mu V)`.
    pub fn evaluation_residual(&self, v: &[f64]) -> f64 {
        let p = self.policy_transition();
        let r = self.policy_reward();
        let n = self.num_states;
        (0..n)
            .map(|s| {
                let pv: f64 = (0..n).map(|t| p[s * n + t] * v[t]).sum();
                (v[s] - r[s] - self.gamma * pv).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Parses the plain-text format written by [`TabularMdp::to_text`].
    ///
    /// ```text
    /// # comment
    /// states = 2
    /// actions = 1
    /// gamma = 0.9
    /// transition = 0 1  1 0     # S*A*S values, ordered (s, a, s')
    /// reward = 1 0              # S*A values, ordered (s, a)
    /// policy = 1 1              # S*A values, ordered (s, a)
    /// ```
    ///
    /// Numbers may be separated by whitespace or commas.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut states = None;
        let mut actions = None;
        let mut gamma = None;
        let mut transition = None;
        let mut reward = None;
        let mut policy = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let numbers = || parse_numbers(value, line_no);
            let count = || -> Result<usize> {
                value.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("expected a count, got {:?}", value.trim()),
                })
            };
            match key.trim() {
                "states" => states = Some(count()?),
                "actions" => actions = Some(count()?),
                "gamma" => {
                    gamma = Some(value.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad gamma {:?}", value.trim()),
                    })?)
                }
                "transition" => transition = Some(numbers()?),
                "reward" => reward = Some(numbers()?),
                "policy" => policy = Some(numbers()?),
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        let missing = |k: &str| Error::Parse {
            line: 0,
            message: format!("missing key {k:?}"),
        };
        TabularMdp::new(
            states.ok_or_else(|| missing("states"))?,
            actions.ok_or_else(|| missing("actions"))?,
            transition.ok_or_else(|| missing("transition"))?,
            reward.ok_or_else(|| missing("reward"))?,
            gamma.ok_or_else(|| missing("gamma"))?,
            policy.ok_or_else(|| missing("policy"))?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let join = |xs: &[f64]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        writeln!(out, "states = {}", self.num_states).unwrap();
        writeln!(out, "actions = {}", self.num_actions).unwrap();
        writeln!(out, "gamma = {}", self.gamma).unwrap();
        writeln!(out, "transition = {}", join(&self.transition)).unwrap();
        writeln!(out, "reward = {}", join(&self.reward)).unwrap();
        writeln!(out, "policy = {}", join(&self.behavior)).unwrap();
        out
    }
}

fn parse_numbers(value: &str, line: usize) -> Result<Vec<f64>> {
    value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("bad number {t:?}"),
            })
        })
        .collect()
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err("probabilities must be finite and nonnegative".into());
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(format!("sums to {total}, not 1"));
    }
    Ok(())
}

/// `V^mu`, solving `(I - gamma P^mu) V = r^mu` by Gaussian elimination with
/// partial pivoting.
pub fn behavior_value(mdp: &TabularMdp) -> Vec<f64> {
    let n = mdp.num_states();
    let p = mdp.policy_transition();
    let mut m: Vec<f64> = (0..n * n)
        .map(|i| {
            let (r, c) = (i / n, i % n);
            (if r == c { 1.0 } else { 0.0 }) - mdp.gamma() * p[i]
        })
        .collect();
    let mut b = mdp.policy_reward();
    solve_in_place(&mut m, &mut b, n);
    b
}

// I - gamma P is strictly diagonally dominant for gamma < 1, so no pivot
// is ever zero.
fn solve_in_place(m: &mut [f64], b: &mut [f64], n: usize) {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .expect("nonempty range");
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| m[row * n + k] * b[k]).sum();
        b[row] = (b[row] - tail) / m[row * n + row];
    }
}

/// `beta log sum_a w_a exp(q_a / beta)` over the actions with positive weight.
pub fn soft_max_weighted(q: &[f64], w: &[f64], beta: f64) -> f64 {
    let m = q
        .iter()
        .zip(w)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&q, _)| q / beta)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = q
        .iter()
        .zip(w)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&q, &w)| w * (q / beta - m).exp())
        .sum();
    beta * (m + s.ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftValues {
    pub v: Vec<f64>,
    /// Row-major `S x A`.
    pub q: Vec<f64>,
    pub iterations: usize,
}

/// Soft value under the behavior policy at temperature `beta`.
pub fn soft_value(mdp: &TabularMdp, beta: f64) -> Result<SoftValues> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::config(format!("beta must be positive, got {beta}")));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut v = vec![0.0; ns];
    for iteration in 1..=SOFT_VALUE_MAX_ITERATIONS {
        let q = mdp.backup(&v);
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                soft_max_weighted(
                    &q[s * na..(s + 1) * na],
                    &mdp.behavior[s * na..(s + 1) * na],
                    beta,
                )
            })
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change < SOFT_VALUE_TOLERANCE {
            let q = mdp.backup(&v);
            return Ok(SoftValues {
                v,
                q,
                iterations: iteration,
            });
        }
    }
    Err(Error::input("soft value iteration did not converge"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Logged transitions; repeated entries carry the empirical weight.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub num_states: usize,
    pub num_actions: usize,
    pub transitions: Vec<Transition>,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Multiplicity of every `(s, a)` pair, row-major.
    pub fn pair_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_states * self.num_actions];
        for t in &self.transitions {
            c[t.state * self.num_actions + t.action] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    /// Every `(s, a, s')` with count `round(size / S * mu(a|s) P(s'|s,a))`.
    Exhaustive { size: usize },
    /// `episodes` trajectories of `horizon` steps from `start_state`,
    /// following the behavior policy.
    Rollout {
        episodes: usize,
        horizon: usize,
        start_state: usize,
    },
}

pub fn generate_dataset(
    mdp: &TabularMdp,
    mode: DatasetMode,
    rng: &mut ExperimentRng,
) -> Result<OfflineDataset> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut transitions = Vec::new();
    match mode {
        DatasetMode::Exhaustive { size } => {
            let per_state = size as f64 / ns as f64;
            for s in 0..ns {
                for a in 0..na {
                    for next in 0..ns {
                        let p = mdp.policy(s, a) * mdp.transition(s, a, next);
                        if p == 0.0 {
                            continue;
                        }
                        let count = (per_state * p).round() as usize;
                        if count == 0 {
                            return Err(Error::config(format!(
                                "exhaustive dataset of size {size} cannot cover (s={s}, a={a}, s'={next}) with probability {p}"
                            )));
                        }
                        let t = Transition {
                            state: s,
                            action: a,
                            reward: mdp.reward(s, a),
                            next_state: next,
                        };
                        transitions.extend(std::iter::repeat_n(t, count));
                    }
                }
            }
        }
        DatasetMode::Rollout {
            episodes,
            horizon,
            start_state,
        } => {
            if start_state >= ns {
                return Err(Error::config(format!(
                    "start state {start_state} out of range"
                )));
            }
            transitions.reserve(episodes * horizon);
            for _ in 0..episodes {
                let mut s = start_state;
                for _ in 0..horizon {
                    let a = sample_index(rng, &mdp.behavior[s * na..(s + 1) * na]);
                    let next = sample_index(rng, mdp.transition_row(s, a));
                    transitions.push(Transition {
                        state: s,
                        action: a,
                        reward: mdp.reward(s, a),
                        next_state: next,
                    });
                    s = next;
                }
            }
        }
    }
    Ok(OfflineDataset {
        num_states: ns,
        num_actions: na,
        transitions,
    })
}

// Inverse-CDF draw from a probability row. A degenerate row never touches
// the generator, so deterministic policies give identical episodes.
fn sample_index(rng: &mut ExperimentRng, probs: &[f64]) -> usize {
    if let Some(i) = probs.iter().position(|&p| p == 1.0) {
        return i;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Names accepted by [`zoo`].
pub const ZOO: [&str; 3] = ["bandit", "chain3", "risky5"];

/// Built-in MDPs. Every probability is a multiple of 0.1 (or 0.25), so an
/// exhaustive dataset of [`exhaustive_size`] reproduces `mu` and `P`
/// exactly.
pub fn zoo(name: &str) -> Result<TabularMdp> {
    match name {
        "bandit" => bandit(),
        "chain3" => chain3(),
        "risky5" => risky5(),
        other => Err(Error::config(format!(
            "unknown MDP {other:?}; built-in MDPs are {}",
            ZOO.join(", ")
        ))),
    }
}

/// Exhaustive dataset size that quantizes every zoo MDP without rounding.
pub fn exhaustive_size(mdp: &TabularMdp) -> usize {
    100 * mdp.num_states()
}

// One state, three actions with rewards 0, 0.5, 1 and a skewed behavior policy.
fn bandit() -> Result<TabularMdp> {
    TabularMdp::new(
        1,
        3,
        vec![1.0; 3],
        vec![0.0, 0.5, 1.0],
        0.9,
        vec![0.5, 0.3, 0.2],
    )
}

// Three states in a line; action 0 drifts left, action 1 drifts right, and
// only the right end pays.
fn chain3() -> Result<TabularMdp> {
    let (ns, na) = (3, 2);
    let mut p = vec![0.0; ns * na * ns];
    for s in 0..ns {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(ns - 1);
        p[(s * na) * ns + left] += 0.8;
        p[(s * na) * ns + s] += 0.2;
        p[(s * na + 1) * ns + right] += 0.8;
        p[(s * na + 1) * ns + s] += 0.2;
    }
    let reward = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    TabularMdp::new(ns, na, p, reward, 0.9, vec![0.5; ns * na])
}

// Four states on a loop and a pit. "Safe" advances with a small reward (a
// larger one for closing the loop); "risky" pays more but falls into the pit
// half of the time. The pit costs 1 and returns to the start.
fn risky5() -> Result<TabularMdp> {
    let (ns, na) = (5, 2);
    let pit = 4;
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na];
    for s in 0..pit {
        let next = (s + 1) % pit;
        p[(s * na) * ns + next] = 1.0;
        r[s * na] = if next == 0 { 1.0 } else { 0.2 };
        p[(s * na + 1) * ns + next] += 0.5;
        p[(s * na + 1) * ns + pit] += 0.5;
        r[s * na + 1] = 2.0;
    }
    for a in 0..na {
        p[(pit * na + a) * ns] = 1.0;
        r[pit * na + a] = -1.0;
    }
    TabularMdp::new(ns, na, p, r, 0.9, vec![0.5; ns * na])
}
