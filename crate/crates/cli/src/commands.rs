use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mxql_core::distributions::{gumbel_pdf, implied_error_density};
use mxql_core::mdp::{
    behavior_value, exhaustive_size, generate_dataset, soft_value, zoo, DatasetMode, TabularMdp,
};
use mxql_core::mxql::{default_lr_v, train_many, TrainConfig, TrainOutcome, VMode};
use mxql_core::regression::{run_experiment, RegressionConfig};
use mxql_core::rng::stream_rng;
use mxql_core::stats::{t_test_from_summaries, SampleSummary, TTestKind};
use mxql_core::{GumbelParams, LossSpec, LossVariant};

use crate::args::*;
use crate::config::usage;
use crate::output::{list, num, opt, Report, Table};

pub const REGRESS_HEADER: [&str; 9] = [
    "cell_beta_data",
    "cell_beta_reg",
    "loss_variant",
    "order",
    "checkpoint",
    "mean_abs_error",
    "std_abs_error",
    "diverged_count",
    "repeats",
];

pub const COMPARE_HEADER: [&str; 17] = [
    "cell_beta_data",
    "cell_beta_reg",
    "checkpoint",
    "loss_a",
    "order_a",
    "mean_a",
    "std_a",
    "n_a",
    "loss_b",
    "order_b",
    "mean_b",
    "std_b",
    "n_b",
    "t",
    "df",
    "p",
    "status",
];

pub fn run(command: &Command) -> Result<Report> {
    match command {
        Command::LossCurve(a) => loss_curve(a),
        Command::ErrDist(a) => err_dist(a),
        Command::Regress(a) => regress(a),
        Command::MdpTrain(a) => mdp_train(a),
        Command::Compare(a) => compare(a),
    }
}

/// One spec per family, with the expanded family repeated for each order.
fn specs(variants: &[LossVariant], orders: &[u32], p: &LossParams) -> Result<Vec<LossSpec>> {
    let mut out = Vec::new();
    for &v in variants {
        let built = match v {
            LossVariant::ExpandedGumbel => {
                if orders.is_empty() {
                    return Err(usage("the expanded loss needs at least one order"));
                }
                orders
                    .iter()
                    .map(|&n| LossSpec::expanded_gumbel(p.beta, n))
                    .collect::<Vec<_>>()
            }
            LossVariant::Gumbel => vec![LossSpec::gumbel(p.beta)],
            LossVariant::ClippedGumbel => vec![LossSpec::clipped_gumbel(p.beta, p.clip)],
            LossVariant::L2 => vec![LossSpec::l2(p.beta)],
            LossVariant::Expectile => vec![LossSpec::expectile(p.tau)],
        };
        for s in built {
            out.push(s.map_err(usage)?);
        }
    }
    if out.is_empty() {
        return Err(usage("no loss selected"));
    }
    Ok(out)
}

fn record_loss_params(r: &mut Report, p: &LossParams) {
    r.set("beta", num(p.beta));
    r.set("tau", num(p.tau));
    r.set("clip", num(p.clip));
}

fn loss_curve(a: &LossCurveArgs) -> Result<Report> {
    let specs = specs(&a.loss, &a.orders, &a.params)?;
    let mut report = Report::default();
    record_loss_params(&mut report, &a.params);
    report.set("loss", list(&a.loss));
    report.set("orders", list(&a.orders));
    report.set("grid", a.grid);
    let mut table = Table::new(
        a.common.out.clone(),
        &["loss", "residual", "z", "value", "grad"],
    );
    let xs = a.grid.points();
    for spec in &specs {
        let scale = spec.beta().unwrap_or(1.0);
        for &x in &xs {
            table.push(vec![
                spec.label(),
                num(x),
                num(x / scale),
                num(spec.loss(x)),
                num(spec.grad(x)),
            ]);
        }
    }
    report.tables.push(table);
    Ok(report)
}

fn err_dist(a: &ErrDistArgs) -> Result<Report> {
    let specs = specs(&a.loss, &a.orders, &a.params)?;
    let mut report = Report::default();
    record_loss_params(&mut report, &a.params);
    report.set("loss", list(&a.loss));
    report.set("orders", list(&a.orders));
    report.set("grid", a.grid);
    let beta = a.params.beta;
    let gumbel = GumbelParams::new(0.0, beta, true).map_err(usage)?;
    let norm_scale = 1.0 / (beta * (2.0 * std::f64::consts::PI).sqrt());
    let mut table = Table::new(
        a.common.out.clone(),
        &[
            "curve",
            "residual",
            "density",
            "normal_pdf",
            "gumbel_pdf",
            "integral",
        ],
    );
    for spec in &specs {
        let curve = implied_error_density(spec, &a.grid)
            .with_context(|| format!("density for {}", spec.label()))?;
        let integral = num(curve.trapezoid_integral());
        report.notes.insert(
            format!("normalizer.{}", spec.label()),
            num(curve.normalizer),
        );
        report
            .notes
            .insert(format!("integral.{}", spec.label()), integral.clone());
        for (x, d) in curve.rows() {
            let z = x / beta;
            table.push(vec![
                spec.label(),
                num(x),
                num(d),
                num(norm_scale * (-0.5 * z * z).exp()),
                num(gumbel_pdf(x, &gumbel)),
                integral.clone(),
            ]);
        }
    }
    report.tables.push(table);
    Ok(report)
}

fn sorted_unique(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn regress(a: &RegressArgs) -> Result<Report> {
    let loss = match a.loss {
        LossVariant::Gumbel => LossSpec::gumbel(1.0),
        LossVariant::ClippedGumbel => LossSpec::clipped_gumbel(1.0, a.clip),
        LossVariant::ExpandedGumbel => LossSpec::expanded_gumbel(1.0, a.order),
        LossVariant::L2 => LossSpec::l2(1.0),
        LossVariant::Expectile => return Err(usage("regress needs a loss with a temperature")),
    }
    .map_err(usage)?;
    let betas_data = sorted_unique(&a.betas_data);
    let betas_reg = sorted_unique(&a.betas_reg);
    if betas_data.is_empty() || betas_reg.is_empty() {
        return Err(usage(
            "at least one data and one loss temperature are needed",
        ));
    }
    let mut base =
        RegressionConfig::new(betas_data[0], loss.with_beta(betas_reg[0]).map_err(usage)?)
            .map_err(usage)?;
    base.n_data = a.n_data;
    base.lr = a.lr;
    base.batch_size = a.batch_size;
    base.checkpoints = a.checkpoints.clone();
    base.repeats = a.repeats;
    base.master_seed = a.common.seed;
    base.initial_h = a.initial_h;
    base.target = a.target;
    base.shared_dataset = a.shared_dataset;
    base.validate().map_err(usage)?;
    for &b in betas_data.iter().chain(&betas_reg) {
        if !(b.is_finite() && b > 0.0) {
            return Err(usage(format!("temperatures must be positive, got {b}")));
        }
    }

    let mut report = Report::default();
    report.set("loss", a.loss);
    report.set("order", a.order);
    report.set("clip", num(a.clip));
    report.set("betas_data", list(&betas_data));
    report.set("betas_reg", list(&betas_reg));
    report.set("repeats", a.repeats);
    report.set("n_data", a.n_data);
    report.set("lr", num(a.lr));
    report.set("batch_size", a.batch_size);
    report.set("checkpoints", list(&a.checkpoints));
    report.set("initial_h", num(a.initial_h));
    report.set("target", a.target.name());
    report.set("shared_dataset", a.shared_dataset);

    let traces = run_experiment(&base, &betas_data, &betas_reg)?;
    let mut table = Table::new(a.common.out.clone(), &REGRESS_HEADER);
    for trace in &traces {
        let cfg = &trace.config;
        for s in &trace.checkpoints {
            table.push(vec![
                num(cfg.beta_data),
                num(cfg.beta_reg),
                cfg.loss.variant().name().to_string(),
                cfg.loss.order().map(|n| n.to_string()).unwrap_or_default(),
                s.checkpoint.to_string(),
                opt(s.mean_abs_error),
                opt(s.std_abs_error),
                s.diverged.to_string(),
                s.repeats.to_string(),
            ]);
        }
        report.notes.insert(
            format!("diverged.{}.{}", num(cfg.beta_data), num(cfg.beta_reg)),
            trace.divergence_count().to_string(),
        );
    }
    report.tables.push(table);
    Ok(report)
}

fn load_mdp(a: &MdpTrainArgs) -> Result<(String, TabularMdp)> {
    match &a.mdp_file {
        Some(path) => Ok((
            path.display().to_string(),
            TabularMdp::load(path).map_err(usage)?,
        )),
        None => Ok((a.mdp.clone(), zoo(&a.mdp).map_err(usage)?)),
    }
}

fn mdp_train(a: &MdpTrainArgs) -> Result<Report> {
    let (name, mdp) = load_mdp(a)?;
    let mut orders = a.orders.clone();
    orders.sort_unstable();
    orders.dedup();
    let losses = specs(&[a.loss], &orders, &a.params)?;
    let mode = match a.dataset {
        DatasetKind::Exhaustive => DatasetMode::Exhaustive {
            size: a.size.unwrap_or_else(|| exhaustive_size(&mdp)),
        },
        DatasetKind::Rollout => DatasetMode::Rollout {
            episodes: a.episodes,
            horizon: a.horizon,
            start_state: a.start_state,
        },
    };
    let dataset = generate_dataset(&mdp, mode, &mut stream_rng(a.common.seed, 0)).map_err(usage)?;
    let configs = losses
        .iter()
        .map(|&loss| {
            let v_mode = match a.mode {
                FitMode::Closed => VMode::ClosedFormN2,
                FitMode::Gradient => VMode::Gradient,
                FitMode::Auto if loss.order() == Some(2) => VMode::ClosedFormN2,
                FitMode::Auto => VMode::Gradient,
            };
            let cfg = TrainConfig {
                loss,
                v_steps: a.v_steps,
                q_steps: a.q_steps,
                q_mode: a.q_mode,
                v_mode,
                lr_v: a.lr_v.unwrap_or_else(|| default_lr_v(&loss)),
                lr_q: a.lr_q,
                outer_iterations: a.iterations,
                tolerance: a.tolerance,
            };
            cfg.validate().map_err(usage)?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let outcomes = train_many(&mdp, &dataset, &configs)?;
    let v_behavior = behavior_value(&mdp);
    let v_soft = soft_value(&mdp, a.params.beta)?.v;

    let mut report = Report::default();
    record_loss_params(&mut report, &a.params);
    report.set("mdp", &name);
    report.set("loss", a.loss);
    report.set("orders", list(&orders));
    report.set("mode", format!("{:?}", a.mode).to_lowercase());
    report.set("q_mode", a.q_mode);
    report.set(
        "dataset",
        match mode {
            DatasetMode::Exhaustive { size } => format!("exhaustive:{size}"),
            DatasetMode::Rollout {
                episodes,
                horizon,
                start_state,
            } => format!("rollout:{episodes}x{horizon}@{start_state}"),
        },
    );
    report.set("dataset_len", dataset.len());
    report.set("lr_q", num(a.lr_q));
    report.set("v_steps", a.v_steps);
    report.set("q_steps", a.q_steps);
    report.set("iterations", a.iterations);
    report.set("tolerance", num(a.tolerance));

    let mut values = Table::new(
        a.common.out.clone(),
        &[
            "mdp",
            "loss",
            "order",
            "beta",
            "state",
            "v",
            "v_behavior",
            "v_soft",
            "gap_behavior",
            "gap_soft",
            "iterations",
            "converged",
            "diverged",
        ],
    );
    let mut trace = Table::new(
        a.trace_out.clone(),
        &[
            "loss",
            "order",
            "iteration",
            "max_change",
            "v_loss",
            "q_loss",
        ],
    );
    let mut q_header: Vec<String> = ["loss", "order", "state"].map(String::from).to_vec();
    q_header.extend((0..mdp.num_actions()).map(|i| format!("q_{i}")));
    let mut tables = Table::new(a.tables_out.clone(), &q_header);

    for (cfg, out) in configs.iter().zip(&outcomes) {
        let label = cfg.loss.label();
        let order = cfg.loss.order().map(|n| n.to_string()).unwrap_or_default();
        push_values(&mut values, &name, cfg, out, &v_behavior, &v_soft);
        for row in &out.trace {
            trace.push(vec![
                label.clone(),
                order.clone(),
                row.iteration.to_string(),
                num(row.max_change),
                num(row.v_loss),
                num(row.q_loss),
            ]);
        }
        for s in 0..mdp.num_states() {
            let mut row = vec![label.clone(), order.clone(), s.to_string()];
            row.extend((0..mdp.num_actions()).map(|a| num(out.tables.q(s, a))));
            tables.push(row);
        }
        if let Some(d) = out.divergence {
            report
                .notes
                .insert(format!("divergence.{label}"), d.to_string());
        }
        report.notes.insert(format!("lr_v.{label}"), num(cfg.lr_v));
    }
    report.tables.push(values);
    if a.trace_out.is_some() {
        report.tables.push(trace);
    }
    if a.tables_out.is_some() {
        report.tables.push(tables);
    }
    Ok(report)
}

fn push_values(
    table: &mut Table,
    mdp: &str,
    cfg: &TrainConfig,
    out: &TrainOutcome,
    v_behavior: &[f64],
    v_soft: &[f64],
) {
    for (s, &v) in out.tables.v.iter().enumerate() {
        table.push(vec![
            mdp.to_string(),
            cfg.loss.variant().name().to_string(),
            cfg.loss.order().map(|n| n.to_string()).unwrap_or_default(),
            opt(cfg.loss.beta()),
            s.to_string(),
            num(v),
            num(v_behavior[s]),
            num(v_soft[s]),
            num((v - v_behavior[s]).abs()),
            num((v - v_soft[s]).abs()),
            out.tables.iterations.to_string(),
            out.tables.converged.to_string(),
            out.diverged().to_string(),
        ]);
    }
}

#[derive(Debug, Clone)]
struct CellResult {
    loss: String,
    order: String,
    mean: Option<f64>,
    std: Option<f64>,
    converged: usize,
}

type CellKey = (u64, u64, usize);

fn key_bits(x: f64) -> u64 {
    // Order-preserving map from f64 to u64, so keys sort numerically.
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn bits_key(b: u64) -> f64 {
    f64::from_bits(if b >> 63 == 1 { b & !(1 << 63) } else { !b })
}

fn read_regress(path: &Path) -> Result<BTreeMap<CellKey, CellResult>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != REGRESS_HEADER {
        return Err(usage(format!(
            "schema mismatch in {}: expected columns {}, found {}",
            path.display(),
            REGRESS_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .with_context(|| format!("{}:{line}: bad number {:?}", path.display(), &rec[j]))
        };
        let u = |j: usize| -> Result<usize> {
            rec[j]
                .parse::<usize>()
                .with_context(|| format!("{}:{line}: bad count {:?}", path.display(), &rec[j]))
        };
        let o = |j: usize| -> Result<Option<f64>> {
            if rec[j].is_empty() {
                Ok(None)
            } else {
                f(j).map(Some)
            }
        };
        let repeats = u(8)?;
        let diverged = u(7)?;
        if diverged > repeats {
            bail!(
                "{}:{line}: more diverged repeats than repeats",
                path.display()
            );
        }
        let key = (key_bits(f(0)?), key_bits(f(1)?), u(4)?);
        let cell = CellResult {
            loss: rec[2].to_string(),
            order: rec[3].to_string(),
            mean: o(5)?,
            std: o(6)?,
            converged: repeats - diverged,
        };
        if out.insert(key, cell).is_some() {
            bail!("{}:{line}: duplicate cell", path.display());
        }
    }
    Ok(out)
}

fn compare(a: &CompareArgs) -> Result<Report> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(usage(format!("alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let left = read_regress(&a.a)?;
    let right = read_regress(&a.b)?;
    let mut report = Report::default();
    report.set("a", a.a.display());
    report.set("b", a.b.display());
    report.set("alpha", num(a.alpha));
    report.set("test", "welch");
    let mut table = Table::new(a.common.out.clone(), &COMPARE_HEADER);
    let mut keys: Vec<&CellKey> = left.keys().chain(right.keys()).collect();
    keys.sort();
    keys.dedup();
    let empty = |side: Option<&CellResult>| -> Vec<String> {
        match side {
            Some(c) => vec![
                c.loss.clone(),
                c.order.clone(),
                opt(c.mean),
                opt(c.std),
                c.converged.to_string(),
            ],
            None => vec![String::new(); 5],
        }
    };
    for key in keys {
        let (l, r) = (left.get(key), right.get(key));
        let mut row = vec![
            num(bits_key(key.0)),
            num(bits_key(key.1)),
            key.2.to_string(),
        ];
        row.extend(empty(l));
        row.extend(empty(r));
        let (test, status) = match (l, r) {
            (None, _) => (None, "only_in_b".to_string()),
            (_, None) => (None, "only_in_a".to_string()),
            (Some(l), Some(r)) => match (l.converged, r.converged) {
                (0, 0) => (None, "diverged_both".to_string()),
                (0, _) => (None, "diverged_a".to_string()),
                (_, 0) => (None, "diverged_b".to_string()),
                _ => match (summary(l), summary(r)) {
                    (Some(sl), Some(sr)) => {
                        let t = t_test_from_summaries(&sl, &sr, TTestKind::Welch)?;
                        let status = if t.p >= a.alpha {
                            "no_difference"
                        } else if sl.mean < sr.mean {
                            "a_lower"
                        } else {
                            "b_lower"
                        };
                        (Some(t), status.to_string())
                    }
                    _ => (None, "insufficient".to_string()),
                },
            },
        };
        match test {
            Some(t) => row.extend([num(t.t), num(t.df), num(t.p)]),
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        row.push(status);
        table.push(row);
    }
    report.tables.push(table);
    Ok(report)
}

fn summary(c: &CellResult) -> Option<SampleSummary> {
    SampleSummary::new(c.converged, c.mean?, c.std?).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_bits_sort_numerically() {
        let xs = [-3.0, -0.5, 0.0, 0.5, 2.0, 10.0];
        let keys: Vec<u64> = xs.iter().map(|&x| key_bits(x)).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        for &x in &xs {
            assert_eq!(bits_key(key_bits(x)), x);
        }
    }
}
