use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mxql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mxql"))
        .args(args)
        .output()
        .unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mxql-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn parse_stdout(out: &Output) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn loss_curve_has_one_block_per_curve() {
    let out = mxql(&[
        "loss-curve",
        "--loss",
        "expanded",
        "--orders",
        "2,4",
        "--grid=-1:1:0.5",
    ]);
    assert!(out.status.success());
    let (header, rows) = parse_stdout(&out);
    assert_eq!(header, ["loss", "residual", "z", "value", "grad"]);
    assert_eq!(rows.len(), 10);
    // n = 2 is the scaled square.
    for row in rows.iter().filter(|r| r[0].ends_with('2')) {
        let x: f64 = row[1].parse().unwrap();
        let v: f64 = row[3].parse().unwrap();
        assert!((v - x * x / 2.0).abs() < 1e-12);
    }
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    for args in [
        &["loss-curve", "--loss", "expanded", "--orders", "3"][..],
        &["loss-curve", "--grid=2:1:0.1"][..],
        &["mdp-train", "--mdp", "nowhere"][..],
        &["regress", "--betas-data", "-1"][..],
        &["frobnicate"][..],
    ] {
        let out = mxql(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn err_dist_reports_densities() {
    let dir = scratch("errdist");
    let path = dir.join("d.csv");
    let out = mxql(&[
        "err-dist",
        "--orders",
        "2,4",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let (header, rows) = read_csv(&path);
    assert_eq!(
        header,
        [
            "curve",
            "residual",
            "density",
            "normal_pdf",
            "gumbel_pdf",
            "integral"
        ]
    );
    assert!(!rows.is_empty());
    let manifest = std::fs::read_to_string(dir.join("d.csv.manifest")).unwrap();
    assert!(manifest.contains("subcommand = err-dist"));
    assert!(manifest.contains("normalizer."));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn regress_fills_the_grid() {
    let dir = scratch("regress");
    let path = dir.join("r.csv");
    let out = mxql(&["regress", "--repeats", "5", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let (header, rows) = read_csv(&path);
    assert_eq!(header.len(), 9);
    // 3 x 3 cells, 5 checkpoints each.
    assert_eq!(rows.len(), 45);
    let repeats = col(&header, "repeats");
    assert!(rows.iter().all(|r| r[repeats] == "5"));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn mdp_train_reports_gaps_to_both_oracles() {
    let out = mxql(&["mdp-train", "--mdp", "risky5", "--orders", "2,20"]);
    assert!(out.status.success());
    let (header, rows) = parse_stdout(&out);
    let (order, gb, gs) = (
        col(&header, "order"),
        col(&header, "gap_behavior"),
        col(&header, "gap_soft"),
    );
    for row in &rows {
        let gap_b: f64 = row[gb].parse().unwrap();
        let gap_s: f64 = row[gs].parse().unwrap();
        match row[order].as_str() {
            "2" => assert!(gap_b.abs() < 1e-6),
            "20" => assert!(gap_s.abs() < 1e-6),
            o => panic!("unexpected order {o}"),
        }
    }
    assert_eq!(rows.len(), 10);
}

#[test]
fn compare_flags_diverged_cells_and_self_agreement() {
    let dir = scratch("compare");
    let a = dir.join("a.csv");
    let cmp = dir.join("c.csv");
    assert!(
        mxql(&["regress", "--repeats", "10", "--out", a.to_str().unwrap()])
            .status
            .success()
    );
    let out = mxql(&[
        "compare",
        a.to_str().unwrap(),
        a.to_str().unwrap(),
        "--out",
        cmp.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let (header, rows) = read_csv(&cmp);
    let (p, status) = (col(&header, "p"), col(&header, "status"));
    assert_eq!(rows.len(), 45);
    for row in &rows {
        match row[status].as_str() {
            "no_difference" => assert_eq!(row[p].parse::<f64>().unwrap(), 1.0),
            "diverged_both" | "insufficient" => {}
            s => panic!("unexpected status {s}"),
        }
    }
    // Gumbel at beta_reg 0.5 on wide data collapses.
    assert!(rows.iter().any(|r| r[status] == "diverged_both"));

    let bogus = dir.join("bogus.csv");
    std::fs::write(&bogus, "x,y\n1,2\n").unwrap();
    let out = mxql(&["compare", a.to_str().unwrap(), bogus.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = scratch("config");
    let conf = dir.join("run.conf");
    std::fs::write(&conf, "orders = 2,4,8\nbeta = 2\n").unwrap();
    let out = mxql(&[
        "loss-curve",
        "--config",
        conf.to_str().unwrap(),
        "--loss",
        "expanded",
        "--orders",
        "2",
        "--grid=0:2:1",
    ]);
    assert!(out.status.success());
    let (_, rows) = parse_stdout(&out);
    assert_eq!(rows.len(), 3);
    // beta = 2 from the file: z = x / 2.
    assert_eq!(rows[2][2].parse::<f64>().unwrap(), 1.0);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn same_seed_same_bytes() {
    let dir = scratch("seed");
    let run = |name: &str, seed: &str| {
        let path = dir.join(name);
        let out = mxql(&[
            "mdp-train",
            "--dataset",
            "rollout",
            "--seed",
            seed,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.csv", "3"), run("b.csv", "3"));
    assert_ne!(run("a.csv", "3"), run("c.csv", "4"));
    std::fs::remove_dir_all(dir).ok();
}
