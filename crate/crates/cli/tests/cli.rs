use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn oqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oqr"))
        .args(args)
        .output()
        .expect("spawn oqr")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (header, rows) = csv_rows(path);
    let c = header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("{name} missing in {path:?}"));
    rows.into_iter().map(|r| r[c].clone()).collect()
}

/// A small synthetic run: two methods, one seed, conformal variants.
fn small_run(dir: &Path) -> PathBuf {
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        "seeds = [0]\nconformalize = true\njobs = 1\n\
         [dataset]\nkind = \"synthetic\"\nn = 600\n\
         [training]\nmax_epochs = 20\n\
         [evaluation.wsc]\nn_directions = 20\n",
    )
    .unwrap();
    let out = dir.join("out");
    ok(&oqr(&["run", "--config", s(&cfg), "--out", s(&out)]));
    out
}

#[test]
fn generate_is_deterministic_with_oracle_sidecar() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (
        dir.path().join("a.csv"),
        dir.path().join("b.csv"),
        dir.path().join("c.csv"),
    );
    ok(&oqr(&["generate", "--out", s(&a)]));
    ok(&oqr(&["generate", "--out", s(&b)]));
    ok(&oqr(&["generate", "--out", s(&c), "--seed", "2"]));

    let (header, rows) = csv_rows(&a);
    assert_eq!(rows.len(), 7000);
    assert_eq!(header.len(), 51);
    assert_eq!(header.last().unwrap(), "y");
    assert!(rows.iter().all(|r| r[0] == "0" || r[0] == "1"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    let oracle = dir.path().join("a_oracle.csv");
    let (oh, orows) = csv_rows(&oracle);
    assert_eq!(oh, ["row", "scale", "q_lo", "q_hi"]);
    assert_eq!(orows.len(), 7000);
    let parse = |v: &str| v.parse::<f64>().unwrap();
    assert!(orows
        .iter()
        .all(|r| parse(&r[2]) < parse(&r[3]) && parse(&r[1]) > 0.0));
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(
        oqr(&["generate", "--n", "0", "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        oqr(&["generate", "--lambda", "-1", "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(oqr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(oqr(&["run", "--seeds", "3,3"]).status.code(), Some(2));
    assert_eq!(oqr(&["run", "--penalty", "lasso"]).status.code(), Some(2));
    let help = oqr(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("generate"));
    assert!(!out.exists());
}

#[test]
fn run_figures_and_audit_agree() {
    let dir = TempDir::new().unwrap();
    let out = small_run(dir.path());

    for f in [
        "metrics.csv",
        "aggregate.csv",
        "aggregate.json",
        "groups.csv",
        "pairs.csv",
        "improvements.csv",
        "manifest.json",
        "traces/index.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let golden = include_str!("golden/aggregate_header.csv");
    let aggregate = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().next(), golden.lines().next());
    let (ah, arows) = csv_rows(&out.join("aggregate.csv"));
    let means: Vec<&Vec<String>> = arows.iter().filter(|r| r[2] == "mean").collect();
    assert_eq!(
        arows.len(),
        2 * means.len(),
        "one mean and one se row per method"
    );
    let methods: Vec<&str> = means.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(
        methods,
        [
            "pinball_vanilla",
            "pinball_vanilla_cqr",
            "pinball_corr",
            "pinball_corr_cqr"
        ]
    );
    let cov = ah.iter().position(|h| h == "coverage").unwrap();
    for r in &means {
        let c: f64 = r[cov].parse().unwrap();
        assert!((0.0..=1.0).contains(&c), "{} coverage {c}", r[1]);
    }

    // Both corr variants are paired with their own baseline.
    let (_, pairs) = csv_rows(&out.join("pairs.csv"));
    let pair_names: Vec<(String, String)> =
        pairs.iter().map(|r| (r[1].clone(), r[2].clone())).collect();
    assert_eq!(
        pair_names,
        [
            ("pinball_vanilla".into(), "pinball_corr".into()),
            ("pinball_vanilla_cqr".into(), "pinball_corr_cqr".into())
        ]
    );

    let fig = dir.path().join("fig");
    ok(&oqr(&["figures", s(&out), "--out", s(&fig)]));
    let series = fig.join("figure1_pinball_vanilla_seed0.csv");
    let epochs = column(&series, "epoch");
    let best: Vec<&String> = epochs
        .iter()
        .zip(column(&series, "is_best_epoch"))
        .filter(|(_, b)| b == "1")
        .map(|(e, _)| e)
        .collect();
    assert!(
        !best.is_empty() && best.iter().all(|e| *e == best[0]),
        "one best epoch"
    );
    let bins = column(&fig.join("figure2_pinball_corr.csv"), "bin");
    assert_eq!(bins.len(), 100);

    // The test split has 20% of 600 rows.
    let intervals = out.join("intervals/pinball_corr_seed0.csv");
    let baseline = out.join("intervals/pinball_vanilla_seed0.csv");
    let report = dir.path().join("audit.json");
    ok(&oqr(&[
        "audit",
        s(&intervals),
        "--baseline",
        s(&baseline),
        "--out",
        s(&report),
    ]));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["n"], 120);
    let (mh, mrows) = csv_rows(&out.join("metrics.csv"));
    let row = mrows.iter().find(|row| row[1] == "pinball_corr").unwrap();
    let metric = |name: &str| {
        row[mh.iter().position(|h| h == name).unwrap()]
            .parse::<f64>()
            .unwrap()
    };
    for name in [
        "coverage",
        "length",
        "corr",
        "hsic",
        "delta_ils",
        "delta_node",
    ] {
        let audited = match name {
            "delta_ils" => r["pair"]["treated_delta_ils"].as_f64(),
            "delta_node" => r["pair"]["treated_delta_node"].as_f64(),
            _ => r[name].as_f64(),
        }
        .unwrap();
        assert!(
            (audited - metric(name)).abs() < 1e-9,
            "{name}: audit {audited} vs run {}",
            metric(name)
        );
    }
}

#[test]
fn figures_need_traces() {
    let dir = TempDir::new().unwrap();
    let out = oqr(&["figures", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("traces"));
}

#[test]
fn failed_trials_exit_one_and_are_recorded() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(
        &cfg,
        r#"{"seeds": [0], "jobs": 1, "dataset": {"kind": "synthetic", "n": 60}, "training": {"max_epochs": 2}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = oqr(&["run", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let err = fs::read_to_string(out_dir.join("errors/seed0.txt")).unwrap();
    assert!(!err.trim().is_empty());
}

#[test]
fn audit_rejects_malformed_input() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "lo,hi,y\n1,0,0.5\n").unwrap();
    assert_eq!(oqr(&["audit", s(&bad)]).status.code(), Some(2));
    assert_eq!(
        oqr(&["audit", s(&dir.path().join("absent.csv"))])
            .status
            .code(),
        Some(1)
    );
}
