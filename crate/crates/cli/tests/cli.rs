use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cluster-infer"));
    cmd.env_remove("CLUSTER_INFER_WORKERS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Households in `g` villages; food share follows a Working–Leser curve
/// `share = 0.6 + slope·ln(total) + noise`.
fn engel_csv(seed: u64, g: usize, slope: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ln_total = Normal::new(7.0, 0.6).unwrap();
    let noise = Normal::new(0.0, 0.03).unwrap();
    let mut out = String::from("village,state,food,total,hhsize\n");
    for v in 0..g {
        let village_effect = noise.sample(&mut rng);
        for _ in 0..rng.random_range(6..15) {
            let lt: f64 = ln_total.sample(&mut rng);
            let total = lt.exp();
            let share = (0.6 + slope * (lt - 7.0) + village_effect + noise.sample(&mut rng))
                .clamp(0.01, 0.99);
            let hh = rng.random_range(1..9);
            writeln!(out, "v{v},st{},{},{},{hh}", v % 4, share * total, total).unwrap();
        }
    }
    out
}

/// `y = 1 + slope_l·x + e` with `slope_l = 0.5 + u_l`, `u_l ~ Unif[−h, h]`.
fn blocks_csv(seed: u64, p: usize, d: usize, h: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut out = String::from("cluster,block,y,x\n");
    for l in 0..d {
        let slope = 0.5
            + if h > 0.0 {
                rng.random_range(-h..h)
            } else {
                0.0
            };
        for c in 0..p {
            for _ in 0..10 {
                let x: f64 = std.sample(&mut rng);
                let y = 1.0 + slope * x + 0.5 * std.sample(&mut rng);
                writeln!(out, "b{l}c{c},b{l},{y},{x}").unwrap();
            }
        }
    }
    out
}

#[test]
fn working_leser_recovers_a_negative_slope() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "hh.csv", &engel_csv(1, 60, -0.08));
    let v = json(&run(&[
        "analyze",
        s(&path),
        "--cluster-col",
        "village",
        "--model",
        "working-leser",
    ]));
    assert_eq!(v["coefficients"][1], "ln(total)");
    assert!(v["beta_bar_hat"][1].as_f64().unwrap() < 0.0);
    assert!(v["beta_pols"][1].as_f64().unwrap() < 0.0);
    // default hypothesis: slope = 0, clearly rejected
    assert!(v["wald_cluster_average"]["p_value"].as_f64().unwrap() < 0.01);

    let with_hh = json(&run(&[
        "analyze",
        s(&path),
        "--cluster-col",
        "village",
        "--model",
        "5",
        "--hhsize",
    ]));
    assert_eq!(with_hh["coefficients"].as_array().unwrap().len(), 3);
}

#[test]
fn true_hypothesis_is_rarely_rejected() {
    let dir = TempDir::new().unwrap();
    let mut accepted = 0;
    let seeds = 40;
    for seed in 0..seeds {
        let path = write(&dir, "d.csv", &blocks_csv(100 + seed, 15, 4, 0.0));
        let v = json(&run(&[
            "analyze",
            s(&path),
            "--raw",
            "--x-cols",
            "x",
            "--hypothesis",
            "0 1; 0.5",
        ]));
        if v["wald_cluster_average"]["p_value"].as_f64().unwrap() > 0.05 {
            accepted += 1;
        }
    }
    assert!(accepted * 10 >= seeds * 9, "{accepted} of {seeds}");
}

#[test]
fn malformed_hypothesis_exits_2_with_position() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "d.csv", &blocks_csv(1, 5, 2, 0.0));
    let out = run(&[
        "analyze",
        s(&path),
        "--x-cols",
        "x",
        "--hypothesis",
        "0 1; 0.x5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("position 6"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn input_problems_exit_2() {
    let dir = TempDir::new().unwrap();
    let empty = write(&dir, "empty.csv", "");
    assert_eq!(
        run(&["analyze", s(&empty), "--x-cols", "x"]).status.code(),
        Some(2)
    );
    let path = write(&dir, "d.csv", &blocks_csv(1, 5, 2, 0.0));
    let out = run(&["analyze", s(&path), "--x-cols", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
    let bad = write(&dir, "bad.csv", "cluster,y,x\na,1,2\na,oops,3\n");
    let out = run(&["analyze", s(&bad), "--x-cols", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
    assert_eq!(
        run(&["analyze", s(&path), "--model", "quadratic"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn singular_clusters_exit_3_with_ids() {
    let dir = TempDir::new().unwrap();
    let mut body = blocks_csv(2, 6, 1, 0.0);
    body.push_str("flat,b0,1,2\nflat,b0,2,2\nflat,b0,3,2\n");
    let path = write(&dir, "d.csv", &body);
    let out = run(&["analyze", s(&path), "--x-cols", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flat"));
}

#[test]
fn too_few_clusters_for_the_covariance_exit_4() {
    // two clusters leave V̂_G of rank one, so the two-restriction test is
    // not computable
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "d.csv", &blocks_csv(3, 2, 1, 0.0));
    let out = run(&[
        "analyze",
        s(&path),
        "--x-cols",
        "x",
        "--hypothesis",
        "1 0; 0 1; 1 0.5",
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn constancy_needs_two_superblocks() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "d.csv", &blocks_csv(4, 10, 1, 0.0));
    let out = run(&[
        "constancy",
        s(&path),
        "--raw",
        "--x-cols",
        "x",
        "--superblock-col",
        "block",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["constancy", s(&path), "--raw", "--x-cols", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn degenerate_superblocks_exit_3_with_labels() {
    let dir = TempDir::new().unwrap();
    let mut body = blocks_csv(5, 6, 3, 0.0);
    body.push_str("lonely,solo,1,0\nlonely,solo,2,1\nlonely,solo,2,3\n");
    let path = write(&dir, "d.csv", &body);
    let out = run(&[
        "constancy",
        s(&path),
        "--raw",
        "--x-cols",
        "x",
        "--superblock-col",
        "block",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solo"));
}

fn constancy_z(seed: u64, h: f64, dir: &TempDir) -> (f64, f64) {
    let path = write(dir, "d.csv", &blocks_csv(seed, 100, 25, h));
    let v = json(&run(&[
        "constancy",
        s(&path),
        "--raw",
        "--x-cols",
        "x",
        "--superblock-col",
        "block",
    ]));
    let row = &v["rows"][0];
    assert_eq!(row["superblocks"], 25);
    (row["z"].as_f64().unwrap(), row["p_value"].as_f64().unwrap())
}

#[test]
fn constancy_separates_homogeneous_and_heterogeneous_data() {
    let dir = TempDir::new().unwrap();
    let seeds = 20;
    let small = (0..seeds)
        .filter(|&s| constancy_z(500 + s, 0.0, &dir).0.abs() < 3.0)
        .count() as u64;
    assert!(small * 100 >= seeds * 95, "{small} of {seeds}");
    let detected = (0..seeds)
        .filter(|&s| {
            let (z, p) = constancy_z(900 + s, 0.2, &dir);
            z > 0.0 && p < 0.01
        })
        .count() as u64;
    assert!(detected * 100 >= seeds * 95, "{detected} of {seeds}");
}

#[test]
fn constancy_reports_every_requested_model() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "hh.csv", &engel_csv(8, 80, -0.05));
    let v = json(&run(&[
        "constancy",
        s(&path),
        "--cluster-col",
        "village",
        "--superblock-col",
        "state",
    ]));
    let models: Vec<&str> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["model"].as_str().unwrap())
        .collect();
    assert_eq!(
        models,
        [
            "linear-share",
            "linear",
            "double-log",
            "semi-log",
            "working-leser"
        ]
    );
    let v = json(&run(&[
        "constancy",
        s(&path),
        "--cluster-col",
        "village",
        "--superblock-col",
        "state",
        "--model",
        "double-log,2",
        "--two-sided",
    ]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["tail"], "two-sided");
}

#[test]
fn simulate_validates_the_cell() {
    let code = |args: &[&str]| run(args).status.code();
    assert_eq!(
        code(&["simulate", "--table", "1", "--G", "20", "--N1", "100", "--reps", "50"]),
        Some(2)
    );
    assert_eq!(code(&["simulate", "--table", "1", "--G", "20"]), Some(2));
    assert_eq!(
        code(&["simulate", "--table", "2", "--P", "10", "--D", "1", "--reps", "100"]),
        Some(2)
    );
    assert_eq!(
        code(&["simulate", "--table", "3", "--G", "20", "--N1", "100"]),
        Some(2)
    );
    assert_eq!(
        code(&["simulate", "--table", "2", "--G", "20", "--P", "5", "--D", "3"]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "simulate",
            "--table",
            "1",
            "--G",
            "20",
            "--N1",
            "100",
            "--reps",
            "200",
            "--paper-scale"
        ]),
        Some(2)
    );
}

#[test]
fn simulate_output_does_not_depend_on_workers() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = [
        "simulate", "--table", "1", "--G", "15", "--N1", "120", "--reps", "150", "--seed", "9",
    ];
    let one = bin()
        .args(args)
        .args(["--workers", "1", "--out", s(&a)])
        .output()
        .unwrap();
    let three = bin()
        .args(args)
        .args(["--out", s(&b)])
        .env("CLUSTER_INFER_WORKERS", "3")
        .output()
        .unwrap();
    assert!(one.status.success() && three.status.success());
    assert_eq!(one.stdout, three.stdout);
    let read = |p: &Path, f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read(&a, "report.json"), read(&b, "report.json"));

    let manifest: Value = serde_json::from_slice(&read(&b, "manifest.json")).unwrap();
    assert_eq!(manifest["workers"], 3);
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["command"], "simulate");
    assert!(manifest["wall_time_secs"].as_f64().unwrap() >= 0.0);
    let report: Value = serde_json::from_slice(&read(&b, "report.json")).unwrap();
    assert_eq!(report["manifest"], "manifest.json");
    assert_eq!(report["design_checksum"], manifest["design_checksum"]);

    let text = run(&[
        "simulate", "--table", "2", "--P", "5", "--D", "3", "--reps", "100", "--text",
    ]);
    assert!(text.status.success());
    assert!(String::from_utf8_lossy(&text.stdout).contains("superblock-constancy"));
}
