//! Helpers for driving the `cellpred` binary from integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn cellpred() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cellpred"));
    cmd.env_remove("CELLPRED_OUT_DIR").env("RUST_LOG", "warn");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    cellpred().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Simulated data set in `dir/sim`.
pub fn simulate(dir: &Path, seed: u64) -> PathBuf {
    let sim = dir.join("sim");
    let out = run(&[
        "simulate",
        "--seed",
        &seed.to_string(),
        "--out-dir",
        path(&sim),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    sim
}

/// Sorted (file name, contents) pairs for every file in `dir`.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

/// Runs every stochastic command twice with the same seed and compares all
/// outputs byte for byte.
pub fn check_determinism() -> Result<(), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snapshots = Vec::new();
    for run_id in 0..2 {
        let root = tmp.path().join(format!("run{run_id}"));
        let sim = root.join("sim");
        let s = |p: &str| sim.join(p).to_str().unwrap().to_string();
        let commands: Vec<Vec<String>> = vec![
            vec![
                "simulate".into(),
                "--seed".into(),
                "11".into(),
                "--scenarios".into(),
            ],
            vec![
                "fit".into(),
                "--model".into(),
                "causal-linear".into(),
                "--lambda".into(),
                "auto".into(),
                "--seed".into(),
                "5".into(),
                "--conditions".into(),
                s("conditions.csv"),
                "--responses".into(),
                s("responses.csv"),
                "--targets".into(),
                s("targets.csv"),
            ],
            vec![
                "cv".into(),
                "--scheme".into(),
                "rf".into(),
                "--reps".into(),
                "25".into(),
                "--seed".into(),
                "9".into(),
                "--model".into(),
                "causal-linear".into(),
                "--conditions".into(),
                s("conditions.csv"),
                "--responses".into(),
                s("responses.csv"),
                "--targets".into(),
                s("targets.csv"),
            ],
        ];
        let dirs = ["sim", "fit", "cv"];
        for (args, dir) in commands.iter().zip(dirs) {
            let out_dir = root.join(dir);
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--out-dir", path(&out_dir)]);
            let out = run(&full);
            if code(&out) != 0 {
                return Err(format!("{args:?} failed: {}", stderr(&out)));
            }
        }
        snapshots.push(dirs.map(|d| snapshot(&root.join(d))));
    }
    if snapshots[0] == snapshots[1] {
        Ok(())
    } else {
        Err("outputs differ between identical runs".into())
    }
}

/// Exit codes: 0 success, 2 parse error, 3 dimension error, 4 non-convergence.
pub fn check_exit_codes() -> Result<(), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let sim = simulate(dir, 1);
    let cond = sim.join("conditions.csv");
    let resp = sim.join("responses.csv");
    let targets = sim.join("targets.csv");

    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "condition,X1\nC1,1.0\nC2,oops\n").unwrap();
    let short = dir.join("short.csv");
    std::fs::write(&short, "condition,X1\nC1,1.0\nC2,2.0\n").unwrap();
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "seeds = 3\n").unwrap();
    let out_dir = dir.join("out");

    let cases: Vec<(Vec<&str>, i32)> = vec![
        (
            vec![
                "fit",
                "--conditions",
                path(&cond),
                "--responses",
                path(&resp),
            ],
            0,
        ),
        (
            vec![
                "fit",
                "--conditions",
                path(&cond),
                "--responses",
                path(&bad),
            ],
            2,
        ),
        (vec!["simulate", "--config", path(&cfg)], 2),
        (
            vec![
                "fit",
                "--conditions",
                path(&cond),
                "--responses",
                path(&short),
            ],
            3,
        ),
        (
            vec![
                "fit",
                "--model",
                "causal-linear",
                "--max-iter",
                "1",
                "--conditions",
                path(&cond),
                "--responses",
                path(&resp),
                "--targets",
                path(&targets),
            ],
            4,
        ),
    ];
    for (args, expected) in cases {
        let mut full = args.clone();
        full.extend(["--out-dir", path(&out_dir)]);
        let out = run(&full);
        if code(&out) != expected {
            return Err(format!(
                "{args:?}: exit {} (expected {expected}): {}",
                code(&out),
                stderr(&out)
            ));
        }
    }
    Ok(())
}
