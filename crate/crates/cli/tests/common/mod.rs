#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn neuropmd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuropmd")).current_dir(dir).args(args).output().expect("binary runs")
}

/// Runs the binary and panics with its stderr on failure.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = neuropmd(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn write(dir: &Path, name: &str, value: &serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

pub fn csv_from(bytes: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

/// Value column of the first metric row matching `metric` and `method`.
pub fn metric(rows: &(Vec<String>, Vec<Vec<String>>), method: &str, metric: &str) -> f64 {
    let col = |name: &str| rows.0.iter().position(|h| h == name).unwrap();
    let (m, k, v) = (col("method"), col("metric"), col("value"));
    rows.1.iter().find(|r| r[m] == method && r[k] == metric).unwrap_or_else(|| panic!("no {metric} row for {method}"))
        [v]
        .parse()
        .unwrap()
}

/// A one-component wrapped normal on the circle.
pub fn circle_mixture(mean: f64, var: f64) -> serde_json::Value {
    serde_json::json!({ "components": [{ "mean": [mean], "covariance": [[var]], "weight": 1.0 }] })
}

/// Small field config on `manifold` reading `data.csv`.
pub fn field_config(manifold: &str, k: usize, max_freq: Vec<u32>, epochs: usize) -> serde_json::Value {
    serde_json::json!({
        "manifold": manifold,
        "data": "data.csv",
        "encoding": { "k": k, "max_freq": max_freq },
        "field": { "width": 16, "depth": 2, "first_layer_gain": 0.1 },
        "train": {
            "tau": 1e-2, "batch_size": 100, "q1": 256, "q2": 256, "epochs": epochs,
            "schedule": { "kind": "fixed", "w": 0.002 }
        },
        "checkpoint_out": "model.json",
        "history_out": "history.csv"
    })
}
