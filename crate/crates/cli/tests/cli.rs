use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use ssvi_cli::commands::{self, FitOverrides};
use ssvi_cli::config::EngineName;
use ssvi_cli::io::{read_posterior, read_table};
use ssvi_cli::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssvi"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn config(dir: &Path, text: &str) -> RunConfig {
    RunConfig::parse(text, dir).unwrap()
}

const COAL: &str = r#"
kernel = "matern52(var=1, len=10)"
likelihood = "poisson"

[data]
builtin = "coal"
format = "events"
bins = 200
range = [1851.0, 1963.0]

[learning]
outer_iters = 5

[output]
dir = "out"
"#;

#[test]
fn coal_engines_agree() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), COAL);
    let run = |engine, name: &str| {
        let o = FitOverrides {
            engine: Some(engine),
            output_dir: Some(dir.path().join(name)),
        };
        commands::fit(&c, &o).unwrap();
        read_posterior(&dir.path().join(name).join("posterior.csv")).unwrap()
    };
    let (ts, seq) = run(EngineName::Sequential, "seq");
    let (td, dense) = run(EngineName::Dense, "dense");
    assert_eq!(ts, td);
    assert_eq!(ts.len(), 200);
    for i in 0..ts.len() {
        assert!((seq.m[i] - dense.m[i]).abs() < 1e-5, "mean at {i}");
        assert!((seq.v[i] - dense.v[i]).abs() < 1e-5, "var at {i}");
    }
}

#[test]
fn empty_data_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "empty.csv", "t,y\n");
    let cfg = write(
        dir.path(),
        "c.toml",
        "kernel = \"matern32(var=1,len=1)\"\nlikelihood = \"bernoulli\"\n[data]\npath = \"empty.csv\"\n",
    );
    let out = bin().arg("fit").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no data"), "{err}");
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &COAL.replace("[learning]", "[learning]\nlearning_rate = 0.1"));
    let out = bin().arg("fit").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate"), "{err}");
}

const BERNOULLI: &str = r#"
kernel = "matern52(var=5, len=5)"
likelihood = "bernoulli"
seed = 3

[synthetic]
kind = "bernoulli-sinc"
n = 1000
range = [-50.0, 50.0]

[inference]
iters = 10
"#;

#[test]
fn bernoulli_synthetic_fit_is_finite_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", BERNOULLI);
    let files = ["posterior.csv", "sites.csv", "trace.csv", "model.json"];
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let status = bin()
            .arg("fit")
            .arg(&cfg)
            .arg("--output-dir")
            .arg(dir.path().join(name))
            .status()
            .unwrap();
        assert!(status.success());
        let metrics: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(name).join("metrics.json")).unwrap()).unwrap();
        assert!(metrics["final_objective"].as_f64().unwrap().is_finite());
        assert_eq!(metrics["n"], 1000);
        assert_eq!(metrics["engine"], "sequential");
        let (_, rows) = read_table(&dir.path().join(name).join("posterior.csv")).unwrap();
        assert!(rows.iter().flatten().all(|x| x.is_finite()));
        let mut m = metrics.as_object().unwrap().clone();
        m.remove("wall_time_s");
        let texts: Vec<Vec<u8>> = files
            .iter()
            .map(|f| std::fs::read(dir.path().join(name).join(f)).unwrap())
            .collect();
        runs.push((m, texts));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn posterior_csv_matches_in_memory_fit() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), BERNOULLI);
    let (out, _) = commands::fit(&c, &FitOverrides::default()).unwrap();
    let ds = c.dataset(None).unwrap();
    let direct = ssvi_core::fit(&c.kernel().unwrap(), &c.likelihood().unwrap(), &ds.t, &ds.y, &c.fit()).unwrap();
    let (t, m) = read_posterior(&out.join("posterior.csv")).unwrap();
    assert_eq!(t, ds.t);
    let want = &direct.outcome.posterior.marginals;
    for i in 0..t.len() {
        assert!((m.m[i] - want.m[i]).abs() <= 1e-12 * want.m[i].abs().max(1.0));
        assert!((m.v[i] - want.v[i]).abs() <= 1e-12 * want.v[i]);
    }
}

fn ou(var: f64, len: f64, a: f64, b: f64) -> f64 {
    var * (-(a - b).abs() / len).exp()
}

#[test]
fn gaussian_predictions_match_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let (t, y) = ([0.0, 1.0, 2.5], [0.3, -0.4, 1.1]);
    let (var, len, noise) = (1.3, 0.8, 0.2);
    write(dir.path(), "train.csv", "t,y\n0,0.3\n1,-0.4\n2.5,1.1\n");
    write(dir.path(), "test.csv", "t,y\n-1,0.5\n1,-0.2\n1.7,0.9\n10,0\n");
    let c = config(
        dir.path(),
        &format!(
            "kernel = \"matern12(var={var}, len={len})\"\nlikelihood = \"gaussian\"\nnoise_variance = {noise}\n\
             [data]\npath = \"train.csv\"\n[inference]\niters = 1\n"
        ),
    );
    let (out, _) = commands::fit(&c, &FitOverrides::default()).unwrap();
    let path = commands::predict(&c, &out, &dir.path().join("test.csv")).unwrap();
    let (header, rows) = read_table(&path).unwrap();
    assert_eq!(header, ["t", "mean", "var", "lower95", "upper95", "y", "nlpd"]);

    let k = DMatrix::from_fn(3, 3, |i, j| ou(var, len, t[i], t[j])) + DMatrix::identity(3, 3) * noise;
    let chol = k.cholesky().unwrap();
    let alpha = chol.solve(&DVector::from_row_slice(&y));
    for row in &rows {
        let ks = DVector::from_fn(3, |i, _| ou(var, len, row[0], t[i]));
        let mean = ks.dot(&alpha);
        let v = var - ks.dot(&chol.solve(&ks));
        let s = v + noise;
        let nlpd = 0.5 * (2.0 * std::f64::consts::PI * s).ln() + 0.5 * (row[5] - mean).powi(2) / s;
        assert!((row[1] - mean).abs() < 1e-10, "mean at {}", row[0]);
        assert!((row[2] - v).abs() < 1e-10, "var at {}", row[0]);
        assert!((row[6] - nlpd).abs() < 1e-10, "nlpd at {}", row[0]);
    }

    let (pt, pm) = read_posterior(&out.join("posterior.csv")).unwrap();
    assert_eq!(pt[1], rows[1][0]);
    assert!((pm.m[1] - rows[1][1]).abs() < 1e-12);
    assert!((pm.v[1] - rows[1][2]).abs() < 1e-12);
}

#[test]
fn bernoulli_prediction_far_from_data_is_a_coin_flip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", &format!("{BERNOULLI}\n[output]\ndir = \"out\"\n"));
    let test = write(dir.path(), "q.csv", "t,y\n1e6,1\n-1e6,0\n");
    assert!(bin().arg("fit").arg(&cfg).status().unwrap().success());
    let out = bin().arg("predict").arg(&cfg).arg("--test").arg(&test).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_table(&dir.path().join("out/predictions.csv")).unwrap();
    for row in rows {
        assert!((row[6] - std::f64::consts::LN_2).abs() < 1e-5, "{row:?}");
    }
}

#[test]
fn bin_counts_events() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "ev.csv", "0.1\n0.2\n1.5\n3.9\n4.0\n");
    let out = bin()
        .args(["bin", "--bins", "4", "--range", "0,4", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "t,y\n0.5,2\n1.5,1\n2.5,0\n3.5,2\n");

    let out = bin()
        .args(["bin", "--bins", "4", "--range", "0,3", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_reports_both_engines_below_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "b.toml",
        &BERNOULLI.replace("iters = 10", "iters = 2").replace("seed = 3", "engine = \"dense\"\ndense_cap = 100"),
    );
    let csv_path = dir.path().join("bench.csv");
    let out = bin()
        .arg("bench")
        .arg(&cfg)
        .args(["--sizes", "1e2,2e2", "--output"])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "engine,n,setup_s,per_iter_s,peak_mem_estimate");
    let keys: Vec<(&str, &str)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert!(f[2].parse::<f64>().unwrap() >= 0.0 && f[3].parse::<f64>().unwrap() > 0.0);
            (f[0], f[1])
        })
        .collect();
    assert_eq!(keys, [("sequential", "100"), ("dense", "100"), ("sequential", "200")]);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c = RunConfig::load(&path).unwrap();
            assert!(!c.dataset(Some(50)).unwrap().is_empty(), "{}", path.display());
            n += 1;
        }
    }
    assert!(n >= 3);
}
