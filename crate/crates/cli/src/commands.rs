use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use ssvi_core::data::{self, TimeUnit};
use ssvi_core::inference::{filter_init, run_with_solver, SequentialSolver};
use ssvi_core::quadrature::gh_rule;
use ssvi_core::{fit as fit_model, predict_marginals, Engine, InferenceConfig, TraceRow};

use crate::config::{EngineName, RunConfig};
use crate::io::{self, ModelFile};

#[derive(Debug, Clone, Default)]
pub struct FitOverrides {
    pub engine: Option<EngineName>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub final_objective: f64,
    pub iters: usize,
    pub wall_time_s: f64,
    pub engine: String,
    pub n: usize,
    pub hyperparameters: BTreeMap<String, f64>,
}

/// Runs `fit` and writes posterior, sites, trace, metrics and model files
/// into the output directory, which is returned.
pub fn fit(config: &RunConfig, overrides: &FitOverrides) -> Result<(PathBuf, Metrics)> {
    let mut config = config.clone();
    if let Some(e) = overrides.engine {
        config.engine = e;
    }
    let out = match &overrides.output_dir {
        Some(d) => d.clone(),
        None => config.output_dir(),
    };
    let ds = config.dataset(None)?;
    if ds.is_empty() {
        bail!("no data: the dataset has no observations");
    }
    let kernel = config.kernel()?;
    let lik = config.likelihood()?;
    let fit_config = config.fit();
    info!(
        "fitting {} points, engine {}, {} outer iterations",
        ds.len(),
        fit_config.inference.engine.name(),
        fit_config.outer_iters
    );
    let start = Instant::now();
    let result = fit_model(&kernel, &lik, &ds.t, &ds.y, &fit_config)?;
    let wall = start.elapsed().as_secs_f64();

    let iters = if fit_config.outer_iters == 0 {
        fit_config.inference.iters
    } else {
        fit_config.outer_iters
    };
    let metrics = Metrics {
        final_objective: result.final_objective,
        iters,
        wall_time_s: wall,
        engine: fit_config.inference.engine.name().to_string(),
        n: ds.len(),
        hyperparameters: result
            .params
            .names()
            .iter()
            .cloned()
            .zip(result.params.constrained())
            .collect(),
    };
    io::write_posterior(&out.join("posterior.csv"), &ds.t, &result.outcome.posterior.marginals)?;
    io::write_sites(&out.join("sites.csv"), &ds.t, &result.outcome.sites)?;
    let trace = if result.trace.is_empty() {
        inference_trace(&result.outcome.trace)
    } else {
        result.trace.clone()
    };
    io::write_trace(&out.join("trace.csv"), &trace)?;
    io::write_json(&out.join("metrics.json"), &metrics)?;
    io::write_json(&out.join("model.json"), &ModelFile::new(&result.kernel, &result.likelihood))?;
    info!("objective {:.6} after {:.2}s", result.final_objective, wall);
    Ok((out, metrics))
}

/// Per-iteration objective of an inference-only run; no gradient or timing
/// is recorded, so those columns are NaN.
fn inference_trace(objective: &[f64]) -> Vec<TraceRow> {
    objective
        .iter()
        .enumerate()
        .map(|(k, &objective)| TraceRow {
            iter: k + 1,
            objective,
            grad_norm: f64::NAN,
            elapsed_s: f64::NAN,
        })
        .collect()
}

/// Posterior marginals at the query times in `test`, using the model and
/// sites saved by `fit` in `model_dir`. Writes `predictions.csv` there.
pub fn predict(config: &RunConfig, model_dir: &Path, test: &Path) -> Result<PathBuf> {
    let model: ModelFile = io::read_json(&model_dir.join("model.json"))?;
    let (kernel, lik) = model.model()?;
    let (t, sites) = io::read_sites(&model_dir.join("sites.csv"))?;
    if t.is_empty() {
        bail!("no data: {} has no sites", model_dir.join("sites.csv").display());
    }
    let (t_star, y_star) = data::ingest_queries(test, config.time_unit())?;
    let solver = SequentialSolver::new(&kernel, &t)?;
    let post = ssvi_core::inference::ConjugateSolver::solve(&solver, &sites)?;
    let (filt, smooth) = post.states.as_deref().context("sequential solver returned no states")?;
    let pred = predict_marginals(&solver.model, &t, filt, smooth, &t_star)?;

    let mut header = io::POSTERIOR_HEADER.to_vec();
    let mut rows: Vec<Vec<f64>> = io::posterior_rows(&t_star, &pred).collect();
    if let Some(y) = &y_star {
        header.extend(["y", "nlpd"]);
        let rule = gh_rule(config.inference.quad_order)?;
        for (i, row) in rows.iter_mut().enumerate() {
            let lp = lik
                .log_partition(y[i], pred.m[i], pred.v[i], &rule)
                .with_context(|| format!("query row {}", i + 1))?;
            row.extend([y[i], -lp.value]);
        }
    }
    let path = model_dir.join("predictions.csv");
    io::write_table(&path, &header, rows)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub engine: String,
    pub n: usize,
    pub setup_s: f64,
    pub per_iter_s: f64,
    pub peak_mem_estimate: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Rough working-set size in bytes for the stored filter/smoother states
/// or the dense Gram factorisation.
fn memory_estimate(engine: Engine, n: usize, d: usize) -> usize {
    match engine {
        Engine::Sequential => 8 * n * (3 * (d + d * d) + 4),
        Engine::Dense { .. } => 8 * (3 * n * n + 8 * n),
    }
}

pub const BENCH_REPEATS: usize = 5;

/// Times solver setup and site-update iterations at each size, for the
/// sequential engine and, below the dense cap, the dense engine.
pub fn bench(config: &RunConfig, sizes: &[usize]) -> Result<Vec<BenchRow>> {
    if config.synthetic.is_none() {
        bail!("bench needs a [synthetic] section to generate data of each size");
    }
    let kernel = config.kernel()?;
    let lik = config.likelihood()?;
    let d = ssvi_core::to_state_space(&kernel)?.state_dim();
    let cap = match config.engine() {
        Engine::Dense { cap } => cap,
        Engine::Sequential => ssvi_core::dense::DENSE_CAP,
    };
    let inf = InferenceConfig {
        iters: config.inference.iters.max(1),
        ..config.inference()
    };
    let rule = gh_rule(inf.quad_order)?;
    let mut rows = Vec::new();
    for &n in sizes {
        let ds = config.dataset(Some(n))?;
        if ds.is_empty() {
            bail!("no data: bench size {n}");
        }
        let model = ssvi_core::to_state_space(&kernel)?;
        let sites = filter_init(&model.transitions(&ds.t)?, &model.h, &lik, &ds.y, &rule)?;
        let mut engines = vec![Engine::Sequential];
        if n <= cap {
            engines.push(Engine::Dense { cap });
        }
        for engine in engines {
            let mut setup = Vec::with_capacity(BENCH_REPEATS);
            let mut per_iter = Vec::with_capacity(BENCH_REPEATS);
            for _ in 0..BENCH_REPEATS {
                let start = Instant::now();
                let solver = engine.solver(&kernel, &ds.t)?;
                setup.push(start.elapsed().as_secs_f64());
                let start = Instant::now();
                run_with_solver(solver.as_ref(), sites.clone(), &lik, &ds.y, &InferenceConfig { engine, ..inf })?;
                per_iter.push(start.elapsed().as_secs_f64() / inf.iters as f64);
            }
            let row = BenchRow {
                engine: engine.name().to_string(),
                n,
                setup_s: median(setup),
                per_iter_s: median(per_iter),
                peak_mem_estimate: memory_estimate(engine, n, d),
            };
            info!("{row:?}");
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

/// Parses sizes such as `1e2,1000,5e4`.
pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            let p = p.trim();
            let x: f64 = p.parse().with_context(|| format!("bad size {p:?}"))?;
            if !(x >= 1.0 && x.fract() == 0.0 && x <= 1e9) {
                bail!("bad size {p:?}: expected a positive integer");
            }
            Ok(x as usize)
        })
        .collect()
}

pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("range must be `start,end`, got {s:?}");
    }
    let a: f64 = parts[0].parse().with_context(|| format!("bad range start {:?}", parts[0]))?;
    let b: f64 = parts[1].parse().with_context(|| format!("bad range end {:?}", parts[1]))?;
    Ok((a, b))
}

/// Bins an event file into counts; returns the `(t, y)` CSV.
pub fn bin(input: &Path, bins: usize, range: (f64, f64), unit: TimeUnit) -> Result<Vec<u8>> {
    let events = data::ingest_events(input, unit)?;
    let ds = data::bin_events(&events, range, bins)?;
    io::table_csv(&["t", "y"], ds.t.iter().zip(&ds.y).map(|(&t, &y)| vec![t, y]))
}
