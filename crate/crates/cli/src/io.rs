//! Output files. Every file is written to a temporary sibling and renamed
//! into place.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ssvi_core::{Kernel, Likelihood, PosteriorMarginals, SiteParams, TraceRow};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Renders a numeric table as CSV; floats use the shortest round-trip form.
pub fn table_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    Ok(w.into_inner()?)
}

pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    write_atomic(path, &table_csv(header, rows)?)
}

pub const POSTERIOR_HEADER: [&str; 5] = ["t", "mean", "var", "lower95", "upper95"];

pub fn posterior_rows<'a>(t: &'a [f64], m: &'a PosteriorMarginals) -> impl Iterator<Item = Vec<f64>> + 'a {
    t.iter().enumerate().map(|(i, &ti)| {
        let half = Z95 * m.v[i].sqrt();
        vec![ti, m.m[i], m.v[i], m.m[i] - half, m.m[i] + half]
    })
}

pub fn write_posterior(path: &Path, t: &[f64], m: &PosteriorMarginals) -> Result<()> {
    write_table(path, &POSTERIOR_HEADER, posterior_rows(t, m))
}

pub fn write_sites(path: &Path, t: &[f64], sites: &SiteParams) -> Result<()> {
    let rows = (0..t.len()).map(|i| {
        let (yt, s2) = sites.pseudo_observation(i).unwrap_or((0.0, f64::INFINITY));
        vec![t[i], sites.lambda1[i], sites.lambda2[i], yt, s2]
    });
    write_table(path, &["t", "lambda1", "lambda2", "y_tilde", "sigma2_tilde"], rows)
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let rows = trace
        .iter()
        .map(|r| vec![r.iter as f64, r.objective, r.grad_norm, r.elapsed_s]);
    write_table(path, &["iter", "objective", "grad_norm", "elapsed_s"], rows)
}

/// Reads a numeric CSV with a header, returning the header and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.iter().map(str::to_owned).collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {}: not a number", path.display(), i + 2))?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("{}: missing column {name}", path.display()))
}

/// Training times and sites from a `sites.csv`.
pub fn read_sites(path: &Path) -> Result<(Vec<f64>, SiteParams)> {
    let (header, rows) = read_table(path)?;
    let (ct, c1, c2) = (
        column(&header, "t", path)?,
        column(&header, "lambda1", path)?,
        column(&header, "lambda2", path)?,
    );
    let t = rows.iter().map(|r| r[ct]).collect();
    let l1 = rows.iter().map(|r| r[c1]).collect();
    let l2 = rows.iter().map(|r| r[c2]).collect();
    Ok((t, SiteParams::new(l1, l2)?))
}

/// Times and marginals from a posterior CSV.
pub fn read_posterior(path: &Path) -> Result<(Vec<f64>, PosteriorMarginals)> {
    let (header, rows) = read_table(path)?;
    let (ct, cm, cv) = (
        column(&header, "t", path)?,
        column(&header, "mean", path)?,
        column(&header, "var", path)?,
    );
    Ok((
        rows.iter().map(|r| r[ct]).collect(),
        PosteriorMarginals {
            m: rows.iter().map(|r| r[cm]).collect(),
            v: rows.iter().map(|r| r[cv]).collect(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kernel: String,
    pub likelihood: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub binsize: Option<f64>,
}

impl ModelFile {
    pub fn new(kernel: &Kernel, lik: &Likelihood) -> ModelFile {
        let (noise_variance, binsize) = match *lik {
            Likelihood::Gaussian { noise_variance } => (Some(noise_variance), None),
            Likelihood::Poisson { binsize } => (None, Some(binsize)),
            Likelihood::Bernoulli => (None, None),
        };
        ModelFile {
            kernel: kernel.to_string(),
            likelihood: lik.name().to_string(),
            noise_variance,
            binsize,
        }
    }

    pub fn model(&self) -> Result<(Kernel, Likelihood)> {
        let kernel = Kernel::parse(&self.kernel)?;
        let lik = match self.likelihood.as_str() {
            "gaussian" => Likelihood::gaussian(self.noise_variance.context("model.json: missing noise_variance")?)?,
            "poisson" => Likelihood::poisson(self.binsize.unwrap_or(1.0))?,
            "bernoulli" => Likelihood::Bernoulli,
            other => bail!("model.json: unknown likelihood {other:?}"),
        };
        Ok((kernel, lik))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))
}
