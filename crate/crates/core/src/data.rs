//! Datasets: CSV ingestion, event binning, the bundled coal-mining
//! disaster dates and synthetic generators.

use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::state_space::to_state_space;

const COAL_CSV: &str = include_str!("../data/coal_events.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    pub range: (f64, f64),
    pub n_bins: usize,
    pub n_events: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    pub source: Option<String>,
    pub binning: Option<Binning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Checks `|t| = |y|`, finiteness and strictly increasing `t`.
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Dataset> {
        if t.len() != y.len() {
            return Err(Error::Dimension(format!("{} times but {} observations", t.len(), y.len())));
        }
        for (i, (a, b)) in t.iter().zip(&y).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Data(format!("non-finite value at index {i}")));
            }
        }
        for i in 1..t.len() {
            if !(t[i] > t[i - 1]) {
                return Err(Error::NotIncreasing(i));
            }
        }
        Ok(Dataset {
            t,
            y,
            meta: DatasetMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// How the time column is read. Numbers are always taken as-is; ISO dates
/// (`YYYY-MM-DD` or `YYYY-MM-DDTHH:MM:SS`) are converted to days since
/// 1970-01-01 or to fractional years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeUnit {
    #[default]
    Raw,
    Days,
    Years,
}

impl std::str::FromStr for TimeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<TimeUnit> {
        match s {
            "raw" => Ok(TimeUnit::Raw),
            "days" => Ok(TimeUnit::Days),
            "years" => Ok(TimeUnit::Years),
            other => Err(Error::Config(format!("unknown time_unit '{other}' (raw, days, years)"))),
        }
    }
}

fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .or_else(|| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(|d| d.and_hms_opt(0, 0, 0).unwrap()))
}

fn parse_time(s: &str, unit: TimeUnit) -> Option<f64> {
    if let Ok(x) = s.parse::<f64>() {
        return Some(x);
    }
    let dt = parse_datetime(s)?;
    let secs = dt.num_seconds_from_midnight() as f64 / 86400.0;
    match unit {
        TimeUnit::Raw => None,
        TimeUnit::Days => {
            let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
            Some((dt.date() - epoch).num_days() as f64 + secs)
        }
        TimeUnit::Years => {
            let year = dt.year();
            let days = if NaiveDate::from_ymd_opt(year, 2, 29).is_some() { 366.0 } else { 365.0 };
            Some(year as f64 + (dt.ordinal0() as f64 + secs) / days)
        }
    }
}

fn read_rows(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: display.clone(),
            row: 0,
            msg: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            path: display.clone(),
            row: i + 1,
            msg: e.to_string(),
        })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((i + 1, rec));
    }
    Ok(rows)
}

fn field(
    path: &str,
    row: usize,
    rec: &csv::StringRecord,
    col: usize,
    parse: impl Fn(&str) -> Option<f64>,
) -> Result<f64> {
    let err = |msg: String| Error::Csv {
        path: path.to_string(),
        row,
        msg,
    };
    let raw = rec.get(col).ok_or_else(|| err(format!("missing column {}", col + 1)))?;
    let x = parse(raw).ok_or_else(|| err(format!("column {}: cannot parse '{raw}'", col + 1)))?;
    if !x.is_finite() {
        return Err(err(format!("column {}: non-finite value '{raw}'", col + 1)));
    }
    Ok(x)
}

fn is_header(rec: &csv::StringRecord, unit: TimeUnit) -> bool {
    rec.get(0).is_some_and(|f| parse_time(f, unit).is_none())
}

/// Reads a two-column `(t, y)` CSV, with or without a header row. Rows
/// must be in strictly increasing time order; row numbers in errors are
/// 1-based file lines.
pub fn ingest_csv(path: impl AsRef<Path>, unit: TimeUnit) -> Result<Dataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let rows = read_rows(path)?;
    let skip = rows.first().is_some_and(|(_, r)| is_header(r, unit)) as usize;
    let mut t = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (row, rec) in &rows[skip..] {
        if rec.len() < 2 {
            return Err(Error::Csv {
                path: display.clone(),
                row: *row,
                msg: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let ti = field(&display, *row, rec, 0, |s| parse_time(s, unit))?;
        let yi = field(&display, *row, rec, 1, |s| s.parse().ok())?;
        if let Some(&prev) = t.last() {
            if !(ti > prev) {
                let what = if ti == prev { "duplicate timestamp" } else { "timestamps not increasing" };
                return Err(Error::Csv {
                    path: display.clone(),
                    row: *row,
                    msg: format!("{what} {ti}"),
                });
            }
        }
        t.push(ti);
        y.push(yi);
    }
    Ok(Dataset {
        t,
        y,
        meta: DatasetMeta {
            source: Some(display),
            binning: None,
        },
    })
}

/// Reads event times from the first column of a CSV (header optional).
/// Order does not matter and repeated times are allowed.
pub fn ingest_events(path: impl AsRef<Path>, unit: TimeUnit) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let rows = read_rows(path)?;
    let skip = rows.first().is_some_and(|(_, r)| is_header(r, unit)) as usize;
    rows[skip..]
        .iter()
        .map(|(row, rec)| field(&display, *row, rec, 0, |s| parse_time(s, unit)))
        .collect()
}

/// Query points for prediction: one column of times, optionally followed
/// by observations. Any order is accepted.
pub fn ingest_queries(path: impl AsRef<Path>, unit: TimeUnit) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let rows = read_rows(path)?;
    let skip = rows.first().is_some_and(|(_, r)| is_header(r, unit)) as usize;
    let rows = &rows[skip..];
    let with_y = rows.first().is_some_and(|(_, r)| r.len() >= 2);
    let mut t = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(if with_y { rows.len() } else { 0 });
    for (row, rec) in rows {
        t.push(field(&display, *row, rec, 0, |s| parse_time(s, unit))?);
        if with_y {
            y.push(field(&display, *row, rec, 1, |s| s.parse().ok())?);
        }
    }
    Ok((t, with_y.then_some(y)))
}

/// Counts events in `n_bins` equal-width bins over `[t0, t1]`; `t` holds
/// the bin centres. An event at `t1` falls in the last bin.
pub fn bin_events(events: &[f64], range: (f64, f64), n_bins: usize) -> Result<Dataset> {
    let (t0, t1) = range;
    if n_bins == 0 {
        return Err(Error::Config("number of bins must be positive".into()));
    }
    if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
        return Err(Error::Config(format!("invalid range [{t0}, {t1}]")));
    }
    let outside = events.iter().filter(|&&e| !(e >= t0 && e <= t1)).count();
    if outside > 0 {
        return Err(Error::Data(format!("{outside} events outside [{t0}, {t1}]")));
    }
    let width = (t1 - t0) / n_bins as f64;
    let mut y = vec![0.0; n_bins];
    for &e in events {
        let b = (((e - t0) / width) as usize).min(n_bins - 1);
        y[b] += 1.0;
    }
    let t = (0..n_bins).map(|i| t0 + (i as f64 + 0.5) * width).collect();
    Ok(Dataset {
        t,
        y,
        meta: DatasetMeta {
            source: None,
            binning: Some(Binning {
                range,
                n_bins,
                n_events: events.len(),
            }),
        },
    })
}

/// Dates (fractional years) of the 191 British coal-mining explosions
/// with ten or more fatalities, 1851 to 1962.
pub fn coal_events() -> Vec<f64> {
    COAL_CSV
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().expect("bundled coal data"))
        .collect()
}

/// Range used to bin [`coal_events`].
pub const COAL_RANGE: (f64, f64) = (1851.0, 1963.0);

/// The coal events in 200 bins.
pub fn coal_binned() -> Dataset {
    let mut d = bin_events(&coal_events(), COAL_RANGE, 200).expect("bundled coal data");
    d.meta.source = Some("coal".into());
    d
}

/// `6 sin(πt/10) / (πt/10) + 1`.
pub fn sinc_latent(t: f64) -> f64 {
    let x = std::f64::consts::PI * t / 10.0;
    if x == 0.0 {
        7.0
    } else {
        6.0 * x.sin() / x + 1.0
    }
}

/// Binary classification data: `n` evenly spaced inputs on `[lo, hi]`,
/// `yᵢ = 1` when `f(tᵢ) + εᵢ > 0` with `εᵢ ~ N(0, 1)`, so that
/// `P(yᵢ = 1) = Φ(f(tᵢ))`.
pub fn bernoulli_sinc(n: usize, range: (f64, f64), seed: u64) -> Result<Dataset> {
    let t = linspace(range, n)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let y = t
        .iter()
        .map(|&ti| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            if sinc_latent(ti) + eps > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut d = Dataset::new(t, y)?;
    d.meta.source = Some(format!("bernoulli-sinc(n={n}, seed={seed})"));
    Ok(d)
}

/// A draw of `f(t)` from the GP prior, simulated through the state-space
/// form in a single forward sweep.
pub fn sample_prior(kernel: &Kernel, t: &[f64], seed: u64) -> Result<Vec<f64>> {
    let model = to_state_space(kernel)?;
    let transitions = model.transitions(t)?;
    let d = model.state_dim();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut x = DVector::zeros(d);
    let mut roots: Vec<Option<DMatrix<f64>>> = vec![None; transitions.distinct()];
    let mut out = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        let tr = transitions.get(i);
        let slot = transitions.slot(i);
        let root = roots[slot].get_or_insert_with(|| psd_sqrt(&tr.q));
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        x = &tr.a * &x + &*root * z;
        out.push(model.h.dot(&x));
    }
    Ok(out)
}

/// Regression data `yᵢ = f(tᵢ) + N(0, noise)` with `f` drawn from the prior.
pub fn gaussian_gp(kernel: &Kernel, noise_variance: f64, t: Vec<f64>, seed: u64) -> Result<Dataset> {
    let f = sample_prior(kernel, &t, seed)?;
    let mut rng = StdRng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let sd = noise_variance.sqrt();
    let y = f
        .iter()
        .map(|fi| {
            let e: f64 = StandardNormal.sample(&mut rng);
            fi + sd * e
        })
        .collect();
    Dataset::new(t, y)
}

/// `n` evenly spaced points covering `[lo, hi]`.
pub fn linspace(range: (f64, f64), n: usize) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("invalid range [{lo}, {hi}]")));
    }
    Ok(match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| lo + i as f64 * step).collect()
        }
    })
}

fn psd_sqrt(q: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = q.clone().symmetric_eigen();
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn headerless_two_columns() {
        let f = write("0,1\n1,0\n");
        let d = ingest_csv(f.path(), TimeUnit::Raw).unwrap();
        assert_eq!(d.t, vec![0.0, 1.0]);
        assert_eq!(d.y, vec![1.0, 0.0]);
    }

    #[test]
    fn header_is_skipped() {
        let f = write("t,y\n0.5,2\n1.5,3\n");
        let d = ingest_csv(f.path(), TimeUnit::Raw).unwrap();
        assert_eq!(d.t, vec![0.5, 1.5]);
    }

    #[test]
    fn duplicate_timestamp_reports_row() {
        let f = write("t,y\n0,1\n1,2\n1,3\n");
        let err = ingest_csv(f.path(), TimeUnit::Raw).unwrap_err();
        match err {
            Error::Csv { row, msg, .. } => {
                assert_eq!(row, 4);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_finite_reports_row() {
        let f = write("0,1\n1,NaN\n");
        match ingest_csv(f.path(), TimeUnit::Raw).unwrap_err() {
            Error::Csv { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
        let f = write("0,1\ninf,2\n");
        assert!(ingest_csv(f.path(), TimeUnit::Raw).is_err());
    }

    #[test]
    fn iso_dates() {
        let f = write("date,count\n1970-01-02,1\n1970-01-03T12:00:00,0\n");
        let d = ingest_csv(f.path(), TimeUnit::Days).unwrap();
        assert_eq!(d.t, vec![1.0, 2.5]);
        assert_eq!(parse_time("2000-07-02", TimeUnit::Years), Some(2000.0 + 183.0 / 366.0));
        let f = write("t,y\n1970-01-02,1\n");
        assert!(ingest_csv(f.path(), TimeUnit::Raw).is_err());
    }

    #[test]
    fn queries_with_and_without_targets() {
        let f = write("t\n3\n1\n");
        assert_eq!(ingest_queries(f.path(), TimeUnit::Raw).unwrap(), (vec![3.0, 1.0], None));
        let f = write("2,1\n0,0\n");
        assert_eq!(
            ingest_queries(f.path(), TimeUnit::Raw).unwrap(),
            (vec![2.0, 0.0], Some(vec![1.0, 0.0]))
        );
    }

    #[test]
    fn binning_examples() {
        let d = bin_events(&[1.2, 1.3, 5.0], (0.0, 10.0), 2).unwrap();
        assert_eq!(d.t, vec![2.5, 7.5]);
        assert_eq!(d.y, vec![2.0, 1.0]);
        let d = bin_events(&[], (0.0, 1.0), 4).unwrap();
        assert_eq!(d.y, vec![0.0; 4]);
        assert!(bin_events(&[1.0], (0.0, 1.0), 0).is_err());
        let err = bin_events(&[-1.0, 0.5, 2.0], (0.0, 1.0), 3).unwrap_err();
        assert!(err.to_string().contains("2 events"));
        assert_eq!(bin_events(&[1.0], (0.0, 1.0), 3).unwrap().y, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn coal_data() {
        let ev = coal_events();
        assert_eq!(ev.len(), 191);
        let d = coal_binned();
        assert_eq!(d.len(), 200);
        assert_eq!(d.y.iter().sum::<f64>(), 191.0);
    }

    #[test]
    fn bernoulli_generator_is_deterministic() {
        let a = bernoulli_sinc(500, (-50.0, 50.0), 3).unwrap();
        let b = bernoulli_sinc(500, (-50.0, 50.0), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.y.iter().all(|&y| y == 0.0 || y == 1.0));
        // Near t = 0 the latent is 7, so almost every label is 1.
        let centre: f64 = a.y[245..255].iter().sum();
        assert!(centre >= 9.0);
    }

    #[test]
    fn prior_sample_has_kernel_variance() {
        let k = Kernel::matern32(2.0, 0.5).unwrap();
        let t = linspace((0.0, 20000.0), 40000).unwrap();
        let f = sample_prior(&k, &t, 11).unwrap();
        let var = f.iter().map(|x| x * x).sum::<f64>() / f.len() as f64;
        assert!((var - 2.0).abs() < 0.15, "{var}");
    }
}
