//! Run configuration, read from TOML. Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use ssvi_core::data::{self, Dataset, TimeUnit};
use ssvi_core::{
    AdamConfig, Engine, FitConfig, Init, InferenceConfig, Kernel, Likelihood, Mode, ObjectiveKind, RhoSchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodName {
    Gaussian,
    Poisson,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineName {
    Sequential,
    Dense,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Kernel expression, e.g. `matern52(var=1, len=10)`.
    pub kernel: String,
    pub likelihood: LikelihoodName,
    pub noise_variance: Option<f64>,
    pub binsize: Option<f64>,
    #[serde(default = "default_engine")]
    pub engine: EngineName,
    #[serde(default)]
    pub dense_cap: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub data: Option<DataSection>,
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub inference: InferenceSection,
    pub learning: Option<LearningSection>,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_engine() -> EngineName {
    EngineName::Sequential
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// One event time per row, binned into counts.
    Events,
    /// `(t, y)` rows.
    Series,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Coal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub builtin: Option<Builtin>,
    #[serde(default = "default_format")]
    pub format: DataFormat,
    pub bins: Option<usize>,
    pub range: Option<[f64; 2]>,
    #[serde(default = "default_time_unit")]
    pub time_unit: String,
}

fn default_format() -> DataFormat {
    DataFormat::Series
}

fn default_time_unit() -> String {
    "raw".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Probit labels thresholding `6 sin(πt/10)/(πt/10) + 1`.
    BernoulliSinc,
    /// A prior draw of the configured kernel plus Gaussian noise.
    GaussianGp,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub kind: SyntheticKind,
    pub n: usize,
    pub range: [f64; 2],
    pub noise_variance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Cvi,
    Ep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitName {
    Zero,
    Filter,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub mode: ModeName,
    pub rho_first: f64,
    pub rho: f64,
    pub iters: usize,
    pub init: InitName,
    pub quad_order: usize,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let d = InferenceConfig::default();
        InferenceSection {
            mode: ModeName::Cvi,
            rho_first: d.rho.first,
            rho: d.rho.rest,
            iters: d.iters,
            init: InitName::Filter,
            quad_order: d.quad_order,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Elbo,
    DirectMl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Adam,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningSection {
    pub objective: ObjectiveName,
    pub optimizer: OptimizerName,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
}

impl Default for LearningSection {
    fn default() -> Self {
        let d = FitConfig::default();
        LearningSection {
            objective: ObjectiveName::Elbo,
            optimizer: OptimizerName::Adam,
            lr: d.adam.lr,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            outer_iters: d.outer_iters,
            inner_iters: d.inner_iters,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let mut config: RunConfig = toml::from_str(text)?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base).with_context(|| format!("invalid config {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        self.kernel()?;
        self.likelihood()?;
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => bail!("give either [data] or [synthetic], not both"),
            (None, None) => bail!("missing [data] or [synthetic] section"),
            (Some(d), None) => {
                if d.path.is_some() == d.builtin.is_some() {
                    bail!("[data] needs exactly one of `path` or `builtin`");
                }
                d.time_unit.parse::<TimeUnit>()?;
                if d.format == DataFormat::Series && (d.bins.is_some() || d.range.is_some()) {
                    bail!("`bins` and `range` apply only to format = \"events\"");
                }
                if d.format == DataFormat::Events && d.bins.is_none() {
                    bail!("format = \"events\" requires `bins`");
                }
            }
            (None, Some(s)) => {
                if s.kind == SyntheticKind::GaussianGp && s.noise_variance.is_none() {
                    bail!("synthetic kind gaussian-gp requires noise_variance");
                }
            }
        }
        if self.noise_variance.is_some() && self.likelihood != LikelihoodName::Gaussian {
            bail!("noise_variance applies only to the gaussian likelihood");
        }
        if self.binsize.is_some() && self.likelihood != LikelihoodName::Poisson {
            bail!("binsize applies only to the poisson likelihood");
        }
        if self.dense_cap.is_some() && self.engine != EngineName::Dense {
            bail!("dense_cap applies only to engine = \"dense\"");
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Ok(Kernel::parse(&self.kernel)?)
    }

    pub fn likelihood(&self) -> Result<Likelihood> {
        Ok(match self.likelihood {
            LikelihoodName::Gaussian => {
                let nv = self
                    .noise_variance
                    .context("likelihood = \"gaussian\" requires noise_variance")?;
                Likelihood::gaussian(nv)?
            }
            LikelihoodName::Poisson => Likelihood::poisson(self.binsize.unwrap_or(1.0))?,
            LikelihoodName::Bernoulli => Likelihood::Bernoulli,
        })
    }

    pub fn engine(&self) -> Engine {
        match self.engine {
            EngineName::Sequential => Engine::Sequential,
            EngineName::Dense => Engine::Dense {
                cap: self.dense_cap.unwrap_or(ssvi_core::dense::DENSE_CAP),
            },
        }
    }

    pub fn inference(&self) -> InferenceConfig {
        let s = &self.inference;
        InferenceConfig {
            mode: match s.mode {
                ModeName::Cvi => Mode::Cvi,
                ModeName::Ep => Mode::Ep,
            },
            rho: RhoSchedule {
                first: s.rho_first,
                rest: s.rho,
            },
            iters: s.iters,
            init: match s.init {
                InitName::Zero => Init::Zero,
                InitName::Filter => Init::Filter,
            },
            quad_order: s.quad_order,
            engine: self.engine(),
        }
    }

    /// Learning settings; without a `[learning]` table the fit is
    /// inference-only (`outer_iters = 0`).
    pub fn fit(&self) -> FitConfig {
        let inference = self.inference();
        match &self.learning {
            None => FitConfig {
                outer_iters: 0,
                inference,
                ..Default::default()
            },
            Some(l) => FitConfig {
                objective: match l.objective {
                    ObjectiveName::Elbo => ObjectiveKind::Elbo,
                    ObjectiveName::DirectMl => ObjectiveKind::DirectMl,
                },
                adam: AdamConfig {
                    lr: l.lr,
                    beta1: l.beta1,
                    beta2: l.beta2,
                    ..Default::default()
                },
                outer_iters: l.outer_iters,
                inner_iters: l.inner_iters,
                inference,
            },
        }
    }

    pub fn time_unit(&self) -> TimeUnit {
        self.data
            .as_ref()
            .and_then(|d| d.time_unit.parse().ok())
            .unwrap_or_default()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    /// Loads or generates the dataset. `n` overrides the synthetic size.
    pub fn dataset(&self, n: Option<usize>) -> Result<Dataset> {
        if let Some(s) = &self.synthetic {
            let n = n.unwrap_or(s.n);
            let range = (s.range[0], s.range[1]);
            return Ok(match s.kind {
                SyntheticKind::BernoulliSinc => data::bernoulli_sinc(n, range, self.seed)?,
                SyntheticKind::GaussianGp => data::gaussian_gp(
                    &self.kernel()?,
                    s.noise_variance.unwrap_or(1.0),
                    data::linspace(range, n)?,
                    self.seed,
                )?,
            });
        }
        let d = self.data.as_ref().expect("validated");
        let unit = self.time_unit();
        let events = |raw: Vec<f64>| -> Result<Dataset> {
            let bins = d.bins.expect("validated");
            let range = match d.range {
                Some([a, b]) => (a, b),
                None => {
                    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if !(lo < hi) {
                        bail!("cannot infer a bin range from {} events; set `range`", raw.len());
                    }
                    (lo, hi)
                }
            };
            Ok(data::bin_events(&raw, range, bins)?)
        };
        match (d.builtin, &d.path) {
            (Some(Builtin::Coal), _) => match d.format {
                DataFormat::Events => events(data::coal_events()),
                DataFormat::Series => bail!("builtin coal data are events; use format = \"events\""),
            },
            (None, Some(p)) => {
                let path = self.resolve(p);
                let mut ds = match d.format {
                    DataFormat::Series => data::ingest_csv(&path, unit)?,
                    DataFormat::Events => events(data::ingest_events(&path, unit)?)?,
                };
                ds.meta.source = Some(path.display().to_string());
                Ok(ds)
            }
            (None, None) => unreachable!("validated"),
        }
    }
}
