//! Versioned run configuration: one TOML (or JSON) document, with command-line
//! flags layered on top and every override recorded.

use std::path::{Path, PathBuf};

use nlfr_core::evaluate::{BetaInit, LinkMomentSource};
use nlfr_core::kernel::OptimizerOptions;
use nlfr_core::{HTransform, Method, ModelId, ScalarLink, SimulationSpec, SpaceKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Fit,
    Predict,
    Bench,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Fit => "fit",
            CommandKind::Predict => "predict",
            CommandKind::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Covariate columns plus `q_<k>` (quantiles) or `s_<i>_<j>` (matrix entries).
    #[default]
    Table,
    /// Covariate columns plus death counts in `age_<lo>_<hi>` bins.
    LifeTable,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Standard output when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: String,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_spd_fit")]
    pub spd_fit_metric: SpaceKind,
    #[serde(default = "default_link_moments")]
    pub link_moments: LinkMomentSource,
    #[serde(default = "default_beta_init")]
    pub beta_init: BetaInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub format: DataFormat,
    #[serde(default = "default_space")]
    pub space: SpaceKind,
    /// Quantile grid size for life tables.
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub standardize: bool,
    /// One generalized-linear link per covariate; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<ScalarLink>>,
    /// Summary used by SNLFR; the space default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<HTransform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub model: PathBuf,
    pub covariates: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_bench_models")]
    pub models: Vec<String>,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_bench_n")]
    pub n: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { models: default_bench_models(), p: default_p(), n: default_bench_n(), replications: default_replications() }
    }
}

/// The `c` grid for SNLFR: `size` equally spaced points on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub size: usize,
    pub refine: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { lo: -5.0, hi: 5.0, size: 201, refine: true }
    }
}

impl GridConfig {
    pub fn points(&self) -> Vec<f64> {
        if self.size == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.size - 1) as f64;
        (0..self.size).map(|i| self.lo + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub command: CommandKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
}

fn default_p() -> usize {
    2
}
fn default_n() -> usize {
    500
}
fn default_bench_n() -> usize {
    500
}
fn default_n_test() -> usize {
    500
}
fn default_replications() -> usize {
    100
}
fn default_parallelism() -> usize {
    1
}
fn default_grid_size() -> usize {
    20
}
fn default_space() -> SpaceKind {
    SpaceKind::Wasserstein
}
fn default_spd_fit() -> SpaceKind {
    SpaceKind::SpdFrobenius
}
fn default_link_moments() -> LinkMomentSource {
    LinkMomentSource::Training
}
fn default_beta_init() -> BetaInit {
    BetaInit::Zero
}
fn default_methods() -> Vec<String> {
    ["LFR", "NLFR", "SNLFR"].map(String::from).to_vec()
}
fn default_bench_models() -> Vec<String> {
    ["1.1", "1.2", "1.3", "2.2"].map(String::from).to_vec()
}

/// One flag that replaced (or supplied) a configuration value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub key: String,
    /// Value from the document, if it had one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub flag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    pub overrides: Vec<Override>,
    pub seed: u64,
    pub config_sha256: String,
}

/// Flag values layered over the document, as dotted keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    entries: Vec<(String, toml::Value)>,
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) -> &mut Self {
        self.entries.push((key.to_string(), value.into()));
        self
    }

    pub fn set_opt<T: Into<toml::Value>>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.set(key, v);
        }
        self
    }
}

fn describe(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn config_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Config { path: path.to_path_buf(), message: message.into() }
}

fn read_document(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| config_err(path, e.to_string()))?;
        toml::Table::try_from(json).map_err(|e| config_err(path, e.to_string()))
    } else {
        text.parse::<toml::Table>().map_err(|e| config_err(path, e.to_string()))
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Option<toml::Value> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            *entry = toml::Value::Table(toml::Table::new());
        }
        cur = entry.as_table_mut().expect("just made a table");
    }
    cur.insert(last.to_string(), value)
}

/// Loads `path` (if any), applies `overrides`, and validates the result.
/// Without a document the configuration starts from the command's defaults.
pub fn parse_config(path: Option<&Path>, command: CommandKind, overrides: &Overrides) -> Result<(RunConfig, Provenance)> {
    let mut table = match path {
        Some(p) => read_document(p)?,
        None => {
            let mut t = toml::Table::new();
            t.insert("version".into(), toml::Value::Integer(CONFIG_VERSION.into()));
            t.insert("command".into(), toml::Value::String(command.name().into()));
            t
        }
    };
    let mut applied = Vec::new();
    for (key, value) in &overrides.entries {
        let old = set_dotted(&mut table, key, value.clone());
        applied.push(Override { key: key.clone(), file: old.as_ref().map(describe), flag: describe(value) });
    }
    let origin = path.unwrap_or(Path::new("<flags>"));
    let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| config_err(origin, e.to_string()))?;
    if cfg.command != command {
        return Err(CliError::validation(
            "command",
            format!("document is for `{}` but `{}` was invoked", cfg.command.name(), command.name()),
        ));
    }
    cfg.validate()?;
    let provenance = Provenance {
        tool: format!("nlfr {}", env!("CARGO_PKG_VERSION")),
        config_path: path.map(|p| p.display().to_string()),
        overrides: applied,
        seed: cfg.seed,
        config_sha256: cfg.sha256(),
    };
    Ok((cfg, provenance))
}

fn require_file(field: &str, p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(field, format!("file {} does not exist", p.display())))
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(CliError::validation(field, "must be at least 1"))
    } else {
        Ok(())
    }
}

pub fn parse_model(field: &str, s: &str) -> Result<ModelId> {
    ModelId::parse(s).map_err(|_| CliError::validation(field, format!("unknown model \"{s}\" (expected 1.1–1.3 or 2.1–2.3)")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::validation("version", format!("unsupported version {} (expected {CONFIG_VERSION})", self.version)));
        }
        self.parsed_methods()?;
        positive("parallelism", self.parallelism)?;
        let g = &self.grid;
        if !(g.lo.is_finite() && g.hi.is_finite()) || g.lo >= g.hi {
            return Err(CliError::validation("grid", format!("need finite lo < hi, got [{}, {}]", g.lo, g.hi)));
        }
        positive("grid.size", g.size)?;
        self.optimizer.validate().map_err(|e| CliError::validation("optimizer", e.to_string()))?;

        let missing = |s: &str| CliError::validation(s, format!("section [{s}] is required for `{}`", self.command.name()));
        match self.command {
            CommandKind::Simulate => {
                let s = self.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
                positive("simulate.replications", s.replications)?;
                positive("simulate.n_test", s.n_test)?;
                if !s.spd_fit_metric.is_spd() {
                    return Err(CliError::validation("simulate.spd_fit_metric", "must be spd_frobenius or spd_cholesky"));
                }
                let spec = self.simulation_spec(&s.model, s.p, s.n)?;
                spec.validate().map_err(|e| CliError::validation("simulate", e.to_string()))?;
            }
            CommandKind::Bench => {
                let b = self.bench.clone().unwrap_or_default();
                positive("bench.replications", b.replications)?;
                if b.models.is_empty() {
                    return Err(CliError::validation("bench.models", "must not be empty"));
                }
                for (i, m) in b.models.iter().enumerate() {
                    parse_model(&format!("bench.models[{i}]"), m)?;
                    self.simulation_spec(m, b.p, b.n)?;
                }
            }
            CommandKind::Fit => {
                let f = self.fit.as_ref().ok_or_else(|| missing("fit"))?;
                require_file("fit.data", &f.data)?;
                if f.grid_size < 2 {
                    return Err(CliError::validation("fit.grid_size", "must be at least 2"));
                }
                if f.format == DataFormat::LifeTable && f.space != SpaceKind::Wasserstein {
                    return Err(CliError::validation("fit.space", "life tables give distributional (wasserstein) responses"));
                }
            }
            CommandKind::Predict => {
                let p = self.predict.as_ref().ok_or_else(|| missing("predict"))?;
                require_file("predict.model", &p.model)?;
                require_file("predict.covariates", &p.covariates)?;
            }
        }
        Ok(())
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(CliError::validation("methods", "must not be empty"));
        }
        self.methods
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Method::parse(m).ok_or_else(|| {
                    CliError::validation(format!("methods[{i}]"), format!("unknown method \"{m}\" (expected LFR, NLFR, SNLFR or NLFR-R)"))
                })
            })
            .collect()
    }

    pub fn simulation_spec(&self, model: &str, p: usize, n: usize) -> Result<SimulationSpec> {
        let id = parse_model("model", model)?;
        SimulationSpec::defaults(id, p, n, self.seed).map_err(|e| CliError::validation("p", e.to_string()))
    }

    /// Canonical single-line JSON, used for hashing and embedding. The
    /// output path is left out: where an artifact is written does not change
    /// its contents.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output.path = None;
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
