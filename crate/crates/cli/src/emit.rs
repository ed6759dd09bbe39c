//! Artifact writers. Every artifact carries the seed, the config hash and the
//! canonical config; everything that varies between identical runs (time,
//! wall clock, config path, flag overrides) sits on one `run` line.

use std::io::Write;
use std::path::Path;

use nlfr_core::metric::{MetricObject, SpaceSpec};
use nlfr_core::{ExperimentResult, FittedModel, Method};
use serde::{Deserialize, Serialize};

use crate::config::{OutputFormat, Provenance, RunConfig};
use crate::error::{CliError, Result};
use crate::ingest::Standardization;

pub const MODEL_DOC_FORMAT: &str = "nlfr-model";
pub const MODEL_DOC_VERSION: u32 = 1;

/// Volatile run context, isolated to a single line in every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLine {
    pub unix_time: u64,
    pub wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    pub overrides: Vec<crate::config::Override>,
}

impl RunLine {
    pub fn new(prov: &Provenance, wall_time_secs: f64) -> Self {
        let unix_time = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self { unix_time, wall_time_secs, config_path: prov.config_path.clone(), overrides: prov.overrides.clone() }
    }
}

pub struct Header<'a> {
    pub config: &'a RunConfig,
    pub provenance: &'a Provenance,
    pub run: RunLine,
}

impl Header<'_> {
    fn csv_lines(&self) -> String {
        format!(
            "# run: {}\n# tool: {}\n# seed: {}\n# config_sha256: {}\n# config: {}\n",
            serde_json::to_string(&self.run).expect("serializable"),
            self.provenance.tool,
            self.config.seed,
            self.provenance.config_sha256,
            self.config.canonical_json()
        )
    }

    /// Opening of a JSON artifact, up to and including the key of the payload.
    fn json_open(&self, payload_key: &str) -> String {
        format!(
            "{{\n\"run\": {},\n\"tool\": {},\n\"seed\": {},\n\"config_sha256\": {},\n\"config\": {},\n\"{payload_key}\": ",
            serde_json::to_string(&self.run).expect("serializable"),
            serde_json::to_string(&self.provenance.tool).expect("serializable"),
            self.config.seed,
            serde_json::to_string(&self.provenance.config_sha256).expect("serializable"),
            self.config.canonical_json()
        )
    }
}

/// Writes to `path`, or standard output when absent.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(format!("writing {}", p.display()), e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::io("writing standard output", e)),
    }
}

fn fmt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_string(), |x| format!("{x}"))
}

fn csv_body(header: &[String], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub const RESULT_COLUMNS: [&str; 9] = ["model", "method", "n", "p", "metric", "MSE_Y", "se_Y", "MSE_m", "se_m"];

/// One row per (model, method, n, p, metric); absent methods print `--`.
pub fn results_csv(results: &[ExperimentResult], h: &Header<'_>) -> String {
    let mut rows = Vec::new();
    for res in results {
        for m in &res.results {
            rows.push(vec![
                res.spec.model_id.to_string(),
                m.method.to_string(),
                res.spec.n.to_string(),
                res.spec.p.to_string(),
                m.metric.name().to_string(),
                fmt_num(m.mse_y.map(|s| s.mean)),
                fmt_num(m.mse_y.map(|s| s.se)),
                fmt_num(m.mse_m.map(|s| s.mean)),
                fmt_num(m.mse_m.map(|s| s.se)),
            ]);
        }
    }
    h.csv_lines() + &csv_body(&RESULT_COLUMNS.map(String::from), rows)
}

/// Full results (aggregates and per-replication records).
pub fn results_json(results: &[ExperimentResult], h: &Header<'_>) -> String {
    let stable: Vec<ExperimentResult> = results.iter().cloned().map(|r| ExperimentResult { wall_time_secs: 0.0, ..r }).collect();
    h.json_open("results") + &serde_json::to_string_pretty(&stable).expect("serializable") + "\n}\n"
}

pub fn emit_results(results: &[ExperimentResult], h: &Header<'_>, format: OutputFormat, path: Option<&Path>) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => results_csv(results, h),
        OutputFormat::Json => results_json(results, h),
    };
    write_output(path, &text)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedModel {
    pub method: Method,
    pub model: FittedModel,
}

/// Fitted models with what is needed to apply them to new covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub covariate_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    pub models: Vec<NamedModel>,
}

impl ModelDocument {
    pub fn new(covariate_names: Vec<String>, standardization: Option<Standardization>, models: Vec<NamedModel>) -> Self {
        Self { format: MODEL_DOC_FORMAT.into(), version: MODEL_DOC_VERSION, covariate_names, standardization, models }
    }
}

pub fn model_json(doc: &ModelDocument, h: &Header<'_>) -> String {
    h.json_open("document") + &serde_json::to_string_pretty(doc).expect("serializable") + "\n}\n"
}

/// Reads the `document` of a model artifact.
pub fn load_model(path: &Path) -> Result<ModelDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let bad = |m: String| CliError::validation("predict.model", format!("{}: {m}", path.display()));
    let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let doc = v.get_mut("document").map(serde_json::Value::take).ok_or_else(|| bad("no `document` key".into()))?;
    let doc: ModelDocument = serde_json::from_value(doc).map_err(|e| bad(e.to_string()))?;
    if doc.format != MODEL_DOC_FORMAT || doc.version != MODEL_DOC_VERSION {
        return Err(bad(format!("unsupported model document {} v{}", doc.format, doc.version)));
    }
    Ok(doc)
}

/// Column names for an object's coordinates: `q_k` or `s_i_j`.
pub fn value_columns(space: &SpaceSpec) -> Vec<String> {
    if space.kind.is_spd() {
        let m = space.dims;
        (1..=m).flat_map(|i| (1..=m).map(move |j| format!("s_{i}_{j}"))).collect()
    } else {
        (1..=space.dims).map(|k| format!("q_{k}")).collect()
    }
}

/// Object values in the order of [`value_columns`].
pub fn object_values(obj: &MetricObject) -> Vec<f64> {
    match obj {
        MetricObject::Quantile(q) => q.values().to_vec(),
        MetricObject::Spd(s) => {
            let m = s.dim();
            (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| s.entries()[(i, j)]).collect()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub row: usize,
    pub method: Method,
    pub values: Vec<f64>,
}

pub fn predictions_text(
    space: &SpaceSpec,
    rows: &[PredictionRow],
    h: &Header<'_>,
    format: OutputFormat,
) -> String {
    match format {
        OutputFormat::Csv => {
            let mut header = vec!["row".to_string(), "method".to_string()];
            header.extend(value_columns(space));
            let body = rows
                .iter()
                .map(|r| {
                    let mut v = vec![r.row.to_string(), r.method.to_string()];
                    v.extend(r.values.iter().map(|x| format!("{x}")));
                    v
                })
                .collect();
            h.csv_lines() + &csv_body(&header, body)
        }
        OutputFormat::Json => {
            h.json_open("predictions") + &serde_json::to_string_pretty(rows).expect("serializable") + "\n}\n"
        }
    }
}

/// The embedded config of an artifact (CSV or JSON), as canonical JSON text.
pub fn embedded_config(text: &str) -> Option<String> {
    if let Some(line) = text.lines().find_map(|l| l.strip_prefix("# config: ")) {
        return Some(line.to_string());
    }
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    v.get("config").map(|c| c.to_string())
}

/// Drops the `run` line so two artifacts can be compared.
pub fn without_run_line(text: &str) -> String {
    text.lines()
        .filter(|l| !(l.starts_with("# run: ") || l.starts_with("\"run\": ")))
        .map(|l| format!("{l}\n"))
        .collect()
}
