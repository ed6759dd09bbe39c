use std::path::Path;
use std::time::Instant;

use nlfr_core::estimators::{fit_lfr, fit_nlfr_profile, fit_snlfr};
use nlfr_core::evaluate::fit_lfr_as_nlfr;
use nlfr_core::{predict_many, ExperimentOptions, ExperimentResult, HTransform, LinkSpec, Method, ScalarLink, SimulationSpec};

use crate::config::{parse_model, DataFormat, Provenance, RunConfig};
use crate::emit::{self, Header, ModelDocument, NamedModel, PredictionRow, RunLine};
use crate::error::{CliError, Result};
use crate::ingest::{ingest_life_table, read_covariates, read_table};

/// Runs the configured command and writes its artifact.
pub fn execute(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let text = render(cfg, prov)?;
    emit::write_output(cfg.output.path.as_deref(), &text)
}

/// The artifact text for the configured command.
pub fn render(cfg: &RunConfig, prov: &Provenance) -> Result<String> {
    use crate::config::CommandKind::*;
    let start = Instant::now();
    let header = |secs: f64| Header { config: cfg, provenance: prov, run: RunLine::new(prov, secs) };
    match cfg.command {
        Simulate | Bench => {
            let results = run_experiments(cfg)?;
            let h = header(start.elapsed().as_secs_f64());
            Ok(match cfg.output.format {
                crate::config::OutputFormat::Csv => emit::results_csv(&results, &h),
                crate::config::OutputFormat::Json => emit::results_json(&results, &h),
            })
        }
        Fit => {
            let doc = fit(cfg)?;
            Ok(emit::model_json(&doc, &header(start.elapsed().as_secs_f64())))
        }
        Predict => {
            let (space, rows) = predict(cfg)?;
            Ok(emit::predictions_text(&space, &rows, &header(start.elapsed().as_secs_f64()), cfg.output.format))
        }
    }
}

fn experiment_options(cfg: &RunConfig, replications: usize) -> Result<ExperimentOptions> {
    let mut opts = ExperimentOptions {
        methods: cfg.parsed_methods()?,
        replications,
        parallelism: cfg.parallelism,
        optimizer: cfg.optimizer,
        c_grid: cfg.grid.points(),
        refine_c: cfg.grid.refine,
        ..Default::default()
    };
    if let Some(s) = &cfg.simulate {
        opts.spd_fit_metric = s.spd_fit_metric;
        opts.link_moments = s.link_moments;
        opts.beta_init = s.beta_init.clone();
    }
    Ok(opts)
}

fn run_one(spec: &SimulationSpec, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    nlfr_core::run_experiment(spec, opts).map_err(|e| CliError::Runtime(format!("model {}: {e}", spec.model_id)))
}

pub fn run_experiments(cfg: &RunConfig) -> Result<Vec<ExperimentResult>> {
    if let Some(s) = cfg.simulate.as_ref().filter(|_| cfg.command == crate::config::CommandKind::Simulate) {
        let mut spec = cfg.simulation_spec(&s.model, s.p, s.n)?;
        spec.n_test = s.n_test;
        return Ok(vec![run_one(&spec, &experiment_options(cfg, s.replications)?)?]);
    }
    let b = cfg.bench.clone().unwrap_or_default();
    let opts = experiment_options(cfg, b.replications)?;
    b.models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            parse_model(&format!("bench.models[{i}]"), m)?;
            run_one(&cfg.simulation_spec(m, b.p, b.n)?, &opts)
        })
        .collect()
}

pub fn fit(cfg: &RunConfig) -> Result<ModelDocument> {
    let f = cfg.fit.as_ref().ok_or_else(|| CliError::validation("fit", "section [fit] is required"))?;
    let loaded = match f.format {
        DataFormat::Table => read_table(&f.data, f.space, f.standardize)?,
        DataFormat::LifeTable => ingest_life_table(&f.data, f.grid_size, f.standardize)?,
    };
    let data = &loaded.data;
    let p = data.p();
    let links = match &f.links {
        Some(l) if l.len() != p => {
            return Err(CliError::validation("fit.links", format!("{} links for {p} covariates", l.len())));
        }
        Some(l) => LinkSpec::index(l.clone()),
        None => LinkSpec::index(vec![ScalarLink::Identity; p]),
    };
    let h = f.h.unwrap_or_else(|| HTransform::default_for(data.space.kind));
    let grid = cfg.grid.points();
    let models = cfg
        .parsed_methods()?
        .into_iter()
        .map(|method| {
            let model = match method {
                Method::Lfr => fit_lfr(data),
                Method::Nlfr => fit_nlfr_profile(data, &links, None, &cfg.optimizer),
                Method::Snlfr => fit_snlfr(data, &links, h, &grid, cfg.grid.refine),
                Method::NlfrReducing => fit_lfr_as_nlfr(data, h),
            }
            .map_err(|e| CliError::Runtime(format!("fitting {method}: {e}")))?;
            Ok(NamedModel { method, model })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelDocument::new(loaded.covariate_names, loaded.standardization, models))
}

pub fn predict(cfg: &RunConfig) -> Result<(nlfr_core::SpaceSpec, Vec<PredictionRow>)> {
    let pc = cfg.predict.as_ref().ok_or_else(|| CliError::validation("predict", "section [predict] is required"))?;
    let doc = emit::load_model(&pc.model)?;
    let first = doc.models.first().ok_or_else(|| CliError::validation("predict.model", "document holds no models"))?;
    let space = first.model.space;
    let x = read_covariates(&pc.covariates, &doc.covariate_names)?;
    let x = doc.standardization.as_ref().map_or(x.clone(), |s| s.apply(&x));
    let wanted = cfg.parsed_methods()?;
    let mut rows = Vec::new();
    for named in doc.models.iter().filter(|m| wanted.contains(&m.method)) {
        let preds = predict_many(&named.model, &x).map_err(|e| CliError::Runtime(format!("predicting {}: {e}", named.method)))?;
        for (i, obj) in preds.iter().enumerate() {
            rows.push(PredictionRow { row: i + 1, method: named.method, values: emit::object_values(obj) });
        }
    }
    if rows.is_empty() {
        return Err(CliError::validation("methods", "none of the requested methods is in the model document"));
    }
    Ok((space, rows))
}

/// Re-runs the config embedded in an artifact.
pub fn replay(artifact: &Path) -> Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(artifact).map_err(|e| CliError::io(format!("reading {}", artifact.display()), e))?;
    let json = emit::embedded_config(&text)
        .ok_or_else(|| CliError::validation("artifact", format!("{} has no embedded config", artifact.display())))?;
    let cfg: RunConfig = serde_json::from_str(&json)
        .map_err(|e| CliError::Config { path: artifact.to_path_buf(), message: e.to_string() })?;
    cfg.validate()?;
    Ok((cfg, json))
}
