//! Evaluation metrics and the multi-replication experiment harness.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::estimators::{
    estimate_moments, estimate_sigma_h, fit_lfr, fit_nlfr_fixed, fit_nlfr_profile, fit_snlfr, predict_many, Covariates,
    Dataset, FittedModel, HTransform,
};
use crate::kernel::OptimizerOptions;
use crate::metric::{distance, MetricObject, SpaceKind, SpaceSpec};
use crate::simgen::{generate_replication, LinkMoments, SimulationSpec, TrueRegression};
use crate::weights::lfr_reducing_links;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LFR")]
    Lfr,
    #[serde(rename = "NLFR")]
    Nlfr,
    #[serde(rename = "SNLFR")]
    Snlfr,
    /// NLFR with the LFR-reducing links at `β = Σ̂⁻¹σ̂_h` (no search).
    #[serde(rename = "NLFR-R")]
    NlfrReducing,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Lfr, Method::Nlfr, Method::Snlfr, Method::NlfrReducing];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lfr => "LFR",
            Method::Nlfr => "NLFR",
            Method::Snlfr => "SNLFR",
            Method::NlfrReducing => "NLFR-R",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn mean_sq_dist(space: &SpaceSpec, preds: &[MetricObject], targets: &[MetricObject]) -> Result<f64> {
    check_len(preds.len(), targets.len())?;
    if preds.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let mut total = 0.0;
    for (a, b) in preds.iter().zip(targets) {
        total += distance(space, a, b)?.powi(2);
    }
    Ok(total / preds.len() as f64)
}

/// `ñ⁻¹ Σ d²(m̂(X̃_i), Ỹ_i)` in the test set's metric.
pub fn mse_y(model: &FittedModel, test: &Dataset) -> Result<f64> {
    mse_y_under(model, test, test.space)
}

/// `mse_y` scored under an explicit metric.
pub fn mse_y_under(model: &FittedModel, test: &Dataset, metric: SpaceSpec) -> Result<f64> {
    check_len(model.space.dims, test.space.dims)?;
    mean_sq_dist(&metric, &predict_many(model, &test.x)?, &test.y)
}

/// `ñ⁻¹ Σ d²(m̂(X̃_i), m_⊕(X̃_i))` in the model's metric.
pub fn mse_m(model: &FittedModel, truth: &TrueRegression, test_x: &Covariates) -> Result<f64> {
    mse_m_under(model, truth, test_x, model.space)
}

pub fn mse_m_under(model: &FittedModel, truth: &TrueRegression, test_x: &Covariates, metric: SpaceSpec) -> Result<f64> {
    let targets = test_x.rows().map(|x| truth.eval(x)).collect::<Result<Vec<_>>>()?;
    mean_sq_dist(&metric, &predict_many(model, test_x)?, &targets)
}

/// `(1/R) Σ_r ‖β̂^[r] − β‖²`.
pub fn ase_beta(estimates: &[Vec<f64>], beta_true: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("estimates"));
    }
    let mut total = 0.0;
    for b in estimates {
        check_len(beta_true.len(), b.len())?;
        total += b.iter().zip(beta_true).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(total / estimates.len() as f64)
}

/// Where the derived links take `E[g(X)]` and `Cov(g(X), X)` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkMomentSource {
    Analytic,
    MonteCarlo { size: usize, seed: u64 },
    /// Empirical moments of the training covariates.
    Training,
}

impl LinkMomentSource {
    pub fn resolve(self, train: &Dataset) -> LinkMoments {
        match self {
            LinkMomentSource::Analytic => LinkMoments::Analytic,
            LinkMomentSource::MonteCarlo { size, seed } => LinkMoments::MonteCarlo { size, seed },
            LinkMomentSource::Training => LinkMoments::Sample { x: train.x.clone() },
        }
    }
}

/// Starting point of the profile search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaInit {
    Zero,
    Truth,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentOptions {
    pub methods: Vec<Method>,
    pub replications: usize,
    pub parallelism: usize,
    /// Geometry used for fitting SPD responses; scoring always uses both
    /// the Frobenius and Cholesky metrics.
    pub spd_fit_metric: SpaceKind,
    pub optimizer: OptimizerOptions,
    pub beta_init: BetaInit,
    pub c_grid: Vec<f64>,
    pub refine_c: bool,
    pub link_moments: LinkMomentSource,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Lfr, Method::Nlfr, Method::Snlfr],
            replications: 100,
            parallelism: 1,
            spd_fit_metric: SpaceKind::SpdFrobenius,
            optimizer: OptimizerOptions::default(),
            beta_init: BetaInit::Zero,
            c_grid: crate::estimators::default_c_grid(),
            refine_c: true,
            link_moments: LinkMomentSource::Training,
        }
    }
}

impl ExperimentOptions {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::SpecMismatch("replications must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::EmptyInput("methods"));
        }
        if !self.spd_fit_metric.is_spd() {
            return Err(Error::SpecMismatch("spd_fit_metric must be an SPD metric".into()));
        }
        if self.c_grid.is_empty() {
            return Err(Error::EmptyInput("c_grid"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub metric: SpaceKind,
    pub mse_y: f64,
    pub mse_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: Method,
    pub scores: Vec<Score>,
    pub beta_hat: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub failure: Option<String>,
}

impl ReplicationRecord {
    pub fn score(&self, metric: SpaceKind) -> Option<&Score> {
        self.scores.iter().find(|s| s.metric == metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over replications.
    pub sd: f64,
    /// `sd / √R`.
    pub se: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, se: sd / (n as f64).sqrt(), count: n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub metric: SpaceKind,
    /// Not applicable to this design (reported as "--").
    pub absent: bool,
    pub mse_y: Option<Summary>,
    pub mse_m: Option<Summary>,
    pub ase_beta: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: SimulationSpec,
    pub options: ExperimentOptions,
    pub results: Vec<MethodResult>,
    pub records: Vec<ReplicationRecord>,
    pub wall_time_secs: f64,
}

impl ExperimentResult {
    pub fn result(&self, method: Method, metric: SpaceKind) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method && r.metric == metric)
    }

    pub fn records_for(&self, method: Method) -> impl Iterator<Item = &ReplicationRecord> {
        self.records.iter().filter(move |r| r.method == method)
    }
}

/// Whether a method applies to a design (the separable fit needs
/// generalized-linear links).
pub fn method_applies(spec: &SimulationSpec, method: Method) -> bool {
    method != Method::Snlfr || spec.model_id.variant() != 3
}

/// Metrics each fitted model is scored under.
pub fn scoring_metrics(spec: &SimulationSpec) -> Vec<SpaceKind> {
    if spec.model_id.is_spd() {
        vec![SpaceKind::SpdFrobenius, SpaceKind::SpdCholesky]
    } else {
        vec![SpaceKind::Wasserstein]
    }
}

/// Fits `method` on `train` for a simulation design.
pub fn fit_method(spec: &SimulationSpec, opts: &ExperimentOptions, method: Method, train: &Dataset) -> Result<FittedModel> {
    let h = HTransform::default_for(train.space.kind);
    match method {
        Method::Lfr => fit_lfr(train),
        Method::Nlfr => {
            let links = spec.link_descriptor(opts.link_moments.resolve(train)).build()?;
            let init = match &opts.beta_init {
                BetaInit::Zero => None,
                BetaInit::Truth => Some(spec.beta_true.clone()),
                BetaInit::Given(b) => Some(b.clone()),
            };
            fit_nlfr_profile(train, &links, init.as_deref(), &opts.optimizer)
        }
        Method::Snlfr => {
            let links = spec.link_descriptor(opts.link_moments.resolve(train)).build()?;
            fit_snlfr(train, &links, h, &opts.c_grid, opts.refine_c)
        }
        Method::NlfrReducing => fit_lfr_as_nlfr(train, h),
    }
}

/// NLFR with the LFR-reducing links built from the scalar surrogate
/// `σ_s = σ̂_h`, evaluated at `β = Σ̂⁻¹σ_s`.
pub fn fit_lfr_as_nlfr(train: &Dataset, h: HTransform) -> Result<FittedModel> {
    let (mu, _, inv) = estimate_moments(&train.x)?;
    let sigma_s = estimate_sigma_h(train, &mu, h)?;
    let links = lfr_reducing_links(&mu, &inv, &sigma_s)?;
    let beta: Vec<f64> = (&inv * nalgebra::DVector::from_column_slice(&sigma_s)).iter().copied().collect();
    fit_nlfr_fixed(train, &links, &beta)
}

fn run_replication(spec: &SimulationSpec, opts: &ExperimentOptions, r: usize) -> Vec<ReplicationRecord> {
    let metrics = scoring_metrics(spec);
    let rep = match generate_replication(spec, r as u64) {
        Ok(rep) => rep,
        Err(e) => {
            return opts
                .methods
                .iter()
                .filter(|m| method_applies(spec, **m))
                .map(|&method| ReplicationRecord {
                    replication: r,
                    method,
                    scores: vec![],
                    beta_hat: None,
                    objective: None,
                    failure: Some(format!("data generation: {e}")),
                })
                .collect()
        }
    };
    let fit_space = if spec.model_id.is_spd() { rep.train.space.with_kind(opts.spd_fit_metric) } else { rep.train.space };
    let train = Dataset { space: fit_space, ..rep.train };
    let mut out = Vec::new();
    for &method in opts.methods.iter().filter(|m| method_applies(spec, **m)) {
        let scored = fit_method(spec, opts, method, &train).and_then(|model| {
            let preds = predict_many(&model, &rep.test.x)?;
            let scores = metrics
                .iter()
                .map(|&kind| {
                    let metric = rep.test.space.with_kind(kind);
                    Ok(Score {
                        metric: kind,
                        mse_y: mean_sq_dist(&metric, &preds, &rep.test.y)?,
                        mse_m: mean_sq_dist(&metric, &preds, &rep.test_truth)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((model, scores))
        });
        out.push(match scored {
            Ok((model, scores)) => ReplicationRecord {
                replication: r,
                method,
                scores,
                beta_hat: matches!(method, Method::Nlfr | Method::Snlfr).then(|| model.beta()).flatten(),
                objective: Some(model.diagnostics.objective),
                failure: None,
            },
            Err(e) => ReplicationRecord {
                replication: r,
                method,
                scores: vec![],
                beta_hat: None,
                objective: None,
                failure: Some(e.to_string()),
            },
        });
    }
    out
}

/// Aggregates per-replication records. Order of `records` does not matter.
pub fn aggregate(spec: &SimulationSpec, methods: &[Method], records: &[ReplicationRecord]) -> Vec<MethodResult> {
    let mut out = Vec::new();
    for &method in methods {
        for metric in scoring_metrics(spec) {
            if !method_applies(spec, method) {
                out.push(MethodResult { method, metric, absent: true, mse_y: None, mse_m: None, ase_beta: None, failures: 0 });
                continue;
            }
            let mut recs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == method).collect();
            recs.sort_by_key(|r| r.replication);
            let failures = recs.iter().filter(|r| r.failure.is_some()).count();
            let scores: Vec<&Score> = recs.iter().filter_map(|r| r.score(metric)).collect();
            let my: Vec<f64> = scores.iter().map(|s| s.mse_y).collect();
            let mm: Vec<f64> = scores.iter().map(|s| s.mse_m).collect();
            let betas: Vec<Vec<f64>> = recs.iter().filter_map(|r| r.beta_hat.clone()).collect();
            out.push(MethodResult {
                method,
                metric,
                absent: false,
                mse_y: Summary::of(&my),
                mse_m: Summary::of(&mm),
                ase_beta: ase_beta(&betas, &spec.beta_true).ok(),
                failures,
            });
        }
    }
    out
}

/// Runs `opts.replications` independent replications of `spec`. Replication
/// `r` draws from stream `r` of the spec seed, so results do not depend on
/// `parallelism` or scheduling.
pub fn run_experiment(spec: &SimulationSpec, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    spec.validate()?;
    opts.validate()?;
    let start = Instant::now();
    let reps: Vec<usize> = (0..opts.replications).collect();
    let workers = opts.parallelism.clamp(1, opts.replications);
    let mut records: Vec<ReplicationRecord> = if workers == 1 {
        reps.iter().flat_map(|&r| run_replication(spec, opts, r)).collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let reps = &reps;
                    s.spawn(move || {
                        reps.iter().skip(w).step_by(workers).flat_map(|&r| run_replication(spec, opts, r)).collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("replication worker panicked")).collect()
        })
    };
    records.sort_by_key(|r| (r.replication, r.method));
    let results = aggregate(spec, &opts.methods, &records);
    Ok(ExperimentResult {
        spec: spec.clone(),
        options: opts.clone(),
        results,
        records,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::QuantileFunction;
    use crate::simgen::ModelId;

    fn q(v: &[f64]) -> MetricObject {
        MetricObject::Quantile(QuantileFunction::new(v.to_vec()).unwrap())
    }

    #[test]
    fn ase_examples() {
        assert_eq!(ase_beta(&[vec![1.0, 2.0]], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ase_beta(&[vec![1.0, 0.0]], &[0.0, 0.0]).unwrap(), 1.0);
        let est = [vec![1.0, 0.0], vec![1.0, 2.0_f64.sqrt()]];
        assert!((ase_beta(&est, &[0.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(ase_beta(&[], &[0.0]), Err(Error::EmptyInput(_))));
        assert!(matches!(ase_beta(&[vec![1.0]], &[0.0, 0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mse_examples() {
        let space = SpaceSpec::wasserstein(2);
        let x = Covariates::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        // constant responses → LFR predicts the constant
        let train = Dataset::new(x.clone(), vec![q(&[0.0, 1.0]); 2], space).unwrap();
        let model = fit_lfr(&train).unwrap();
        assert_eq!(mse_y(&model, &train).unwrap(), 0.0);
        // both pairs at distance 2
        let far = Dataset::new(x, vec![q(&[2.0, 3.0]), q(&[-2.0, -1.0])], space).unwrap();
        assert!((mse_y(&model, &far).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn summary_single_value() {
        let s = Summary::of(&[0.3]).unwrap();
        assert_eq!((s.mean, s.sd, s.se, s.count), (0.3, 0.0, 0.0, 1));
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert_eq!(Method::parse("LOESS"), None);
    }

    #[test]
    fn snlfr_absent_for_additive_models() {
        let spec = SimulationSpec::defaults(ModelId::M13, 2, 50, 1).unwrap();
        let opts = ExperimentOptions { replications: 1, ..Default::default() };
        let res = run_experiment(&spec, &opts).unwrap();
        let s = res.result(Method::Snlfr, SpaceKind::Wasserstein).unwrap();
        assert!(s.absent && s.mse_m.is_none());
        assert_eq!(res.records_for(Method::Snlfr).count(), 0);
        let l = res.result(Method::Lfr, SpaceKind::Wasserstein).unwrap();
        assert_eq!(l.mse_m.unwrap().se, 0.0);
    }
}
