//! Moment estimators and the LFR / NLFR / SNLFR fits.
//!
//! Every fitted model predicts through the Hilbert representation
//! `m̂(x) = β̂⁰ + Σ_j σ̂^(j) f_j(·)` followed by metric projection. For the
//! linear flavor `f(x) = Σ̂⁻¹(x − μ̂)`; for the nonlinear flavors `f` comes
//! from the link set evaluated at `β̂` (or at `ĉ_h Σ̂⁻¹σ̂_h`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernel::{brent_min, nelder_mead, spd_inverse_ridge, OptimizerOptions};
use crate::metric::{MetricObject, RawObject, SpaceKind, SpaceSpec};
use crate::weights::{effective_beta, BoundLinks, LinkForm, LinkSpec, SeparableContext, WeightFlavor};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Row-major `n × p` covariate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Covariates {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * p);
        for r in rows {
            check_len(p, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self { n, p, data })
    }

    pub fn from_row_major(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        check_len(n * p, data.len())?;
        Ok(Self { n, p, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.p.max(1)).take(self.n)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.data[i * self.p + j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Covariates,
    pub y: Vec<MetricObject>,
    pub space: SpaceSpec,
}

impl Dataset {
    pub fn new(x: Covariates, y: Vec<MetricObject>, space: SpaceSpec) -> Result<Self> {
        space.validate()?;
        check_len(x.n(), y.len())?;
        if x.n() < 2 {
            return Err(Error::BadData(format!("need at least 2 observations, got {}", x.n())));
        }
        if x.p() == 0 {
            return Err(Error::BadData("need at least one covariate".into()));
        }
        if let Some(pos) = x.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadData(format!("non-finite covariate in row {}", pos / x.p())));
        }
        for obj in &y {
            space.check_object(obj)?;
        }
        Ok(Self { x, y, space })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn p(&self) -> usize {
        self.x.p()
    }

    /// Responses in Hilbert coordinates, row-major `n × D`.
    pub fn response_coords(&self) -> Result<Vec<f64>> {
        let d = self.space.coord_len();
        let mut out = Vec::with_capacity(self.n() * d);
        for y in &self.y {
            out.extend(self.space.coords(y)?);
        }
        Ok(out)
    }
}

/// Built-in real-valued summaries `h(Y)` for the separable weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HTransform {
    /// Grid mean of the quantile values minus its sample mean.
    DistMeanCentered,
    /// `trace(Y)` minus its sample mean.
    SpdTraceCentered,
    /// Observation index `i` (1-based), uncentered. Test helper.
    Index,
    /// Constant zero.
    Constant,
}

impl HTransform {
    pub fn default_for(kind: SpaceKind) -> Self {
        if kind.is_spd() {
            HTransform::SpdTraceCentered
        } else {
            HTransform::DistMeanCentered
        }
    }

    pub fn values(&self, data: &Dataset) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match self {
            HTransform::DistMeanCentered => data
                .y
                .iter()
                .map(|y| {
                    y.as_quantile()
                        .map(|q| q.values().iter().sum::<f64>() / q.grid_size() as f64)
                        .ok_or_else(|| Error::SpecMismatch("dist_mean_centered needs quantile responses".into()))
                })
                .collect::<Result<_>>()?,
            HTransform::SpdTraceCentered => data
                .y
                .iter()
                .map(|y| {
                    y.as_spd()
                        .map(|s| s.entries().trace())
                        .ok_or_else(|| Error::SpecMismatch("spd_trace_centered needs SPD responses".into()))
                })
                .collect::<Result<_>>()?,
            HTransform::Index => return Ok((1..=data.n()).map(|i| i as f64).collect()),
            HTransform::Constant => return Ok(vec![0.0; data.n()]),
        };
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        Ok(raw.into_iter().map(|v| v - mean).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    pub mu_hat: Vec<f64>,
    pub sigma_mat_hat: DMatrix<f64>,
    pub sigma_mat_inv: DMatrix<f64>,
    pub beta0_hat: MetricObject,
    pub sigma_obj_hat: Vec<RawObject>,
    pub sigma_h_hat: Option<Vec<f64>>,
}

/// `μ̂ = n⁻¹ΣX_i`, `Σ̂ = n⁻¹Σ(X_i−μ̂)(X_i−μ̂)ᵀ` and its ridge inverse.
pub fn estimate_moments(x: &Covariates) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = (x.n(), x.p());
    if n < 2 {
        return Err(Error::BadData(format!("need at least 2 observations, got {n}")));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadData("non-finite covariate".into()));
    }
    let mut mu = vec![0.0; p];
    for row in x.rows() {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut sigma = DMatrix::zeros(p, p);
    for row in x.rows() {
        for a in 0..p {
            let da = row[a] - mu[a];
            for b in a..p {
                sigma[(a, b)] += da * (row[b] - mu[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = sigma[(a, b)] / n as f64;
            sigma[(a, b)] = v;
            sigma[(b, a)] = v;
        }
    }
    let inv = spd_inverse_ridge(&sigma);
    Ok((mu, sigma, inv))
}

/// `β̂⁰ = n⁻¹ΣY_i` (projected) and `σ̂^(j) = n⁻¹ΣY_i(X_ij − μ̂_j)` (raw), in
/// the space's Hilbert coordinates.
pub fn estimate_object_moments(data: &Dataset, mu_hat: &[f64]) -> Result<(MetricObject, Vec<RawObject>)> {
    let coords = data.response_coords()?;
    let (b0, sig) = object_moment_coords(data, &coords, mu_hat)?;
    let space = &data.space;
    let mut b0p = b0;
    space.project_coords(&mut b0p);
    let beta0 = space.object_from_coords(&b0p)?;
    Ok((beta0, sig.into_iter().map(|s| space.raw_from_coords(s)).collect()))
}

fn object_moment_coords(data: &Dataset, coords: &[f64], mu_hat: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (n, p) = (data.n(), data.p());
    check_len(p, mu_hat.len())?;
    let d = data.space.coord_len();
    let mut b0 = vec![0.0; d];
    let mut sig = vec![vec![0.0; d]; p];
    for i in 0..n {
        let y = &coords[i * d..(i + 1) * d];
        let xi = data.x.row(i);
        for (b, v) in b0.iter_mut().zip(y) {
            *b += v;
        }
        for j in 0..p {
            let c = xi[j] - mu_hat[j];
            for (s, v) in sig[j].iter_mut().zip(y) {
                *s += c * v;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    b0.iter_mut().for_each(|v| *v *= inv_n);
    sig.iter_mut().flatten().for_each(|v| *v *= inv_n);
    Ok((b0, sig))
}

/// `σ̂_h = n⁻¹ Σ h(Y_i)(X_i − μ̂)`.
pub fn estimate_sigma_h(data: &Dataset, mu_hat: &[f64], h: HTransform) -> Result<Vec<f64>> {
    check_len(data.p(), mu_hat.len())?;
    let hv = h.values(data)?;
    let n = data.n() as f64;
    Ok((0..data.p())
        .map(|j| data.x.column(j).zip(&hv).map(|(x, hy)| hy * (x - mu_hat[j])).sum::<f64>() / n)
        .collect())
}

/// Sample Fréchet mean.
pub fn frechet_mean(data: &Dataset) -> Result<MetricObject> {
    crate::metric::weighted_frechet_mean(&data.space, &data.y, &vec![1.0; data.y.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    /// No parameter search (LFR, or NLFR at a supplied β).
    ClosedForm,
    Converged,
    MaxIterations,
    /// Objective constant in the parameter; the initial value was kept.
    FlatObjective,
    GridSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Training objective `n⁻¹ Σ d²(Y_i, m̂(X_i))` at the fitted parameter.
    pub objective: f64,
    pub status: FitStatus,
    pub evaluations: usize,
    /// Objective at every optimizer start point (NLFR) or grid point (SNLFR).
    pub start_values: Vec<f64>,
}

/// Moments in Hilbert coordinates, cached for fast prediction.
#[derive(Debug, Clone, PartialEq)]
struct HilbertMoments {
    beta0: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

impl HilbertMoments {
    fn from_moments(space: &SpaceSpec, m: &MomentEstimates) -> Result<Self> {
        Ok(Self {
            beta0: space.coords(&m.beta0_hat)?,
            sigma: m.sigma_obj_hat.iter().map(|s| space.raw_coords(s)).collect::<Result<_>>()?,
        })
    }

    /// `β̂⁰ + Σ_j f_j σ̂^(j)` into `out`.
    fn combine(&self, f: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.beta0);
        for (fj, s) in f.iter().zip(&self.sigma) {
            for (o, v) in out.iter_mut().zip(s) {
                *o += fj * v;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FittedModelDoc {
    version: u32,
    space: SpaceSpec,
    links: Option<LinkSpec>,
    moments: MomentEstimates,
    flavor: WeightFlavor,
    diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FittedModelDoc", into = "FittedModelDoc")]
pub struct FittedModel {
    pub space: SpaceSpec,
    pub links: Option<LinkSpec>,
    pub moments: MomentEstimates,
    pub flavor: WeightFlavor,
    pub diagnostics: FitDiagnostics,
    cache: HilbertMoments,
}

impl TryFrom<FittedModelDoc> for FittedModel {
    type Error = Error;
    fn try_from(d: FittedModelDoc) -> Result<Self> {
        if d.version != MODEL_FORMAT_VERSION {
            return Err(Error::Serialization(format!("unsupported model version {}", d.version)));
        }
        FittedModel::assemble(d.space, d.links, d.moments, d.flavor, d.diagnostics)
    }
}

impl From<FittedModel> for FittedModelDoc {
    fn from(m: FittedModel) -> Self {
        Self {
            version: MODEL_FORMAT_VERSION,
            space: m.space,
            links: m.links,
            moments: m.moments,
            flavor: m.flavor,
            diagnostics: m.diagnostics,
        }
    }
}

impl FittedModel {
    fn assemble(
        space: SpaceSpec,
        links: Option<LinkSpec>,
        moments: MomentEstimates,
        flavor: WeightFlavor,
        diagnostics: FitDiagnostics,
    ) -> Result<Self> {
        space.validate()?;
        match (&flavor, &links) {
            (WeightFlavor::Linear, _) => {}
            (_, None) => return Err(Error::SpecMismatch("nonlinear flavor requires links".into())),
            (_, Some(l)) => {
                check_len(moments.mu_hat.len(), l.p())?;
                effective_beta(l, &flavor, separable_context(&moments))?;
            }
        }
        let cache = HilbertMoments::from_moments(&space, &moments)?;
        Ok(Self { space, links, moments, flavor, diagnostics, cache })
    }

    pub fn p(&self) -> usize {
        self.moments.mu_hat.len()
    }

    /// Fitted link parameter (`β̂` or `ĉ_h Σ̂⁻¹σ̂_h`); `None` for LFR.
    pub fn beta(&self) -> Option<Vec<f64>> {
        let links = self.links.as_ref()?;
        effective_beta(links, &self.flavor, separable_context(&self.moments)).ok()
    }

    fn evaluator(&self) -> Result<LinkEvaluator<'_>> {
        match (&self.flavor, &self.links) {
            (WeightFlavor::Linear, _) => Ok(LinkEvaluator::Linear),
            (flavor, Some(links)) => {
                let beta = effective_beta(links, flavor, separable_context(&self.moments))?;
                Ok(LinkEvaluator::Bound(links.bind(&beta)?))
            }
            (_, None) => Err(Error::SpecMismatch("nonlinear flavor requires links".into())),
        }
    }

    /// Pre-projection prediction in the moment representation.
    pub fn predict_raw(&self, x: &[f64]) -> Result<RawObject> {
        check_len(self.p(), x.len())?;
        let ev = self.evaluator()?;
        let mut f = vec![0.0; self.p()];
        ev.eval(&self.moments, x, &mut f);
        let mut out = vec![0.0; self.space.coord_len()];
        self.cache.combine(&f, &mut out);
        Ok(self.space.raw_from_coords(out))
    }

    /// Weights `ŝ(X_i, x)` of the training covariates at `x`.
    pub fn weights(&self, train_x: &Covariates, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.p(), x.len())?;
        check_len(self.p(), train_x.p())?;
        let ev = self.evaluator()?;
        let mut f = vec![0.0; self.p()];
        ev.eval(&self.moments, x, &mut f);
        let mu = &self.moments.mu_hat;
        Ok(train_x.rows().map(|xi| 1.0 + (0..f.len()).map(|j| (xi[j] - mu[j]) * f[j]).sum::<f64>()).collect())
    }

    /// Pre-projection prediction as the weighted sum `n⁻¹ Σ ŝ(X_i, x) Y_i`.
    pub fn predict_raw_weighted_sum(&self, train: &Dataset, x: &[f64]) -> Result<RawObject> {
        let w = self.weights(&train.x, x)?;
        let n = w.len() as f64;
        let scaled: Vec<f64> = w.iter().map(|v| v / n).collect();
        crate::metric::combine(&self.space, &scaled, &train.y)
    }
}

enum LinkEvaluator<'a> {
    Linear,
    Bound(BoundLinks<'a>),
}

impl LinkEvaluator<'_> {
    fn eval(&self, m: &MomentEstimates, x: &[f64], out: &mut [f64]) {
        match self {
            LinkEvaluator::Linear => {
                let p = m.mu_hat.len();
                for j in 0..p {
                    out[j] = (0..p).map(|k| m.sigma_mat_inv[(j, k)] * (x[k] - m.mu_hat[k])).sum();
                }
            }
            LinkEvaluator::Bound(b) => b.eval(x, &m.mu_hat, out),
        }
    }
}

fn separable_context(m: &MomentEstimates) -> Option<SeparableContext<'_>> {
    m.sigma_h_hat.as_deref().map(|s| SeparableContext { sigma_h: s, sigma_inv: &m.sigma_mat_inv })
}

/// `m̂(x)`: moment representation, then metric projection.
pub fn predict(model: &FittedModel, x: &[f64]) -> Result<MetricObject> {
    let raw = model.predict_raw(x)?;
    crate::metric::project(&model.space, &raw)
}

pub fn predict_many(model: &FittedModel, xs: &Covariates) -> Result<Vec<MetricObject>> {
    check_len(model.p(), xs.p())?;
    let ev = model.evaluator()?;
    let mut f = vec![0.0; model.p()];
    let mut out = vec![0.0; model.space.coord_len()];
    xs.rows()
        .map(|x| {
            ev.eval(&model.moments, x, &mut f);
            model.cache.combine(&f, &mut out);
            model.space.project_coords(&mut out);
            model.space.object_from_coords(&out)
        })
        .collect()
}

/// Training data with everything the inner objective needs precomputed.
struct Workspace<'a> {
    data: &'a Dataset,
    y: Vec<f64>,
    moments: MomentEstimates,
    cache: HilbertMoments,
}

impl<'a> Workspace<'a> {
    fn new(data: &'a Dataset, sigma_h: Option<Vec<f64>>) -> Result<Self> {
        let (mu, sigma, inv) = estimate_moments(&data.x)?;
        let y = data.response_coords()?;
        let (b0, sig) = object_moment_coords(data, &y, &mu)?;
        let space = &data.space;
        let mut b0p = b0;
        space.project_coords(&mut b0p);
        let beta0 = space.object_from_coords(&b0p)?;
        let moments = MomentEstimates {
            mu_hat: mu,
            sigma_mat_hat: sigma,
            sigma_mat_inv: inv,
            beta0_hat: beta0,
            sigma_obj_hat: sig.into_iter().map(|s| space.raw_from_coords(s)).collect(),
            sigma_h_hat: sigma_h,
        };
        let cache = HilbertMoments::from_moments(space, &moments)?;
        Ok(Self { data, y, moments, cache })
    }

    /// `n⁻¹ Σ d²(Y_i, m̂(X_i))` with the links bound at some parameter.
    fn objective(&self, ev: &LinkEvaluator<'_>) -> f64 {
        let space = &self.data.space;
        let d = space.coord_len();
        let mut f = vec![0.0; self.data.p()];
        let mut pred = vec![0.0; d];
        let mut total = 0.0;
        for (i, x) in self.data.x.rows().enumerate() {
            ev.eval(&self.moments, x, &mut f);
            self.cache.combine(&f, &mut pred);
            space.project_coords(&mut pred);
            total += space.coord_dist2(&pred, &self.y[i * d..(i + 1) * d]);
        }
        total / self.data.n() as f64
    }

    fn objective_at(&self, links: &LinkSpec, beta: &[f64]) -> f64 {
        match links.bind(beta) {
            Ok(b) => self.objective(&LinkEvaluator::Bound(b)),
            Err(_) => f64::NAN,
        }
    }

    fn finish(self, links: Option<LinkSpec>, flavor: WeightFlavor, diagnostics: FitDiagnostics) -> Result<FittedModel> {
        FittedModel::assemble(self.data.space, links, self.moments, flavor, diagnostics)
    }
}

pub fn fit_lfr(data: &Dataset) -> Result<FittedModel> {
    let ws = Workspace::new(data, None)?;
    let objective = ws.objective(&LinkEvaluator::Linear);
    let diagnostics = FitDiagnostics { objective, status: FitStatus::ClosedForm, evaluations: 1, start_values: vec![] };
    ws.finish(None, WeightFlavor::Linear, diagnostics)
}

/// NLFR with a supplied parameter (no profile step).
pub fn fit_nlfr_fixed(data: &Dataset, links: &LinkSpec, beta: &[f64]) -> Result<FittedModel> {
    check_links(data, links)?;
    check_len(links.q(), beta.len())?;
    let ws = Workspace::new(data, None)?;
    let objective = ws.objective_at(links, beta);
    let diagnostics = FitDiagnostics { objective, status: FitStatus::ClosedForm, evaluations: 1, start_values: vec![] };
    ws.finish(Some(links.clone()), WeightFlavor::Nonlinear { beta: beta.to_vec() }, diagnostics)
}

fn check_links(data: &Dataset, links: &LinkSpec) -> Result<()> {
    if links.p() != data.p() {
        return Err(Error::SpecMismatch(format!("links have {} components but data has {} covariates", links.p(), data.p())));
    }
    Ok(())
}

/// Profile estimation: `β̂ = argmin_β n⁻¹ Σ d²(Y_i, m̂(X_i, β))` by
/// multistart Nelder–Mead, with the inner fit given by the Hilbert
/// representation plus projection. `init` defaults to the zero vector.
pub fn fit_nlfr_profile(
    data: &Dataset,
    links: &LinkSpec,
    init: Option<&[f64]>,
    opts: &OptimizerOptions,
) -> Result<FittedModel> {
    check_links(data, links)?;
    let q = links.q();
    let init = init.map_or_else(|| vec![0.0; q], <[f64]>::to_vec);
    check_len(q, init.len())?;
    let ws = Workspace::new(data, None)?;

    if links.is_trivially_zero() {
        let objective = ws.objective_at(links, &init);
        let diagnostics =
            FitDiagnostics { objective, status: FitStatus::FlatObjective, evaluations: 1, start_values: vec![objective] };
        return ws.finish(Some(links.clone()), WeightFlavor::Nonlinear { beta: init }, diagnostics);
    }

    let res = nelder_mead(|b| ws.objective_at(links, b), &init, opts).map_err(|e| match e {
        Error::BadObjective => Error::FitFailed("objective not finite at any start point".into()),
        other => other,
    })?;
    let lo = res.start_values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = res.start_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flat_tol = 1e-12 * (1.0 + lo.abs());
    let flat = hi - lo <= flat_tol && lo - res.value <= flat_tol;
    let (beta, status, objective) = if flat {
        (init.clone(), FitStatus::FlatObjective, res.start_values[0])
    } else if res.converged {
        (res.argmin, FitStatus::Converged, res.value)
    } else {
        (res.argmin, FitStatus::MaxIterations, res.value)
    };
    let diagnostics = FitDiagnostics { objective, status, evaluations: res.evaluations, start_values: res.start_values };
    ws.finish(Some(links.clone()), WeightFlavor::Nonlinear { beta }, diagnostics)
}

/// `c_grid` default: 201 equally spaced points on `[−5, 5]`.
pub fn default_c_grid() -> Vec<f64> {
    (0..201).map(|i| -5.0 + 0.05 * i as f64).collect()
}

/// SNLFR: `ĉ_h = argmin_{c ∈ grid} n⁻¹ Σ d²(Y_i, m̂(X_i, c))` with
/// `β = c Σ̂⁻¹σ̂_h`, optionally refined by Brent's method between the grid
/// neighbours of the best point.
pub fn fit_snlfr(data: &Dataset, links: &LinkSpec, h: HTransform, c_grid: &[f64], refine: bool) -> Result<FittedModel> {
    check_links(data, links)?;
    if links.form() != LinkForm::GeneralizedLinear {
        return Err(Error::SpecMismatch("separable fit needs generalized-linear links".into()));
    }
    if c_grid.is_empty() {
        return Err(Error::EmptyInput("c_grid"));
    }
    if c_grid.iter().any(|c| !c.is_finite()) {
        return Err(Error::BadData("c_grid entries must be finite".into()));
    }
    let (mu, _, _) = estimate_moments(&data.x)?;
    let sigma_h = estimate_sigma_h(data, &mu, h)?;
    let ws = Workspace::new(data, Some(sigma_h))?;
    let eval_c = |c: f64| -> f64 {
        let flavor = WeightFlavor::Separable { c_h: c, h };
        match effective_beta(links, &flavor, separable_context(&ws.moments)) {
            Ok(beta) => ws.objective_at(links, &beta),
            Err(_) => f64::NAN,
        }
    };
    let values: Vec<f64> = c_grid.iter().map(|&c| eval_c(c)).collect();
    // first (smallest-index) minimum wins ties
    let mut best = None::<usize>;
    for (k, v) in values.iter().enumerate() {
        if v.is_finite() && best.map_or(true, |b| *v < values[b]) {
            best = Some(k);
        }
    }
    let k = best.ok_or_else(|| Error::FitFailed("objective not finite on any grid point".into()))?;
    let (mut c_hat, mut obj) = (c_grid[k], values[k]);
    let mut evaluations = c_grid.len();
    if refine && c_grid.len() > 1 {
        let lo = c_grid[k.saturating_sub(1)];
        let hi = c_grid[(k + 1).min(c_grid.len() - 1)];
        if lo < hi {
            let mut count = 0;
            let c_ref = brent_min(
                |c| {
                    count += 1;
                    let v = eval_c(c);
                    if v.is_finite() {
                        v
                    } else {
                        f64::INFINITY
                    }
                },
                lo,
                hi,
                1e-8,
            );
            evaluations += count;
            let v = eval_c(c_ref);
            if v < obj {
                c_hat = c_ref;
                obj = v;
            }
        }
    }
    let diagnostics = FitDiagnostics { objective: obj, status: FitStatus::GridSearch, evaluations, start_values: values };
    ws.finish(Some(links.clone()), WeightFlavor::Separable { c_h: c_hat, h }, diagnostics)
}

/// Training objective of any fitted model on a dataset.
pub fn training_objective(model: &FittedModel, data: &Dataset) -> Result<f64> {
    let preds = predict_many(model, &data.x)?;
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(&data.y) {
        total += crate::metric::distance(&data.space, p, y)?.powi(2);
    }
    Ok(total / data.n() as f64)
}

/// `Σ̂⁻¹ σ` for a real vector `σ`.
pub fn sigma_inv_times(m: &MomentEstimates, v: &[f64]) -> Vec<f64> {
    (&m.sigma_mat_inv * DVector::from_column_slice(v)).iter().copied().collect()
}
