//! Simulation designs: covariates, true regression functions, noisy
//! distribution / SPD responses, and links derived from `g`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::estimators::{Covariates, Dataset};
use crate::kernel::{cholesky_factor, norm_cdf, norm_quantile, spd_inverse_ridge, symmetrize};
use crate::metric::{quantile_grid, MetricObject, QuantileFunction, SpaceSpec, SpdMatrix};
use crate::weights::{Bound, Link, LinkDescriptor, LinkForm, LinkSpec};

/// Correlation base of the latent Gaussian covariates: `Σ'_{ij} = ρ^{|i−j|}`.
pub const COVARIATE_RHO: f64 = 0.5;
const DESIGN_BETA: [f64; 5] = [1.0, -0.5, 2.0, 1.5, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "1.1")]
    M11,
    #[serde(rename = "1.2")]
    M12,
    #[serde(rename = "1.3")]
    M13,
    #[serde(rename = "2.1")]
    M21,
    #[serde(rename = "2.2")]
    M22,
    #[serde(rename = "2.3")]
    M23,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [ModelId::M11, ModelId::M12, ModelId::M13, ModelId::M21, ModelId::M22, ModelId::M23];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::SpecMismatch(format!("unknown model '{s}'")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::M11 => "1.1",
            ModelId::M12 => "1.2",
            ModelId::M13 => "1.3",
            ModelId::M21 => "2.1",
            ModelId::M22 => "2.2",
            ModelId::M23 => "2.3",
        }
    }

    /// Distribution responses (1.x) vs SPD responses (2.x).
    pub fn is_spd(self) -> bool {
        matches!(self, ModelId::M21 | ModelId::M22 | ModelId::M23)
    }

    /// 1, 2 or 3: linear index, squared index, or additive terms.
    pub fn variant(self) -> u8 {
        match self {
            ModelId::M11 | ModelId::M21 => 1,
            ModelId::M12 | ModelId::M22 => 2,
            ModelId::M13 | ModelId::M23 => 3,
        }
    }

    /// Copula (uniform) covariates for variant 1, Gaussian otherwise.
    pub fn copula_covariates(self) -> bool {
        self.variant() == 1
    }

    /// Whether the derived link depends on `x` only through `βᵀ(x − μ)`.
    pub fn link_form(self) -> LinkForm {
        if self.variant() == 3 {
            LinkForm::General
        } else {
            LinkForm::GeneralizedLinear
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub model_id: ModelId,
    pub p: usize,
    pub n: usize,
    pub n_test: usize,
    pub beta_true: Vec<f64>,
    pub alpha: Vec<f64>,
    pub u0: f64,
    pub v0: f64,
    pub v1: f64,
    pub v2: f64,
    /// Number of squared terms in `g₁` (variant 3 only).
    pub p1: usize,
    /// Quantile grid size or SPD dimension.
    pub m_obj: usize,
    pub seed: u64,
}

impl SimulationSpec {
    /// Default design constants for `p ∈ {2, 5}`.
    pub fn defaults(model_id: ModelId, p: usize, n: usize, seed: u64) -> Result<Self> {
        let (u0, v0) = match (model_id, p) {
            (ModelId::M11, 2) => (0.0, 2.0),
            (ModelId::M11, 5) => (0.0, 6.5),
            (ModelId::M12 | ModelId::M13, 2 | 5) => (0.0, 0.5),
            (ModelId::M21, 2) => (3.0, 2.0),
            (ModelId::M21, 5) => (8.0, 6.5),
            (ModelId::M22 | ModelId::M23, 2 | 5) => (1.5, 0.5),
            _ => return Err(Error::SpecMismatch(format!("no default constants for model {model_id} with p = {p}"))),
        };
        let mut alpha = vec![0.0; p];
        alpha[0] = 1.0;
        Ok(Self {
            model_id,
            p,
            n,
            n_test: 500,
            beta_true: DESIGN_BETA[..p].to_vec(),
            alpha,
            u0,
            v0,
            v1: 1.0,
            v2: 0.5,
            p1: if p == 2 { 1 } else { 3 },
            m_obj: if model_id.is_spd() { 3 } else { 20 },
            seed,
        })
    }

    /// Structural checks plus the feasibility probe over `10⁴` covariate draws.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.p == 0 {
            return bad("p must be positive".into());
        }
        check_len(self.p, self.beta_true.len())?;
        check_len(self.p, self.alpha.len())?;
        if self.n < 2 || self.n_test < 1 {
            return bad(format!("need n ≥ 2 and n_test ≥ 1, got {} and {}", self.n, self.n_test));
        }
        if !(self.v1 > 0.0 && self.v2 > 0.0) {
            return bad("noise variances v1, v2 must be positive".into());
        }
        if self.m_obj < 2 {
            return bad("object dimension must be at least 2".into());
        }
        if self.model_id.variant() == 3 && self.p1 > self.p {
            return bad(format!("p1 = {} exceeds p = {}", self.p1, self.p));
        }
        let all = [self.u0, self.v0, self.v1, self.v2];
        if all.iter().chain(&self.beta_true).chain(&self.alpha).any(|v| !v.is_finite()) {
            return bad("non-finite constant".into());
        }
        feasibility_probe(self, 10_000, &mut ChaCha8Rng::seed_from_u64(self.seed ^ 0xfea5))
    }

    pub fn response_space(&self) -> SpaceSpec {
        if self.model_id.is_spd() {
            SpaceSpec::spd_frobenius(self.m_obj)
        } else {
            SpaceSpec::wasserstein(self.m_obj)
        }
    }

    /// `αᵀg(x)`; only the first component of `g` is nonzero.
    pub fn signal(&self, x: &[f64]) -> f64 {
        self.alpha[0] * g1(self.model_id, &self.beta_true, self.p1, x)
    }

    /// Covariance of the covariates.
    pub fn covariate_cov(&self) -> DMatrix<f64> {
        covariate_cov(self.model_id, self.p)
    }

    /// Descriptor of the derived links for this design.
    pub fn link_descriptor(&self, moments: LinkMoments) -> DesignLinkDescriptor {
        DesignLinkDescriptor { model: self.model_id, p: self.p, p1: self.p1, moments }
    }
}

fn latent_cov(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| COVARIATE_RHO.powi((i as i32 - j as i32).abs()))
}

/// Population covariance of `X`: `Σ'` for Gaussian designs and
/// `(2/π) arcsin(Σ'_{ij}/2)` for the uniform copula `X = 2Φ(Z) − 1`.
pub fn covariate_cov(model: ModelId, p: usize) -> DMatrix<f64> {
    let s = latent_cov(p);
    if model.copula_covariates() {
        s.map(|r| 2.0 / PI * (r / 2.0).asin())
    } else {
        s
    }
}

/// `g₁(x)` with `x` already centered at the design mean (zero).
fn g1(model: ModelId, beta: &[f64], p1: usize, x: &[f64]) -> f64 {
    match model.variant() {
        1 => dot(beta, x),
        2 => {
            let u = dot(beta, x) + 1.0;
            u * u
        }
        _ => {
            let sq: f64 = (0..p1).map(|j| (beta[j] * x[j] + 1.0).powi(2)).sum();
            sq + (p1..beta.len()).map(|j| (beta[j] * x[j]).exp()).sum::<f64>()
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `g(x) = (g₁(x), 0, …, 0)`.
pub fn g_eval(spec: &SimulationSpec, x: &[f64]) -> Result<Vec<f64>> {
    check_len(spec.p, x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadData("non-finite covariate".into()));
    }
    let mut g = vec![0.0; spec.p];
    g[0] = g1(spec.model_id, &spec.beta_true, spec.p1, x);
    Ok(g)
}

/// Draws `count` covariate rows.
pub fn gen_covariates<R: Rng + ?Sized>(spec: &SimulationSpec, count: usize, rng: &mut R) -> Covariates {
    draw_covariates(spec.model_id, spec.p, count, rng)
}

fn draw_covariates<R: Rng + ?Sized>(model: ModelId, p: usize, count: usize, rng: &mut R) -> Covariates {
    // Σ' is positive definite for |ρ| < 1, so the factor exists.
    let r = cholesky_factor(&latent_cov(p)).expect("latent covariance is positive definite");
    let copula = model.copula_covariates();
    let mut data = Vec::with_capacity(count * p);
    let mut z = vec![0.0; p];
    for _ in 0..count {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        // X = Rᵀz has covariance RᵀR = Σ'
        for j in 0..p {
            let v: f64 = (0..=j).map(|k| r[(k, j)] * z[k]).sum();
            data.push(if copula { 2.0 * norm_cdf(v) - 1.0 } else { v });
        }
    }
    Covariates::from_row_major(count, p, data).expect("consistent shape")
}

/// `P = QᵀDQ` with `Q` an orthonormal basis built from a Gaussian matrix and
/// `D = diag(1, …, m)`.
pub fn gen_pm<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    // modified Gram–Schmidt on the columns
    let mut q = z;
    for j in 0..m {
        for k in 0..j {
            let proj = q.column(k).dot(&q.column(j));
            let ck = q.column(k).clone_owned();
            q.column_mut(j).axpy(-proj, &ck, 1.0);
        }
        let norm = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / norm);
    }
    // rows of Q = qᵀ are orthonormal, so QᵀDQ = q D qᵀ
    let d = DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| (i + 1) as f64));
    let mut p = &q * d * q.transpose();
    symmetrize(&mut p);
    p
}

/// `m_⊕(x)` for one replication (SPD designs carry their `P_m`).
#[derive(Debug, Clone)]
pub struct TrueRegression {
    spec: SimulationSpec,
    pm: Option<DMatrix<f64>>,
    grid_z: Vec<f64>,
}

impl TrueRegression {
    pub fn new(spec: &SimulationSpec, pm: Option<DMatrix<f64>>) -> Result<Self> {
        if spec.model_id.is_spd() {
            match &pm {
                Some(p) if p.nrows() == spec.m_obj && p.ncols() == spec.m_obj => {}
                Some(p) => return Err(Error::Dimension { expected: spec.m_obj, got: p.nrows() }),
                None => return Err(Error::SpecMismatch("SPD designs need P_m".into())),
            }
        }
        let grid_z = quantile_grid(spec.m_obj).into_iter().map(norm_quantile).collect();
        Ok(Self { spec: spec.clone(), pm, grid_z })
    }

    pub fn eval(&self, x: &[f64]) -> Result<MetricObject> {
        check_len(self.spec.p, x.len())?;
        let a = self.spec.signal(x);
        let (u, v) = (self.spec.u0 + a, self.spec.v0 + a);
        if v <= 0.0 {
            return Err(Error::InfeasibleSpec(format!("V0 + αᵀg(x) = {v} ≤ 0")));
        }
        match &self.pm {
            None => {
                let q = self.grid_z.iter().map(|z| u + v * (z + 1.0)).collect();
                Ok(MetricObject::Quantile(QuantileFunction::new(q)?))
            }
            Some(pm) => {
                if u < self.spec.v1 {
                    return Err(Error::InfeasibleSpec(format!("U0 + αᵀg(x) = {u} < v1")));
                }
                let m = DMatrix::identity(self.spec.m_obj, self.spec.m_obj) * u + pm * v;
                Ok(MetricObject::Spd(SpdMatrix::new(m)?))
            }
        }
    }

    pub fn pm(&self) -> Option<&DMatrix<f64>> {
        self.pm.as_ref()
    }
}

/// `true_regression` for a distribution design, or an SPD design with its `P_m`.
pub fn true_regression(spec: &SimulationSpec, pm: Option<DMatrix<f64>>) -> Result<TrueRegression> {
    TrueRegression::new(spec, pm)
}

/// One noisy response at `x`.
pub fn sample_response<R: Rng + ?Sized>(truth: &TrueRegression, x: &[f64], rng: &mut R) -> Result<MetricObject> {
    let spec = &truth.spec;
    check_len(spec.p, x.len())?;
    let a = spec.signal(x);
    let (u0, v0) = (spec.u0 + a, spec.v0 + a);
    if v0 <= 0.0 {
        return Err(Error::InfeasibleSpec(format!("gamma shape undefined: V0 + αᵀg(x) = {v0}")));
    }
    let gamma = Gamma::new(v0 * v0 / spec.v2, spec.v2 / v0).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    let sd = spec.v1.sqrt();
    match &truth.pm {
        None => {
            let u = Normal::new(u0, sd).map_err(|e| Error::InfeasibleSpec(e.to_string()))?.sample(rng);
            let v = gamma.sample(rng);
            let q = truth.grid_z.iter().map(|z| u + v * (z + 1.0)).collect();
            Ok(MetricObject::Quantile(QuantileFunction::new(q)?))
        }
        Some(pm) => {
            if u0 < spec.v1 {
                return Err(Error::InfeasibleSpec(format!("U0 + αᵀg(x) − v1 = {} < 0", u0 - spec.v1)));
            }
            let u = Normal::new((u0 - spec.v1).sqrt(), sd).map_err(|e| Error::InfeasibleSpec(e.to_string()))?.sample(rng);
            let v = gamma.sample(rng);
            let m = DMatrix::identity(spec.m_obj, spec.m_obj) * (u * u) + pm * v;
            Ok(MetricObject::Spd(SpdMatrix::new(m)?))
        }
    }
}

/// Checks `V₀ + αᵀg > 0` (and `U₀ + αᵀg ≥ v₁` for SPD designs) on `draws`
/// covariate samples.
pub fn feasibility_probe<R: Rng + ?Sized>(spec: &SimulationSpec, draws: usize, rng: &mut R) -> Result<()> {
    let x = draw_covariates(spec.model_id, spec.p, draws, rng);
    for row in x.rows() {
        let a = spec.signal(row);
        if spec.v0 + a <= 0.0 {
            return Err(Error::InfeasibleSpec(format!("V0 + αᵀg(x) = {} ≤ 0 at x = {row:?}", spec.v0 + a)));
        }
        if spec.model_id.is_spd() && spec.u0 + a < spec.v1 {
            return Err(Error::InfeasibleSpec(format!("U0 + αᵀg(x) = {} < v1 at x = {row:?}", spec.u0 + a)));
        }
    }
    Ok(())
}

/// Training set, test set and truth for one replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub train: Dataset,
    pub test: Dataset,
    pub truth: TrueRegression,
    pub test_truth: Vec<MetricObject>,
}

/// RNG for replication `r`: the spec seed with stream `r`.
pub fn replication_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

pub fn generate_replication(spec: &SimulationSpec, r: u64) -> Result<Replication> {
    let mut rng = replication_rng(spec.seed, r);
    let pm = spec.model_id.is_spd().then(|| gen_pm(spec.m_obj, &mut rng));
    let truth = TrueRegression::new(spec, pm)?;
    let space = spec.response_space();
    let draw = |count: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let x = gen_covariates(spec, count, rng);
        let y = x.rows().map(|row| sample_response(&truth, row, rng)).collect::<Result<Vec<_>>>()?;
        Dataset::new(x, y, space)
    };
    let train = draw(spec.n, &mut rng)?;
    let test = draw(spec.n_test, &mut rng)?;
    let test_truth = test.x.rows().map(|row| truth.eval(row)).collect::<Result<Vec<_>>>()?;
    Ok(Replication { train, test, truth, test_truth })
}

/// Source of `E[g(X)]` and `Cov(g(X), X)` for the derived links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkMoments {
    /// Closed-form population moments.
    Analytic,
    /// Monte Carlo over `size` covariate draws from a dedicated seed.
    MonteCarlo { size: usize, seed: u64 },
    /// Empirical moments of a given covariate sample (typically the
    /// training covariates).
    Sample { x: Covariates },
}

/// Serializable description of the links derived from a design's `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignLinkDescriptor {
    pub model: ModelId,
    pub p: usize,
    pub p1: usize,
    pub moments: LinkMoments,
}

impl DesignLinkDescriptor {
    pub fn build(&self) -> Result<LinkSpec> {
        if self.p == 0 || (self.model.variant() == 3 && self.p1 > self.p) {
            return Err(Error::SpecMismatch(format!("invalid design link dimensions p = {}, p1 = {}", self.p, self.p1)));
        }
        Ok(LinkSpec::from_link(Arc::new(self.link()?), Some(LinkDescriptor::Design(self.clone()))))
    }

    fn link(&self) -> Result<DesignLink> {
        let sample = match &self.moments {
            LinkMoments::Analytic => None,
            LinkMoments::MonteCarlo { size, seed } => {
                if *size < 2 {
                    return Err(Error::SpecMismatch("Monte Carlo size must be at least 2".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Some(draw_covariates(self.model, self.p, *size, &mut rng))
            }
            LinkMoments::Sample { x } => {
                check_len(self.p, x.p())?;
                if x.n() < 2 {
                    return Err(Error::SpecMismatch("moment sample needs at least 2 rows".into()));
                }
                Some(x.clone())
            }
        };
        let means = sample.as_ref().map(|x| (0..self.p).map(|k| x.column(k).sum::<f64>() / x.n() as f64).collect());
        Ok(DesignLink {
            desc: self.clone(),
            sigma_x: covariate_cov(self.model, self.p),
            sample: sample.map(Arc::new),
            means: means.unwrap_or_default(),
        })
    }
}

/// `E[g₁(X)]` and `Cov(g₁(X), X)` at some `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMoments {
    pub mean_g: f64,
    pub cov_gx: Vec<f64>,
    /// `‖Cov(g, X)‖²` is at the ridge level: the link is effectively zero.
    pub singular: bool,
}

#[derive(Debug)]
struct DesignLink {
    desc: DesignLinkDescriptor,
    sigma_x: DMatrix<f64>,
    sample: Option<Arc<Covariates>>,
    /// Column means of `sample`.
    means: Vec<f64>,
}

impl DesignLink {
    fn moments(&self, beta: &[f64]) -> DesignMoments {
        let (model, p1) = (self.desc.model, self.desc.p1);
        let (mean_g, cov_gx) = match &self.sample {
            Some(x) => {
                let n = x.n() as f64;
                // index-form links see x through βᵀ(x − x̄), so g is evaluated
                // at centered rows
                let center = model.link_form() == LinkForm::GeneralizedLinear;
                let mut buf = vec![0.0; self.desc.p];
                let g: Vec<f64> = x
                    .rows()
                    .map(|r| {
                        for (k, b) in buf.iter_mut().enumerate() {
                            *b = if center { r[k] - self.means[k] } else { r[k] };
                        }
                        g1(model, beta, p1, &buf)
                    })
                    .collect();
                let mg = g.iter().sum::<f64>() / n;
                let cov = (0..self.desc.p)
                    .map(|k| x.column(k).zip(&g).map(|(xk, gi)| (gi - mg) * (xk - self.means[k])).sum::<f64>() / n)
                    .collect();
                (mg, cov)
            }
            None => analytic_moments(model, p1, &self.sigma_x, beta),
        };
        let scale = cov_gx.iter().map(|c| c * c).sum::<f64>();
        DesignMoments { mean_g, cov_gx, singular: scale <= 1e-24 }
    }
}

/// Closed-form moments: linear index `Eg = 0`, `Cov = Σβ`; squared index
/// `Eg = βᵀΣβ + 1`, `Cov = 2Σβ`; additive terms by Gaussian identities
/// (`E e^{bX} = e^{b²s/2}`, `Cov(e^{bX_j}, X_k) = bΣ_{kj} e^{b²Σ_jj/2}`).
fn analytic_moments(model: ModelId, p1: usize, s: &DMatrix<f64>, beta: &[f64]) -> (f64, Vec<f64>) {
    let p = beta.len();
    let sb: Vec<f64> = (0..p).map(|k| (0..p).map(|j| s[(k, j)] * beta[j]).sum()).collect();
    match model.variant() {
        1 => (0.0, sb),
        2 => (dot(beta, &sb) + 1.0, sb.iter().map(|v| 2.0 * v).collect()),
        _ => {
            let mut mean = 0.0;
            let mut cov = vec![0.0; p];
            for j in 0..p {
                let b = beta[j];
                if j < p1 {
                    mean += b * b * s[(j, j)] + 1.0;
                    for (k, c) in cov.iter_mut().enumerate() {
                        *c += 2.0 * b * s[(k, j)];
                    }
                } else {
                    let e = (b * b * s[(j, j)] / 2.0).exp();
                    mean += e;
                    for (k, c) in cov.iter_mut().enumerate() {
                        *c += b * s[(k, j)] * e;
                    }
                }
            }
            (mean, cov)
        }
    }
}

impl Link for DesignLink {
    fn form(&self) -> LinkForm {
        self.desc.model.link_form()
    }

    fn p(&self) -> usize {
        self.desc.p
    }

    fn q(&self) -> usize {
        self.desc.p
    }

    /// `f(x) = (AᵀA + λI)⁻¹Aᵀ(g(x) − E g)` with `A = Cov(g, X)`; only the
    /// first row of `A` is nonzero, so this reduces to `k (g₁(x) − E g₁)`.
    fn bind(&self, beta: &[f64]) -> Result<Bound<'_>> {
        check_len(self.desc.p, beta.len())?;
        let mom = self.moments(beta);
        // (AᵀA + λI)⁻¹Aᵀ = Aᵀ(AAᵀ + λI)⁻¹; the right-hand form keeps the
        // rank-one system well conditioned.
        let p = self.desc.p;
        let a = DMatrix::from_fn(p, p, |i, j| if i == 0 { mom.cov_gx[j] } else { 0.0 });
        let m = spd_inverse_ridge(&(&a * a.transpose()));
        let k: Vec<f64> = (a.transpose() * m.column(0)).iter().copied().collect();
        let eg = mom.mean_g;
        let (model, p1) = (self.desc.model, self.desc.p1);
        let beta = beta.to_vec();
        Ok(match self.form() {
            LinkForm::GeneralizedLinear => Bound::Index(Box::new(move |u, out| {
                let g = if model.variant() == 1 { u } else { (u + 1.0) * (u + 1.0) };
                for (o, kj) in out.iter_mut().zip(&k) {
                    *o = kj * (g - eg);
                }
            })),
            LinkForm::General => Bound::General(Box::new(move |x, out| {
                let g = g1(model, &beta, p1, x);
                for (o, kj) in out.iter_mut().zip(&k) {
                    *o = kj * (g - eg);
                }
            })),
        })
    }
}

/// Derived links with Monte Carlo moments over `mc_size ≥ 10⁵` draws.
pub fn derive_links(spec: &SimulationSpec, mc_size: usize, seed: u64) -> Result<LinkSpec> {
    if mc_size < 100_000 {
        return Err(Error::SpecMismatch(format!("Monte Carlo size {mc_size} below 1e5")));
    }
    spec.link_descriptor(LinkMoments::MonteCarlo { size: mc_size, seed }).build()
}

/// Derived links with closed-form population moments.
pub fn design_links(spec: &SimulationSpec) -> Result<LinkSpec> {
    spec.link_descriptor(LinkMoments::Analytic).build()
}

/// Moments a design link uses at `β` (for diagnostics and tests).
pub fn design_moments(desc: &DesignLinkDescriptor, beta: &[f64]) -> Result<DesignMoments> {
    check_len(desc.p, beta.len())?;
    Ok(desc.link()?.moments(beta))
}
