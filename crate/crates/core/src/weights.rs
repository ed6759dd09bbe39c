//! Weight families for Fréchet regression: the linear weight
//! `1 + (X−μ)ᵀΣ⁻¹(x−μ)` and the nonlinear weight `1 + Σ_j (X_j − μ_j) f_j(·)`
//! in its general, generalized-linear and separable forms.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_len, Error, Result};
use crate::estimators::HTransform;
use crate::simgen::DesignLinkDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkForm {
    /// `f_j(x, β)` with the full covariate vector.
    General,
    /// `f_j(u)` evaluated at the single index `u = βᵀ(x − μ)`.
    GeneralizedLinear,
}

/// Link evaluator with its parameter fixed. Implementations may precompute
/// β-dependent normalizations in [`Link::bind`].
pub enum Bound<'a> {
    General(Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync + 'a>),
    Index(Box<dyn Fn(f64, &mut [f64]) + Send + Sync + 'a>),
}

pub trait Link: Send + Sync + fmt::Debug {
    fn form(&self) -> LinkForm;
    /// Number of component functions (= covariate dimension).
    fn p(&self) -> usize;
    /// Parameter dimension.
    fn q(&self) -> usize;
    fn bind(&self, beta: &[f64]) -> Result<Bound<'_>>;
}

/// Built-in scalar links, usable as generalized-linear components and in
/// configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarLink {
    Zero,
    Identity,
    Square,
    /// `u ↦ (u + 1)²`
    SquareShifted,
    Exp,
    Scaled { factor: f64, link: Box<ScalarLink> },
    Sum(Vec<ScalarLink>),
}

impl ScalarLink {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            ScalarLink::Zero => 0.0,
            ScalarLink::Identity => u,
            ScalarLink::Square => u * u,
            ScalarLink::SquareShifted => (u + 1.0) * (u + 1.0),
            ScalarLink::Exp => u.exp(),
            ScalarLink::Scaled { factor, link } => factor * link.eval(u),
            ScalarLink::Sum(parts) => parts.iter().map(|l| l.eval(u)).sum(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarLink::Zero => true,
            ScalarLink::Scaled { factor, link } => *factor == 0.0 || link.is_zero(),
            ScalarLink::Sum(parts) => parts.iter().all(ScalarLink::is_zero),
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
struct IndexLink {
    funcs: Vec<ScalarLink>,
}

impl Link for IndexLink {
    fn form(&self) -> LinkForm {
        LinkForm::GeneralizedLinear
    }
    fn p(&self) -> usize {
        self.funcs.len()
    }
    fn q(&self) -> usize {
        self.funcs.len()
    }
    fn bind(&self, beta: &[f64]) -> Result<Bound<'_>> {
        check_len(self.q(), beta.len())?;
        Ok(Bound::Index(Box::new(move |u, out| {
            for (o, f) in out.iter_mut().zip(&self.funcs) {
                *o = f.eval(u);
            }
        })))
    }
}

/// Links that collapse the generalized-linear weight onto the linear one
/// when `β = Σ⁻¹σ`.
#[derive(Debug, Clone)]
struct LfrReducingLink {
    mu: Vec<f64>,
    sigma_inv: DMatrix<f64>,
    sigma: Vec<f64>,
}

impl Link for LfrReducingLink {
    fn form(&self) -> LinkForm {
        LinkForm::General
    }
    fn p(&self) -> usize {
        self.mu.len()
    }
    fn q(&self) -> usize {
        self.mu.len()
    }
    fn bind(&self, beta: &[f64]) -> Result<Bound<'_>> {
        check_len(self.q(), beta.len())?;
        let beta = beta.to_vec();
        Ok(Bound::General(Box::new(move |x, out| {
            let p = self.mu.len();
            let d = DVector::from_iterator(p, x.iter().zip(&self.mu).map(|(a, b)| a - b));
            let v = &self.sigma_inv * &d;
            let u: f64 = beta.iter().zip(d.iter()).map(|(b, di)| b * di).sum();
            let full: f64 = self.sigma.iter().zip(v.iter()).map(|(s, vi)| s * vi).sum();
            for j in 0..p {
                let others = full - self.sigma[j] * v[j];
                out[j] = (u - others) / self.sigma[j];
            }
        })))
    }
}

struct FnLink<F> {
    form: LinkForm,
    p: usize,
    q: usize,
    f: F,
}

impl<F> fmt::Debug for FnLink<F> {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("FnLink").field("form", &self.form).field("p", &self.p).field("q", &self.q).finish()
    }
}

impl<F> Link for FnLink<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn form(&self) -> LinkForm {
        self.form
    }
    fn p(&self) -> usize {
        self.p
    }
    fn q(&self) -> usize {
        self.q
    }
    fn bind(&self, beta: &[f64]) -> Result<Bound<'_>> {
        check_len(self.q, beta.len())?;
        let beta = beta.to_vec();
        Ok(match self.form {
            LinkForm::General => Bound::General(Box::new(move |x, out| (self.f)(x, &beta, out))),
            LinkForm::GeneralizedLinear => Bound::Index(Box::new(move |u, out| (self.f)(&[u], &[], out))),
        })
    }
}

/// Serializable description of a registry link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkDescriptor {
    Index { funcs: Vec<ScalarLink> },
    LfrReducing { mu: Vec<f64>, sigma_inv: Vec<Vec<f64>>, sigma: Vec<f64> },
    Design(DesignLinkDescriptor),
}

/// A set of `p` link functions together with its form.
#[derive(Clone)]
pub struct LinkSpec {
    link: Arc<dyn Link>,
    descriptor: Option<LinkDescriptor>,
}

impl fmt::Debug for LinkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.descriptor {
            Some(d) => write!(f, "LinkSpec({d:?})"),
            None => write!(f, "LinkSpec({:?})", self.link),
        }
    }
}

impl LinkSpec {
    /// Generalized-linear links from registry entries.
    pub fn index(funcs: Vec<ScalarLink>) -> Self {
        let descriptor = LinkDescriptor::Index { funcs: funcs.clone() };
        Self { link: Arc::new(IndexLink { funcs }), descriptor: Some(descriptor) }
    }

    /// In-process general-form links `f(x, β) → p-vector`. Not serializable.
    pub fn general_fn<F>(p: usize, q: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { link: Arc::new(FnLink { form: LinkForm::General, p, q, f }), descriptor: None }
    }

    /// In-process generalized-linear links `f(u) → p-vector`. Not serializable.
    pub fn index_fn<F>(p: usize, f: F) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        let wrapped = move |u: &[f64], _: &[f64], out: &mut [f64]| f(u[0], out);
        Self { link: Arc::new(FnLink { form: LinkForm::GeneralizedLinear, p, q: p, f: wrapped }), descriptor: None }
    }

    pub fn from_link(link: Arc<dyn Link>, descriptor: Option<LinkDescriptor>) -> Self {
        Self { link, descriptor }
    }

    pub fn from_descriptor(d: LinkDescriptor) -> Result<Self> {
        match d {
            LinkDescriptor::Index { funcs } => Ok(Self::index(funcs)),
            LinkDescriptor::LfrReducing { mu, sigma_inv, sigma } => {
                let p = mu.len();
                if sigma_inv.len() != p || sigma_inv.iter().any(|r| r.len() != p) {
                    return Err(Error::Dimension { expected: p, got: sigma_inv.len() });
                }
                let m = DMatrix::from_fn(p, p, |i, j| sigma_inv[i][j]);
                lfr_reducing_links(&mu, &m, &sigma)
            }
            LinkDescriptor::Design(d) => d.build(),
        }
    }

    pub fn descriptor(&self) -> Option<&LinkDescriptor> {
        self.descriptor.as_ref()
    }

    pub fn form(&self) -> LinkForm {
        self.link.form()
    }

    pub fn p(&self) -> usize {
        self.link.p()
    }

    pub fn q(&self) -> usize {
        self.link.q()
    }

    /// True when every component is identically zero (registry links only).
    pub fn is_trivially_zero(&self) -> bool {
        matches!(&self.descriptor, Some(LinkDescriptor::Index { funcs }) if funcs.iter().all(ScalarLink::is_zero))
    }

    pub fn bind(&self, beta: &[f64]) -> Result<BoundLinks<'_>> {
        Ok(BoundLinks { beta: beta.to_vec(), bound: self.link.bind(beta)? })
    }
}

impl Serialize for LinkSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.descriptor {
            Some(d) => d.serialize(s),
            None => Err(serde::ser::Error::custom("in-process link closures cannot be serialized")),
        }
    }
}

impl<'de> Deserialize<'de> for LinkSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let desc = LinkDescriptor::deserialize(d)?;
        LinkSpec::from_descriptor(desc).map_err(serde::de::Error::custom)
    }
}

/// Links with β fixed, ready to produce `f(x)` at many covariate points.
pub struct BoundLinks<'a> {
    beta: Vec<f64>,
    bound: Bound<'a>,
}

impl BoundLinks<'_> {
    /// Link values at `x`; `mu` centers the single index for the
    /// generalized-linear form.
    pub fn eval(&self, x: &[f64], mu: &[f64], out: &mut [f64]) {
        match &self.bound {
            Bound::General(f) => f(x, out),
            Bound::Index(f) => {
                let u: f64 = self.beta.iter().zip(x.iter().zip(mu)).map(|(b, (xi, m))| b * (xi - m)).sum();
                f(u, out)
            }
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
}

/// Parameter of the nonlinear weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFlavor {
    Linear,
    Nonlinear { beta: Vec<f64> },
    Separable { c_h: f64, h: HTransform },
}

/// Moments required by the separable flavor: `β = c_h Σ⁻¹ σ_h`.
#[derive(Debug, Clone, Copy)]
pub struct SeparableContext<'a> {
    pub sigma_h: &'a [f64],
    pub sigma_inv: &'a DMatrix<f64>,
}

/// `s(X_i, x) = 1 + (X_i − μ)ᵀ Σ⁻¹ (x − μ)`.
pub fn linear_weight(xi: &[f64], x: &[f64], mu: &[f64], sigma_inv: &DMatrix<f64>) -> Result<f64> {
    let p = mu.len();
    check_len(p, xi.len())?;
    check_len(p, x.len())?;
    check_len(p, sigma_inv.nrows())?;
    check_len(p, sigma_inv.ncols())?;
    let mut s = 1.0;
    for j in 0..p {
        let dj = xi[j] - mu[j];
        for k in 0..p {
            s += dj * sigma_inv[(j, k)] * (x[k] - mu[k]);
        }
    }
    Ok(s)
}

/// Parameter vector at which the links are evaluated for a flavor.
pub fn effective_beta(links: &LinkSpec, flavor: &WeightFlavor, sep: Option<SeparableContext<'_>>) -> Result<Vec<f64>> {
    match flavor {
        WeightFlavor::Linear => Err(Error::SpecMismatch("linear flavor has no link parameter".into())),
        WeightFlavor::Nonlinear { beta } => {
            if beta.len() != links.q() {
                return Err(Error::SpecMismatch(format!("β has length {} but links expect {}", beta.len(), links.q())));
            }
            Ok(beta.clone())
        }
        WeightFlavor::Separable { c_h, .. } => {
            if links.form() != LinkForm::GeneralizedLinear {
                return Err(Error::SpecMismatch("separable weights need generalized-linear links".into()));
            }
            if !c_h.is_finite() {
                return Err(Error::SpecMismatch("c_h must be finite".into()));
            }
            let sep = sep.ok_or_else(|| Error::SpecMismatch("separable weights need σ_h and Σ⁻¹".into()))?;
            separable_beta(*c_h, sep)
        }
    }
}

pub fn separable_beta(c_h: f64, sep: SeparableContext<'_>) -> Result<Vec<f64>> {
    let p = sep.sigma_h.len();
    check_len(p, sep.sigma_inv.nrows())?;
    let v = sep.sigma_inv * DVector::from_column_slice(sep.sigma_h);
    Ok(v.iter().map(|b| c_h * b).collect())
}

/// `1 + Σ_j (X_ij − μ_j) f_j(arg)` for the general, generalized-linear or
/// separable flavor.
pub fn nonlinear_weight(
    xi: &[f64],
    x: &[f64],
    mu: &[f64],
    links: &LinkSpec,
    flavor: &WeightFlavor,
    sep: Option<SeparableContext<'_>>,
) -> Result<f64> {
    let p = links.p();
    check_len(p, xi.len())?;
    check_len(p, x.len())?;
    check_len(p, mu.len())?;
    let beta = effective_beta(links, flavor, sep)?;
    let bound = links.bind(&beta)?;
    let mut f = vec![0.0; p];
    bound.eval(x, mu, &mut f);
    Ok(1.0 + (0..p).map(|j| (xi[j] - mu[j]) * f[j]).sum::<f64>())
}

/// General-form links reproducing the linear weight at `β = Σ⁻¹σ`:
/// `f_j(x, β) = (βᵀ(x−μ) − Σ_{i≠j} σ_i [Σ⁻¹(x−μ)]_i) / σ_j`.
pub fn lfr_reducing_links(mu: &[f64], sigma_inv: &DMatrix<f64>, sigma: &[f64]) -> Result<LinkSpec> {
    let p = mu.len();
    check_len(p, sigma.len())?;
    check_len(p, sigma_inv.nrows())?;
    check_len(p, sigma_inv.ncols())?;
    if let Some(j) = sigma.iter().position(|s| *s == 0.0 || !s.is_finite()) {
        return Err(Error::DegenerateSigma(j));
    }
    let descriptor = LinkDescriptor::LfrReducing {
        mu: mu.to_vec(),
        sigma_inv: (0..p).map(|i| (0..p).map(|j| sigma_inv[(i, j)]).collect()).collect(),
        sigma: sigma.to_vec(),
    };
    let link = LfrReducingLink { mu: mu.to_vec(), sigma_inv: sigma_inv.clone(), sigma: sigma.to_vec() };
    Ok(LinkSpec { link: Arc::new(link), descriptor: Some(descriptor) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_weight_examples() {
        let one = DMatrix::identity(1, 1);
        assert_eq!(linear_weight(&[5.0], &[0.0], &[0.0], &one).unwrap(), 1.0);
        assert_eq!(linear_weight(&[2.0], &[3.0], &[0.0], &one).unwrap(), 7.0);
        let i2 = DMatrix::identity(2, 2);
        assert_eq!(linear_weight(&[1.0, 1.0], &[1.0, -1.0], &[0.0, 0.0], &i2).unwrap(), 1.0);
        assert!(matches!(linear_weight(&[1.0], &[1.0, 2.0], &[0.0, 0.0], &i2), Err(Error::Dimension { .. })));
    }

    #[test]
    fn nonlinear_weight_examples() {
        let zero = LinkSpec::index(vec![ScalarLink::Zero, ScalarLink::Zero]);
        let flavor = WeightFlavor::Nonlinear { beta: vec![0.3, -2.0] };
        assert_eq!(nonlinear_weight(&[4.0, -1.0], &[2.0, 9.0], &[0.5, 0.5], &zero, &flavor, None).unwrap(), 1.0);

        let sq = LinkSpec::index(vec![ScalarLink::Square, ScalarLink::Exp]);
        assert_eq!(nonlinear_weight(&[0.5, 0.5], &[2.0, 9.0], &[0.5, 0.5], &sq, &flavor, None).unwrap(), 1.0);

        let one = LinkSpec::index(vec![ScalarLink::Square]);
        let w = nonlinear_weight(&[2.0], &[1.5], &[0.0], &one, &WeightFlavor::Nonlinear { beta: vec![1.0] }, None).unwrap();
        assert_eq!(w, 5.5);
    }

    #[test]
    fn flavor_mismatch_errors() {
        let general = LinkSpec::general_fn(1, 1, |_, _, out| out[0] = 1.0);
        let sig = DMatrix::identity(1, 1);
        let sep = SeparableContext { sigma_h: &[1.0], sigma_inv: &sig };
        let flavor = WeightFlavor::Separable { c_h: 1.0, h: HTransform::DistMeanCentered };
        assert!(matches!(nonlinear_weight(&[1.0], &[1.0], &[0.0], &general, &flavor, Some(sep)), Err(Error::SpecMismatch(_))));
        let bad_beta = WeightFlavor::Nonlinear { beta: vec![1.0, 2.0] };
        assert!(matches!(nonlinear_weight(&[1.0], &[1.0], &[0.0], &general, &bad_beta, None), Err(Error::SpecMismatch(_))));
        assert!(matches!(
            nonlinear_weight(&[1.0], &[1.0], &[0.0], &general, &WeightFlavor::Linear, None),
            Err(Error::SpecMismatch(_))
        ));
    }

    #[test]
    fn separable_weight_uses_scaled_index() {
        // p=1: arg = c σ_h Σ⁻¹ (x − μ) = 2 · 0.5 · 4 · 1 = 4; f = identity
        let links = LinkSpec::index(vec![ScalarLink::Identity]);
        let sig = DMatrix::from_element(1, 1, 4.0);
        let sep = SeparableContext { sigma_h: &[0.5], sigma_inv: &sig };
        let flavor = WeightFlavor::Separable { c_h: 2.0, h: HTransform::DistMeanCentered };
        let w = nonlinear_weight(&[3.0], &[1.0], &[0.0], &links, &flavor, Some(sep)).unwrap();
        assert_eq!(w, 1.0 + 3.0 * 4.0);
    }

    fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &a * a.transpose() + DMatrix::identity(p, p) * 0.5
    }

    #[test]
    fn lfr_reduction_matches_linear_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = 2;
        let mu: Vec<f64> = (0..p).map(|_| rng.random::<f64>() - 0.5).collect();
        let sigma_inv = random_spd(&mut rng, p);
        let sigma: Vec<f64> = (0..p).map(|_| rng.random::<f64>() + 0.2).collect();
        let links = lfr_reducing_links(&mu, &sigma_inv, &sigma).unwrap();
        let beta: Vec<f64> = (&sigma_inv * DVector::from_column_slice(&sigma)).iter().copied().collect();
        let flavor = WeightFlavor::Nonlinear { beta };
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let xi: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let a = nonlinear_weight(&xi, &x, &mu, &links, &flavor, None).unwrap();
            let b = linear_weight(&xi, &x, &mu, &sigma_inv).unwrap();
            worst = worst.max((a - b).abs());
        }
        assert!(worst <= 1e-10, "max deviation {worst}");
    }

    #[test]
    fn lfr_reduction_p1_identity() {
        // p=1: f(x, β) = β(x−μ)/σ; at β = vσ this is v(x−μ).
        let v = 0.8;
        let links = lfr_reducing_links(&[1.0], &DMatrix::from_element(1, 1, v), &[2.5]).unwrap();
        let bound = links.bind(&[v * 2.5]).unwrap();
        let mut out = [0.0];
        bound.eval(&[3.0], &[1.0], &mut out);
        assert!((out[0] - v * 2.0).abs() < 1e-15);
    }

    #[test]
    fn lfr_reduction_rejects_zero_sigma() {
        let err = lfr_reducing_links(&[0.0, 0.0], &DMatrix::identity(2, 2), &[1.0, 0.0]).unwrap_err();
        assert_eq!(err, Error::DegenerateSigma(1));
    }

    #[test]
    fn weights_are_affine_in_covariate() {
        let links = LinkSpec::index(vec![ScalarLink::SquareShifted, ScalarLink::Exp]);
        let flavor = WeightFlavor::Nonlinear { beta: vec![0.7, -0.2] };
        let mu = [0.1, -0.3];
        let x = [0.4, 1.2];
        let (x1, x2, lam) = ([1.0, 2.0], [-0.5, 0.25], 0.3);
        let mix: Vec<f64> = (0..2).map(|j| lam * x1[j] + (1.0 - lam) * x2[j]).collect();
        let w = |xi: &[f64]| nonlinear_weight(xi, &x, &mu, &links, &flavor, None).unwrap();
        assert!((w(&mix) - (lam * w(&x1) + (1.0 - lam) * w(&x2))).abs() < 1e-12);
    }

    #[test]
    fn registry_round_trip() {
        let links = LinkSpec::index(vec![
            ScalarLink::SquareShifted,
            ScalarLink::Scaled { factor: 2.0, link: Box::new(ScalarLink::Sum(vec![ScalarLink::Exp, ScalarLink::Identity])) },
        ]);
        let json = serde_json::to_string(&links).unwrap();
        let back: LinkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.descriptor(), links.descriptor());
        assert!(serde_json::to_string(&LinkSpec::index_fn(1, |u, o| o[0] = u)).is_err());
    }
}
