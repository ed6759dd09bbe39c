//! Object spaces: quantile functions under the discretized 2-Wasserstein
//! metric and SPD matrices under the Frobenius or Cholesky-factor metric.
//!
//! Each space embeds isometrically into a flat coordinate vector
//! (quantile values, matrix entries, or upper Cholesky factor entries). The
//! feasible objects form a closed convex subset of that coordinate space, so
//! a weighted Fréchet mean with positive total weight is the projection of the
//! normalized linear combination.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernel::{cholesky_factor, isotonic_in_place, max_asymmetry, sym_eig_clip, symmetrize};

pub const DEFAULT_SPD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Wasserstein,
    SpdFrobenius,
    SpdCholesky,
}

impl SpaceKind {
    pub fn is_spd(self) -> bool {
        !matches!(self, SpaceKind::Wasserstein)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpaceKind::Wasserstein => "wasserstein",
            SpaceKind::SpdFrobenius => "spd_frobenius",
            SpaceKind::SpdCholesky => "spd_cholesky",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub kind: SpaceKind,
    /// Grid size for quantile functions, matrix dimension for SPD spaces.
    pub dims: usize,
    pub eps: f64,
}

/// Midpoint grid `t_i = (2i − 1) / (2m)`, `i = 1..m`.
pub fn quantile_grid(m: usize) -> Vec<f64> {
    (1..=m).map(|i| (2 * i - 1) as f64 / (2 * m) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileFunction {
    values: Vec<f64>,
}

impl QuantileFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Dimension { expected: 2, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadData("quantile values must be finite".into()));
        }
        if let Some(i) = values.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::BadData(format!("quantile values decrease at index {}", i + 1)));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }
}

impl TryFrom<Vec<f64>> for QuantileFunction {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileFunction> for Vec<f64> {
    fn from(q: QuantileFunction) -> Self {
        q.values
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    // Upper factor when the matrix was built from one. Refactoring RᵀR is
    // unstable once a diagonal entry has been clipped down to eps.
    factor: Option<DMatrix<f64>>,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl SpdMatrix {
    /// Accepts a square matrix symmetric to 1e-12 (relative) that admits a
    /// Cholesky factorization. The stored matrix is exactly symmetrized.
    pub fn new(mut entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Dimension { expected: entries.nrows(), got: entries.ncols() });
        }
        if entries.nrows() < 2 {
            return Err(Error::Dimension { expected: 2, got: entries.nrows() });
        }
        let asym = max_asymmetry(&entries);
        if asym > 1e-12 {
            return Err(Error::NotSymmetric(asym));
        }
        symmetrize(&mut entries);
        cholesky_factor(&entries)?;
        Ok(Self { entries, factor: None })
    }

    /// `RᵀR` for an upper-triangular `R` with positive finite diagonal.
    pub fn from_factor(r: DMatrix<f64>) -> Result<Self> {
        if !r.is_square() {
            return Err(Error::Dimension { expected: r.nrows(), got: r.ncols() });
        }
        let n = r.nrows();
        if n < 2 {
            return Err(Error::Dimension { expected: 2, got: n });
        }
        for j in 0..n {
            if !(r[(j, j)] > 0.0) || r.column(j).iter().any(|v| !v.is_finite()) {
                return Err(Error::NotPositiveDefinite);
            }
            if (j + 1..n).any(|i| r[(i, j)] != 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
        }
        let mut entries = r.transpose() * &r;
        symmetrize(&mut entries);
        Ok(Self { entries, factor: Some(r) })
    }

    /// Upper Cholesky factor (cached when available).
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        match &self.factor {
            Some(r) => Ok(r.clone()),
            None => cholesky_factor(&self.entries),
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

impl TryFrom<DMatrix<f64>> for SpdMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(s: SpdMatrix) -> Self {
        s.entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricObject {
    Quantile(QuantileFunction),
    Spd(SpdMatrix),
}

impl MetricObject {
    pub fn as_quantile(&self) -> Option<&QuantileFunction> {
        match self {
            MetricObject::Quantile(q) => Some(q),
            _ => None,
        }
    }

    pub fn as_spd(&self) -> Option<&SpdMatrix> {
        match self {
            MetricObject::Spd(s) => Some(s),
            _ => None,
        }
    }
}

/// Pre-projection intermediate. For `spd_cholesky` a `Matrix` holds
/// upper-triangular factor coordinates, otherwise ambient entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawObject {
    Quantile(Vec<f64>),
    Matrix(DMatrix<f64>),
}

impl SpaceSpec {
    pub fn new(kind: SpaceKind, dims: usize, eps: f64) -> Result<Self> {
        let spec = Self { kind, dims, eps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn wasserstein(grid_size: usize) -> Self {
        Self { kind: SpaceKind::Wasserstein, dims: grid_size, eps: DEFAULT_SPD_EPS }
    }

    pub fn spd_frobenius(dim: usize) -> Self {
        Self { kind: SpaceKind::SpdFrobenius, dims: dim, eps: DEFAULT_SPD_EPS }
    }

    pub fn spd_cholesky(dim: usize) -> Self {
        Self { kind: SpaceKind::SpdCholesky, dims: dim, eps: DEFAULT_SPD_EPS }
    }

    pub fn with_kind(self, kind: SpaceKind) -> Self {
        Self { kind, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims < 2 {
            return Err(Error::SpecMismatch(format!("space dims must be ≥ 2, got {}", self.dims)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::SpecMismatch("space eps must be positive".into()));
        }
        Ok(())
    }

    /// Length of the flat coordinate vector.
    pub fn coord_len(&self) -> usize {
        match self.kind {
            SpaceKind::Wasserstein => self.dims,
            _ => self.dims * self.dims,
        }
    }

    pub fn check_object(&self, obj: &MetricObject) -> Result<()> {
        match (self.kind, obj) {
            (SpaceKind::Wasserstein, MetricObject::Quantile(q)) => check_len(self.dims, q.grid_size()),
            (k, MetricObject::Spd(s)) if k.is_spd() => check_len(self.dims, s.dim()),
            _ => Err(Error::SpecMismatch(format!("object variant does not belong to {} space", self.kind.name()))),
        }
    }

    /// Hilbert coordinates of a feasible object.
    pub fn coords(&self, obj: &MetricObject) -> Result<Vec<f64>> {
        self.check_object(obj)?;
        Ok(match (self.kind, obj) {
            (SpaceKind::Wasserstein, MetricObject::Quantile(q)) => q.values.clone(),
            (SpaceKind::SpdFrobenius, MetricObject::Spd(s)) => s.entries.as_slice().to_vec(),
            (SpaceKind::SpdCholesky, MetricObject::Spd(s)) => s.factor()?.as_slice().to_vec(),
            _ => unreachable!("checked above"),
        })
    }

    pub fn raw_coords(&self, raw: &RawObject) -> Result<Vec<f64>> {
        match (self.kind, raw) {
            (SpaceKind::Wasserstein, RawObject::Quantile(v)) => {
                check_len(self.dims, v.len())?;
                Ok(v.clone())
            }
            (k, RawObject::Matrix(m)) if k.is_spd() => {
                check_len(self.dims, m.nrows())?;
                check_len(self.dims, m.ncols())?;
                Ok(m.as_slice().to_vec())
            }
            _ => Err(Error::SpecMismatch(format!("raw variant does not belong to {} space", self.kind.name()))),
        }
    }

    pub fn raw_from_coords(&self, coords: Vec<f64>) -> RawObject {
        match self.kind {
            SpaceKind::Wasserstein => RawObject::Quantile(coords),
            _ => RawObject::Matrix(DMatrix::from_vec(self.dims, self.dims, coords)),
        }
    }

    /// In-place metric projection in coordinates.
    pub fn project_coords(&self, c: &mut [f64]) {
        let n = self.dims;
        match self.kind {
            SpaceKind::Wasserstein => isotonic_in_place(c),
            SpaceKind::SpdFrobenius => {
                let mut m = DMatrix::from_column_slice(n, n, c);
                // Nearest symmetric matrix first; the feasible set lies in that subspace.
                symmetrize(&mut m);
                let out = sym_eig_clip(&m, self.eps).expect("symmetrized input");
                c.copy_from_slice(out.as_slice());
            }
            SpaceKind::SpdCholesky => {
                for j in 0..n {
                    for i in (j + 1)..n {
                        c[j * n + i] = 0.0;
                    }
                    let d = &mut c[j * n + j];
                    *d = d.max(self.eps);
                }
            }
        }
    }

    /// Object from feasible coordinates (as produced by `project_coords`).
    pub fn object_from_coords(&self, c: &[f64]) -> Result<MetricObject> {
        let n = self.dims;
        match self.kind {
            SpaceKind::Wasserstein => Ok(MetricObject::Quantile(QuantileFunction::new(c.to_vec())?)),
            SpaceKind::SpdFrobenius => Ok(MetricObject::Spd(SpdMatrix::new(DMatrix::from_column_slice(n, n, c))?)),
            SpaceKind::SpdCholesky => Ok(MetricObject::Spd(SpdMatrix::from_factor(DMatrix::from_column_slice(n, n, c))?)),
        }
    }

    /// Squared distance between coordinate vectors.
    pub fn coord_dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        match self.kind {
            SpaceKind::Wasserstein => ss / a.len() as f64,
            _ => ss,
        }
    }
}

pub fn distance(space: &SpaceSpec, a: &MetricObject, b: &MetricObject) -> Result<f64> {
    let ca = space.coords(a)?;
    let cb = space.coords(b)?;
    Ok(space.coord_dist2(&ca, &cb).sqrt())
}

/// Linear combination `Σ c_i Y_i` in Hilbert coordinates.
pub fn combine(space: &SpaceSpec, coefficients: &[f64], objects: &[MetricObject]) -> Result<RawObject> {
    if objects.is_empty() {
        return Err(Error::EmptyInput("combine objects"));
    }
    check_len(objects.len(), coefficients.len())?;
    let mut acc = vec![0.0; space.coord_len()];
    for (c, obj) in coefficients.iter().zip(objects) {
        let y = space.coords(obj)?;
        for (a, v) in acc.iter_mut().zip(&y) {
            *a += c * v;
        }
    }
    Ok(space.raw_from_coords(acc))
}

/// Nearest feasible object in the space's squared metric.
pub fn project(space: &SpaceSpec, raw: &RawObject) -> Result<MetricObject> {
    let mut c = space.raw_coords(raw)?;
    space.project_coords(&mut c);
    space.object_from_coords(&c)
}

/// `argmin_ω Σ w_i d²(Y_i, ω)` for weights with positive total.
pub fn weighted_frechet_mean(space: &SpaceSpec, objects: &[MetricObject], weights: &[f64]) -> Result<MetricObject> {
    if objects.is_empty() {
        return Err(Error::EmptyInput("weighted_frechet_mean objects"));
    }
    check_len(objects.len(), weights.len())?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::IllPosedObjective(total));
    }
    let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
    project(space, &combine(space, &normalized, objects)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q(v: &[f64]) -> MetricObject {
        MetricObject::Quantile(QuantileFunction::new(v.to_vec()).unwrap())
    }

    fn spd_scaled(k: f64) -> MetricObject {
        MetricObject::Spd(SpdMatrix::new(DMatrix::identity(3, 3) * k).unwrap())
    }

    #[test]
    fn grid_is_midpoint() {
        assert_eq!(quantile_grid(4), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn distance_examples() {
        let w = SpaceSpec::wasserstein(20);
        let a: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert_eq!(distance(&w, &q(&a), &q(&a)).unwrap(), 0.0);
        assert_relative_eq!(distance(&w, &q(&a), &q(&b)).unwrap(), 1.0, epsilon = 1e-14);

        let c = SpaceSpec::spd_cholesky(3);
        assert_relative_eq!(distance(&c, &spd_scaled(1.0), &spd_scaled(4.0)).unwrap(), 3f64.sqrt(), epsilon = 1e-14);
        let f = SpaceSpec::spd_frobenius(3);
        assert_relative_eq!(distance(&f, &spd_scaled(1.0), &spd_scaled(2.0)).unwrap(), 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn distance_rejects_mismatch() {
        let w = SpaceSpec::wasserstein(3);
        assert!(matches!(distance(&w, &q(&[0.0, 1.0]), &q(&[0.0, 1.0])), Err(Error::Dimension { .. })));
        assert!(matches!(distance(&w, &q(&[0.0, 1.0, 2.0]), &spd_scaled(1.0)), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn non_spd_matrix_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(SpdMatrix::new(m), Err(Error::NotPositiveDefinite));
    }

    #[test]
    fn combine_examples() {
        let w = SpaceSpec::wasserstein(2);
        let y = q(&[0.0, 2.0]);
        assert_eq!(combine(&w, &[1.0], &[y.clone()]).unwrap(), RawObject::Quantile(vec![0.0, 2.0]));
        let z = q(&[2.0, 4.0]);
        assert_eq!(combine(&w, &[0.5, 0.5], &[y, z]).unwrap(), RawObject::Quantile(vec![1.0, 3.0]));
        let r = combine(&w, &[1.5, -0.5], &[q(&[0.0, 1.0]), q(&[0.0, 3.0])]).unwrap();
        assert_eq!(r, RawObject::Quantile(vec![0.0, 0.0]));
        assert!(matches!(combine(&w, &[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn combine_cholesky_uses_factors() {
        let c = SpaceSpec::spd_cholesky(3);
        let r = combine(&c, &[0.5, 0.5], &[spd_scaled(1.0), spd_scaled(9.0)]).unwrap();
        assert_eq!(r, RawObject::Matrix(DMatrix::identity(3, 3) * 2.0));
        assert_eq!(project(&c, &r).unwrap(), spd_scaled(4.0));
    }

    #[test]
    fn project_examples() {
        let w = SpaceSpec::wasserstein(3);
        assert_eq!(project(&w, &RawObject::Quantile(vec![1.0, 2.0, 3.0])).unwrap(), q(&[1.0, 2.0, 3.0]));
        assert_eq!(project(&w, &RawObject::Quantile(vec![1.0, 3.0, 2.0])).unwrap(), q(&[1.0, 2.5, 2.5]));

        let f = SpaceSpec::spd_frobenius(2);
        let raw = RawObject::Matrix(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        let out = project(&f, &raw).unwrap();
        let m = out.as_spd().unwrap().entries();
        assert_relative_eq!(*m, DMatrix::from_element(2, 2, 1.5), epsilon = 1e-7);
    }

    #[test]
    fn frechet_mean_examples() {
        let w = SpaceSpec::wasserstein(2);
        let objs = [q(&[0.0, 1.0]), q(&[2.0, 5.0])];
        assert_eq!(weighted_frechet_mean(&w, &objs, &[1.0, 1.0]).unwrap(), q(&[1.0, 3.0]));

        let f = SpaceSpec::spd_frobenius(3);
        let mean = weighted_frechet_mean(&f, &[spd_scaled(1.0), spd_scaled(3.0)], &[1.0, 1.0]).unwrap();
        assert_eq!(mean, spd_scaled(2.0));

        let objs = [q(&[0.0, 1.0]), q(&[0.0, 3.0])];
        assert_eq!(weighted_frechet_mean(&w, &objs, &[3.0, -1.0]).unwrap(), q(&[0.0, 0.0]));

        assert!(matches!(weighted_frechet_mean(&w, &objs, &[1.0, -1.0]), Err(Error::IllPosedObjective(_))));
    }

    #[test]
    fn serde_validates() {
        let bad: std::result::Result<QuantileFunction, _> = serde_json::from_str("[2.0, 1.0]");
        assert!(bad.is_err());
        let ok: QuantileFunction = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!(ok.values(), &[1.0, 2.0]);
    }
}
