//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use nlfr_core::metric::{MetricObject, QuantileFunction, SpaceKind, SpaceSpec, SpdMatrix};
use nlfr_core::{Covariates, Dataset};
use rand::Rng;
use rand_distr::StandardNormal;

pub const KINDS: [SpaceKind; 3] = [SpaceKind::Wasserstein, SpaceKind::SpdFrobenius, SpaceKind::SpdCholesky];

pub fn space(kind: SpaceKind) -> SpaceSpec {
    match kind {
        SpaceKind::Wasserstein => SpaceSpec::wasserstein(20),
        SpaceKind::SpdFrobenius => SpaceSpec::spd_frobenius(3),
        SpaceKind::SpdCholesky => SpaceSpec::spd_cholesky(3),
    }
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_quantile<R: Rng>(m: usize, rng: &mut R) -> QuantileFunction {
    let mut v = normal(rng) * 2.0;
    let vals = (0..m)
        .map(|_| {
            v += rng.random::<f64>() * 0.7;
            v
        })
        .collect();
    QuantileFunction::new(vals).unwrap()
}

pub fn random_spd<R: Rng>(d: usize, rng: &mut R) -> SpdMatrix {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    SpdMatrix::new(&a * a.transpose() + DMatrix::identity(d, d) * 0.1).unwrap()
}

pub fn random_object<R: Rng>(space: &SpaceSpec, rng: &mut R) -> MetricObject {
    if space.kind.is_spd() {
        MetricObject::Spd(random_spd(space.dims, rng))
    } else {
        MetricObject::Quantile(random_quantile(space.dims, rng))
    }
}

/// Responses that depend on the first covariate, so moments are nondegenerate.
pub fn random_dataset<R: Rng>(space: SpaceSpec, n: usize, p: usize, rng: &mut R) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| normal(rng)).collect()).collect();
    let y = rows
        .iter()
        .map(|r| {
            let s = (r[0] * 0.7).exp();
            match random_object(&space, rng) {
                MetricObject::Quantile(q) => MetricObject::Quantile(
                    QuantileFunction::new(q.values().iter().map(|v| v * s + r[0]).collect()).unwrap(),
                ),
                MetricObject::Spd(m) => MetricObject::Spd(SpdMatrix::new(m.entries() * s).unwrap()),
            }
        })
        .collect();
    Dataset::new(Covariates::from_rows(&rows).unwrap(), y, space).unwrap()
}

/// Isotonic least squares by the min–max formula
/// `out_i = max_{k ≤ i} min_{l ≥ i} mean(v[k..=l])`.
pub fn isotonic_minmax(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|k| (i..n).map(|l| v[k..=l].iter().sum::<f64>() / (l - k + 1) as f64).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
