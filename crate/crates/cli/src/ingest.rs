//! Reading user data: response tables and binned life tables.

use std::path::Path;

use nalgebra::DMatrix;
use nlfr_core::metric::{quantile_grid, MetricObject, QuantileFunction, SpaceSpec, SpdMatrix};
use nlfr_core::{Covariates, Dataset, SpaceKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Column mean and standard deviation applied to covariates before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    pub fn of(x: &Covariates) -> Result<Self> {
        let n = x.n() as f64;
        let mean: Vec<f64> = (0..x.p()).map(|j| x.column(j).sum::<f64>() / n).collect();
        let sd: Vec<f64> = (0..x.p())
            .map(|j| (x.column(j).map(|v| (v - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
            .collect();
        if let Some(j) = sd.iter().position(|s| !(*s > 0.0)) {
            return Err(CliError::validation("standardize", format!("covariate {j} is constant")));
        }
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, x: &Covariates) -> Covariates {
        let rows: Vec<Vec<f64>> = x
            .rows()
            .map(|r| r.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| (v - m) / s).collect())
            .collect();
        Covariates::from_rows(&rows).expect("same shape")
    }
}

/// A dataset read from disk with its covariate names.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: Dataset,
    pub covariate_names: Vec<String>,
    pub standardization: Option<Standardization>,
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data { row: i + 1, message: e.to_string() })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(RawTable { headers, rows })
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(format!("reading {}", path.display()), io),
        other => CliError::Data { row: 0, message: format!("{other:?}") },
    }
}

fn number(row: usize, col: &str, s: &str) -> Result<f64> {
    if s.is_empty() {
        return Err(CliError::Data { row, message: format!("empty value in column {col}") });
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Data { row, message: format!("column {col}: not a finite number: {s:?}") }),
    }
}

/// Column roles: ignored label, covariate, or response slot.
enum Role<T> {
    Label,
    Covariate,
    Response(T),
}

fn covariate_rows<T>(table: &RawTable, roles: &[Role<T>]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let names: Vec<String> =
        table.headers.iter().zip(roles).filter(|(_, r)| matches!(r, Role::Covariate)).map(|(h, _)| h.clone()).collect();
    if names.is_empty() {
        return Err(CliError::validation("data", "no covariate columns"));
    }
    let rows = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .zip(&table.headers)
                .zip(roles)
                .filter(|(_, r)| matches!(r, Role::Covariate))
                .map(|((v, h), _)| number(i + 1, h, v))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((names, rows))
}

fn finish(
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    y: Vec<MetricObject>,
    space: SpaceSpec,
    standardize: bool,
) -> Result<LoadedData> {
    if rows.len() < 2 {
        return Err(CliError::validation("data", format!("need at least 2 rows, got {}", rows.len())));
    }
    let x = Covariates::from_rows(&rows)?;
    let standardization = if standardize { Some(Standardization::of(&x)?) } else { None };
    let x = standardization.as_ref().map_or(x.clone(), |s| s.apply(&x));
    let data = Dataset::new(x, y, space).map_err(|e| CliError::validation("data", e.to_string()))?;
    Ok(LoadedData { data, covariate_names: names, standardization })
}

/// Parses a `age_<lo>_<hi>` header into its bounds.
fn age_bin(h: &str) -> Option<(f64, f64)> {
    let rest = h.strip_prefix("age_")?;
    let (lo, hi) = rest.split_once('_')?;
    Some((lo.parse().ok()?, hi.parse().ok()?))
}

/// Quantiles of a binned distribution at `grid`, with the mass of each bin
/// spread uniformly over `[lo, hi)`.
pub fn binned_quantiles(bins: &[(f64, f64)], counts: &[f64], grid: &[f64]) -> std::result::Result<Vec<f64>, String> {
    if let Some(c) = counts.iter().find(|c| **c < 0.0) {
        return Err(format!("negative count {c}"));
    }
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err("row has no deaths".into());
    }
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        let target = t * total;
        let mut cum = 0.0;
        let mut q = bins.last().map_or(0.0, |b| b.1);
        for (&(lo, hi), &c) in bins.iter().zip(counts) {
            if c > 0.0 && cum + c >= target {
                q = lo + (target - cum) / c * (hi - lo);
                break;
            }
            cum += c;
        }
        out.push(q);
    }
    Ok(out)
}

/// Life table: one row per unit, `age_<lo>_<hi>` death-count columns and
/// covariate columns (a `unit` column is ignored). Responses are quantile
/// functions on the `grid_size`-point midpoint grid.
pub fn ingest_life_table(path: &Path, grid_size: usize, standardize: bool) -> Result<LoadedData> {
    let table = read_csv(path)?;
    let roles: Vec<Role<(f64, f64)>> = table
        .headers
        .iter()
        .map(|h| {
            if h == "unit" {
                Role::Label
            } else if let Some(b) = age_bin(h) {
                Role::Response(b)
            } else {
                Role::Covariate
            }
        })
        .collect();
    let mut bins: Vec<(usize, (f64, f64))> =
        roles.iter().enumerate().filter_map(|(i, r)| if let Role::Response(b) = r { Some((i, *b)) } else { None }).collect();
    if bins.is_empty() {
        return Err(CliError::validation("data", "no age_<lo>_<hi> columns"));
    }
    bins.sort_by(|a, b| a.1 .0.total_cmp(&b.1 .0));
    for w in bins.windows(2) {
        if w[0].1 .1 > w[1].1 .0 {
            return Err(CliError::validation("data", format!("age bins {:?} and {:?} overlap", w[0].1, w[1].1)));
        }
    }
    if let Some((_, b)) = bins.iter().find(|(_, (lo, hi))| !(lo < hi)) {
        return Err(CliError::validation("data", format!("age bin {b:?} is empty")));
    }
    let (names, rows) = covariate_rows(&table, &roles)?;
    let grid = quantile_grid(grid_size);
    let bounds: Vec<(f64, f64)> = bins.iter().map(|b| b.1).collect();
    let mut y = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let counts = bins.iter().map(|(c, _)| number(i + 1, &table.headers[*c], &row[*c])).collect::<Result<Vec<_>>>()?;
        let q = binned_quantiles(&bounds, &counts, &grid).map_err(|message| CliError::Data { row: i + 1, message })?;
        let q = QuantileFunction::new(q).map_err(|e| CliError::Data { row: i + 1, message: e.to_string() })?;
        y.push(MetricObject::Quantile(q));
    }
    finish(names, rows, y, SpaceSpec::wasserstein(grid_size), standardize)
}

fn quantile_col(h: &str) -> Option<usize> {
    h.strip_prefix("q_")?.parse().ok()
}

fn matrix_col(h: &str) -> Option<(usize, usize)> {
    let (i, j) = h.strip_prefix("s_")?.split_once('_')?;
    Some((i.parse().ok()?, j.parse().ok()?))
}

/// Response table: covariate columns plus `q_1..q_m` (quantile functions)
/// or `s_<i>_<j>` for `1 ≤ i, j ≤ m` (SPD matrices); `unit` is ignored.
pub fn read_table(path: &Path, kind: SpaceKind, standardize: bool) -> Result<LoadedData> {
    let table = read_csv(path)?;
    let roles: Vec<Role<(usize, usize)>> = table
        .headers
        .iter()
        .map(|h| {
            if h == "unit" {
                Role::Label
            } else if let (false, Some(k)) = (kind.is_spd(), quantile_col(h)) {
                Role::Response((k, 0))
            } else if let (true, Some(ij)) = (kind.is_spd(), matrix_col(h)) {
                Role::Response(ij)
            } else {
                Role::Covariate
            }
        })
        .collect();
    let slots: Vec<(usize, (usize, usize))> =
        roles.iter().enumerate().filter_map(|(i, r)| if let Role::Response(s) = r { Some((i, *s)) } else { None }).collect();
    let (space, index): (SpaceSpec, Box<dyn Fn((usize, usize)) -> Option<usize>>) = if kind.is_spd() {
        let m = (slots.len() as f64).sqrt().round() as usize;
        if m < 2 || m * m != slots.len() {
            return Err(CliError::validation("data", format!("{} s_<i>_<j> columns do not form a square matrix", slots.len())));
        }
        let space = if kind == SpaceKind::SpdCholesky { SpaceSpec::spd_cholesky(m) } else { SpaceSpec::spd_frobenius(m) };
        (space, Box::new(move |(i, j)| ((1..=m).contains(&i) && (1..=m).contains(&j)).then(|| (j - 1) * m + (i - 1))))
    } else {
        let m = slots.len();
        if m < 2 {
            return Err(CliError::validation("data", "need at least two q_<k> columns"));
        }
        (SpaceSpec::wasserstein(m), Box::new(move |(k, _)| (1..=m).contains(&k).then(|| k - 1)))
    };
    let mut seen = vec![false; space.coord_len()];
    let mut order = Vec::with_capacity(slots.len());
    for (c, s) in &slots {
        let pos = index(*s).filter(|p| !seen[*p]).ok_or_else(|| {
            CliError::validation("data", format!("response column {} is out of range or repeated", table.headers[*c]))
        })?;
        seen[pos] = true;
        order.push((*c, pos));
    }
    let (names, rows) = covariate_rows(&table, &roles)?;
    let mut y = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let mut coords = vec![0.0; space.coord_len()];
        for (c, pos) in &order {
            coords[*pos] = number(i + 1, &table.headers[*c], &row[*c])?;
        }
        let obj = if kind.is_spd() {
            SpdMatrix::new(DMatrix::from_vec(space.dims, space.dims, coords)).map(MetricObject::Spd)
        } else {
            QuantileFunction::new(coords).map(MetricObject::Quantile)
        };
        y.push(obj.map_err(|e| CliError::Data { row: i + 1, message: e.to_string() })?);
    }
    finish(names, rows, y, space, standardize)
}

/// Covariates for prediction, selected by name in the training order.
pub fn read_covariates(path: &Path, names: &[String]) -> Result<Covariates> {
    let table = read_csv(path)?;
    let cols = names
        .iter()
        .map(|n| {
            table
                .headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::validation("predict.covariates", format!("missing column {n}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| cols.iter().map(|&c| number(i + 1, &table.headers[c], &row[c])).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    if rows.is_empty() {
        return Err(CliError::validation("predict.covariates", "no rows"));
    }
    Ok(Covariates::from_rows(&rows)?)
}
