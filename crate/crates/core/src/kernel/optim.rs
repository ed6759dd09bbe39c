//! Derivative-free minimizers: a multistart Nelder–Mead simplex and Brent's
//! scalar method.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    /// Tolerance on simplex diameter and on the spread of vertex values.
    pub tol: f64,
    /// Iteration cap per start; `None` means `500 · q`.
    pub max_iter: Option<usize>,
    pub multistarts: usize,
    pub restart_seed: u64,
    /// Half-width of the box around the initial point from which the
    /// additional starts are drawn.
    pub box_half_width: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: None, multistarts: 8, restart_seed: 0x5eed, box_half_width: 3.0 }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::SpecMismatch("optimizer tol must be positive".into()));
        }
        if self.max_iter == Some(0) {
            return Err(Error::SpecMismatch("optimizer max_iter must be at least 1".into()));
        }
        if self.multistarts == 0 {
            return Err(Error::SpecMismatch("optimizer multistarts must be at least 1".into()));
        }
        if !(self.box_half_width >= 0.0) {
            return Err(Error::SpecMismatch("optimizer box_half_width must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    /// False when the best start stopped on the iteration cap.
    pub converged: bool,
    pub evaluations: usize,
    /// Objective value at each start point, in start order.
    pub start_values: Vec<f64>,
}

struct Simplex {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

fn guarded(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], evals: &mut usize) -> f64 {
    *evals += 1;
    let v = f(x);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

impl Simplex {
    fn around(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], f0: f64, evals: &mut usize) -> Self {
        let mut points = vec![x0.to_vec()];
        let mut values = vec![f0];
        for i in 0..x0.len() {
            let mut x = x0.to_vec();
            x[i] += (0.1 * x0[i].abs()).max(0.25);
            values.push(guarded(f, &x, evals));
            points.push(x);
        }
        Self { points, values }
    }

    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.points = idx.iter().map(|&i| self.points[i].clone()).collect();
        self.values = idx.iter().map(|&i| self.values[i]).collect();
    }

    fn diameter(&self) -> f64 {
        let best = &self.points[0];
        self.points[1..]
            .iter()
            .map(|p| p.iter().zip(best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    fn spread(&self) -> f64 {
        self.values[self.values.len() - 1] - self.values[0]
    }
}

/// Runs one simplex descent. Returns `(point, value, converged)`.
fn descend(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    f0: f64,
    tol: f64,
    max_iter: usize,
    evals: &mut usize,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut s = Simplex::around(f, x0, f0, evals);
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    for _ in 0..max_iter {
        s.sort();
        let spread_ok = s.spread() <= tol * (1.0 + s.values[0].abs());
        if s.diameter() <= tol && spread_ok {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; n];
        for p in &s.points[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let worst = s.points[n].clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(alpha);
        let fr = guarded(f, &xr, evals);
        if fr < s.values[0] {
            let xe = along(gamma);
            let fe = guarded(f, &xe, evals);
            if fe < fr {
                s.points[n] = xe;
                s.values[n] = fe;
            } else {
                s.points[n] = xr;
                s.values[n] = fr;
            }
            continue;
        }
        if fr < s.values[n - 1] {
            s.points[n] = xr;
            s.values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < s.values[n] {
            let xc = along(alpha * rho);
            let fc = guarded(f, &xc, evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = guarded(f, &xc, evals);
            (xc, fc)
        };
        if fc < s.values[n].min(fr) {
            s.points[n] = xc;
            s.values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = s.points[0].clone();
        for i in 1..=n {
            let x: Vec<f64> = best.iter().zip(&s.points[i]).map(|(b, p)| b + sigma * (p - b)).collect();
            s.values[i] = guarded(f, &x, evals);
            s.points[i] = x;
        }
    }
    s.sort();
    (s.points[0].clone(), s.values[0], converged)
}

/// Multistart Nelder–Mead. The first start is `init`; the remaining
/// `multistarts − 1` are drawn uniformly from the box of half-width
/// `opts.box_half_width` around it. Each converged start is re-seeded from
/// its best vertex until a restart no longer improves.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    init: &[f64],
    opts: &OptimizerOptions,
) -> Result<MinimizeResult> {
    opts.validate()?;
    if init.is_empty() {
        return Err(Error::EmptyInput("nelder_mead init"));
    }
    let f0 = f(init);
    if !f0.is_finite() {
        return Err(Error::BadObjective);
    }
    let q = init.len();
    let max_iter = opts.max_iter.unwrap_or(500 * q);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.restart_seed);
    let mut evals = 1;

    let mut starts = vec![init.to_vec()];
    for _ in 1..opts.multistarts {
        starts.push(
            init.iter()
                .map(|c| c + opts.box_half_width * (2.0 * rng.random::<f64>() - 1.0))
                .collect(),
        );
    }

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut start_values = Vec::with_capacity(starts.len());
    for (k, x0) in starts.iter().enumerate() {
        let fx0 = if k == 0 { f0 } else { guarded(&mut f, x0, &mut evals) };
        start_values.push(fx0);
        if !fx0.is_finite() {
            continue;
        }
        let (mut x, mut v, mut conv) = descend(&mut f, x0, fx0, opts.tol, max_iter, &mut evals);
        for _ in 0..3 {
            let (x2, v2, c2) = descend(&mut f, &x, v, opts.tol, max_iter, &mut evals);
            let improved = v - v2 > opts.tol * (1.0 + v.abs());
            if v2 <= v {
                x = x2;
                v = v2;
                conv = c2;
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().map_or(true, |b| v < b.1) {
            best = Some((x, v, conv));
        }
    }
    let (argmin, value, converged) = best.ok_or(Error::BadObjective)?;
    Ok(MinimizeResult { argmin, value, converged, evaluations: evals, start_values })
}

/// Brent's bracketing minimizer (golden section with parabolic steps) on
/// `[lo, hi]`.
pub fn brent_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = if lo < hi { (lo, hi) } else { (hi, lo) };
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..500 {
        let xm = 0.5 * (a + b);
        let tol1 = 1e-10 * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    x
}
