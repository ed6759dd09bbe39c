//! Self-contained numerical primitives used by the estimators.

mod isotonic;
mod linalg;
mod normal;
mod optim;

pub use isotonic::{isotonic_in_place, isotonic_regression};
pub use linalg::{cholesky_factor, max_asymmetry, min_eigenvalue_at_least, spd_inverse_ridge, sym_eig_clip, symmetrize};
pub use normal::{norm_cdf, norm_quantile};
pub use optim::{brent_min, nelder_mead, MinimizeResult, OptimizerOptions};
