//! Logistic regression with adjusted predictions and marginal effects.
//!
//! The pipeline runs `dataset` → `formula` → `logit` → `margins`:
//! load a typed CSV, build a dummy-coded design from a formula such as
//! `top10 ~ C(univ) + jif + jif^2`, fit by Newton–Raphson, then average
//! counterfactual predictions over the sample with delta-method (or
//! bootstrap) standard errors. `synth` generates corpora with known
//! coefficients for checking the whole chain.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, with `*32` variants for single precision.

pub mod dataset;
pub mod formula;
pub mod linalg;
pub mod logit;
pub mod margins;
pub mod model_file;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Design = formula::DesignMatrix<f64>;
pub type Fit = logit::FitResult<f64>;
pub type FitOptions = logit::FitOptions<f64>;
pub type MarginRow = margins::MarginRow<f64>;
pub type MarginRequest = margins::MarginRequest<f64>;

pub type Matrix32 = linalg::Matrix<f32>;
pub type Design32 = formula::DesignMatrix<f32>;
pub type Fit32 = logit::FitResult<f32>;
pub type MarginRow32 = margins::MarginRow<f32>;

/// 17 significant digits, scientific notation; parses back to the same
/// `f64`.
pub fn fmt_sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}
