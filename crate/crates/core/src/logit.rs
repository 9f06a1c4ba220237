//! Maximum-likelihood binary logit: log-likelihood and derivatives,
//! Newton-Raphson fitting and Table-style fit statistics.
//!
//! Per-row accumulations run over fixed blocks of [`BLOCK_ROWS`] rows whose
//! partial sums are combined by a balanced tree. The reduction shape depends
//! only on `n`, so results are bit-identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{DesignMatrix, TermMap};
use crate::linalg::{dependent_columns, dot, Cholesky, Matrix};
use crate::scalar::{pairwise_sum, tree_reduce, Scalar};
use crate::stats;

pub const BLOCK_ROWS: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need more observations than parameters (n = {n}, k = {k})")]
    TooFewObservations { n: usize, k: usize },
    #[error("design matrix is rank deficient; dependent columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("Newton-Raphson did not converge in {0} iterations")]
    NotConverged(usize),
    #[error("quasi-complete separation detected: {0}")]
    Separation(String),
    #[error("negative Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("coefficient vector contains non-finite values")]
    NonFiniteBeta,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("fit did not converge; statistics are unavailable")]
    NotConvergedStats,
    #[error("null log-likelihood must be negative")]
    InvalidNullLikelihood,
    #[error("covariance diagonal entry {0} is not positive")]
    DegenerateCovariance(usize),
}

pub type Result<T> = std::result::Result<T, FitError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions<F> {
    pub max_iter: usize,
    /// Relative change in log-likelihood that counts as converged.
    pub tol: F,
    /// Largest score component allowed at convergence.
    pub score_tol: F,
    /// Separation flag: |β_j| times the sd of column j above this.
    pub separation_std_coef: F,
    /// Separation flag: every fitted p in a group within this of 0 or 1.
    pub separation_prob: F,
}

impl<F: Scalar> Default for FitOptions<F> {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: F::of(1e-10),
            score_tol: F::of(1e-6),
            separation_std_coef: F::of(30.0),
            separation_prob: F::of(1e-10),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<F> {
    pub beta: Vec<F>,
    pub cov: Matrix<F>,
    pub ll: F,
    pub ll0: F,
    pub n: usize,
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    pub term_map: TermMap,
    /// Log-likelihood after each accepted Newton step, starting at β = 0.
    pub ll_trace: Vec<F>,
}

impl<F: Scalar> FitResult<F> {
    /// A result from externally supplied coefficients, e.g. reported
    /// estimates. `cov` defaults to zeros when unknown.
    pub fn from_coefficients(term_map: TermMap, beta: Vec<F>, cov: Option<Matrix<F>>) -> Self {
        let k = beta.len();
        assert_eq!(k, term_map.k(), "coefficient count must match the term map");
        Self {
            cov: cov.unwrap_or_else(|| Matrix::zeros(k, k)),
            beta,
            ll: F::nan(),
            ll0: F::nan(),
            n: 0,
            k,
            iterations: 0,
            converged: true,
            term_map,
            ll_trace: Vec::new(),
        }
    }

    pub fn coefficient(&self, name: &str) -> Option<F> {
        self.term_map.column_index(name).map(|j| self.beta[j])
    }

    pub fn std_errors(&self) -> Vec<F> {
        (0..self.k).map(|j| self.cov[(j, j)].max(F::zero()).sqrt()).collect()
    }
}

fn check_dims<F: Scalar>(beta: &[F], x: &Matrix<F>, y: &[F]) -> Result<()> {
    if beta.len() != x.ncols() {
        return Err(FitError::Dimension(format!(
            "beta has {} entries, X has {} columns",
            beta.len(),
            x.ncols()
        )));
    }
    if y.len() != x.nrows() {
        return Err(FitError::Dimension(format!(
            "y has {} entries, X has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    Ok(())
}

fn blocks(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(BLOCK_ROWS))
        .map(|b| (b * BLOCK_ROWS, ((b + 1) * BLOCK_ROWS).min(n)))
        .collect()
}

/// Σ y·η − log(1 + e^η) with η = Xβ.
pub fn log_likelihood<F: Scalar>(beta: &[F], x: &Matrix<F>, y: &[F]) -> Result<F> {
    check_dims(beta, x, y)?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(FitError::NonFiniteBeta);
    }
    let parts: Vec<F> = blocks(x.nrows())
        .into_par_iter()
        .map(|(lo, hi)| {
            let terms: Vec<F> = (lo..hi)
                .map(|i| {
                    let eta = dot(x.row(i), beta);
                    y[i] * eta - eta.softplus()
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    Ok(tree_reduce(parts, |a, b| a + b).unwrap_or_else(F::zero))
}

struct Partial<F> {
    score: Vec<F>,
    /// Upper triangle of Xᵀ W X, row-major.
    info: Vec<F>,
}

/// Score `Xᵀ(y − p)` and Hessian `−Xᵀ diag(p(1−p)) X`.
pub fn score_and_hessian<F: Scalar>(beta: &[F], x: &Matrix<F>, y: &[F]) -> Result<(Vec<F>, Matrix<F>)> {
    check_dims(beta, x, y)?;
    let k = x.ncols();
    let tri = k * (k + 1) / 2;
    let parts: Vec<Partial<F>> = blocks(x.nrows())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut score = vec![F::zero(); k];
            let mut info = vec![F::zero(); tri];
            for i in lo..hi {
                let row = x.row(i);
                let p = dot(row, beta).logistic();
                let r = y[i] - p;
                let w = p * (F::one() - p);
                let mut t = 0;
                for a in 0..k {
                    score[a] += row[a] * r;
                    let wa = w * row[a];
                    for b in a..k {
                        info[t] += wa * row[b];
                        t += 1;
                    }
                }
            }
            Partial { score, info }
        })
        .collect();
    let total = tree_reduce(parts, |mut a, b| {
        a.score.iter_mut().zip(&b.score).for_each(|(u, v)| *u += *v);
        a.info.iter_mut().zip(&b.info).for_each(|(u, v)| *u += *v);
        a
    })
    .unwrap_or(Partial {
        score: vec![F::zero(); k],
        info: vec![F::zero(); tri],
    });
    let mut h = Matrix::zeros(k, k);
    let mut t = 0;
    for a in 0..k {
        for b in a..k {
            h[(a, b)] = -total.info[t];
            h[(b, a)] = -total.info[t];
            t += 1;
        }
    }
    Ok((total.score, h))
}

fn neg<F: Scalar>(m: &Matrix<F>) -> Matrix<F> {
    let mut out = m.clone();
    out.scale(-F::one());
    out
}

fn column_sd<F: Scalar>(x: &Matrix<F>, j: usize) -> F {
    let n = F::of_usize(x.nrows());
    let col = x.column(j);
    let mean = pairwise_sum(&col) / n;
    let sq: Vec<F> = col.iter().map(|v| (*v - mean) * (*v - mean)).collect();
    (pairwise_sum(&sq) / n).sqrt()
}

fn null_log_likelihood<F: Scalar>(y: &[F]) -> F {
    let n = F::of_usize(y.len());
    let ybar = pairwise_sum(y) / n;
    let one = F::one();
    if ybar <= F::zero() || ybar >= one {
        return F::zero();
    }
    n * (ybar * ybar.ln() + (one - ybar) * (one - ybar).ln())
}

fn detect_separation<F: Scalar>(
    beta: &[F],
    x: &Matrix<F>,
    sds: &[F],
    term_map: &TermMap,
    opts: &FitOptions<F>,
) -> Option<String> {
    for (j, (&b, &sd)) in beta.iter().zip(sds).enumerate().skip(1) {
        if (b * sd).abs() > opts.separation_std_coef {
            return Some(format!(
                "standardized coefficient of `{}` is {:.1}",
                term_map.columns[j].name,
                (b * sd).f64()
            ));
        }
    }
    let eps = opts.separation_prob;
    let extreme: Vec<bool> = (0..x.nrows())
        .map(|i| {
            let p = dot(x.row(i), beta).logistic();
            p < eps || p > F::one() - eps
        })
        .collect();
    if extreme.iter().all(|&e| e) {
        return Some("all fitted probabilities are 0 or 1".into());
    }
    for (j, c) in term_map.columns.iter().enumerate() {
        if !matches!(c.transform, crate::formula::Transform::Indicator(_)) {
            continue;
        }
        let mut any = false;
        let mut all = true;
        for i in 0..x.nrows() {
            if x[(i, j)] == F::one() {
                any = true;
                all &= extreme[i];
            }
        }
        if any && all {
            return Some(format!("fitted probabilities are all 0 or 1 where `{}` = 1", c.name));
        }
    }
    None
}

/// Fits `y ~ X` by Newton-Raphson from β = 0 with step halving.
pub fn fit<F: Scalar>(
    x: &Matrix<F>,
    y: &[F],
    term_map: &TermMap,
    opts: &FitOptions<F>,
) -> Result<FitResult<F>> {
    let (n, k) = (x.nrows(), x.ncols());
    if y.len() != n || term_map.k() != k {
        return Err(FitError::Dimension(format!(
            "X is {n}x{k}, y has {} entries, term map has {} columns",
            y.len(),
            term_map.k()
        )));
    }
    if n <= k {
        return Err(FitError::TooFewObservations { n, k });
    }
    let dep = dependent_columns(x, F::of(1e-9));
    if !dep.is_empty() {
        return Err(FitError::RankDeficient(
            dep.iter().map(|&j| term_map.columns[j].name.clone()).collect(),
        ));
    }
    let sds: Vec<F> = (0..k).map(|j| column_sd(x, j)).collect();

    let mut beta = vec![F::zero(); k];
    let mut ll = log_likelihood(&beta, x, y)?;
    let mut trace = vec![ll];
    let mut rel_change = F::infinity();
    for it in 0..=opts.max_iter {
        let (score, hess) = score_and_hessian(&beta, x, y)?;
        let max_score = score.iter().fold(F::zero(), |m, s| m.max(s.abs()));
        if rel_change < opts.tol && max_score < opts.score_tol {
            let info = neg(&hess);
            let chol = Cholesky::new(&info).ok_or(FitError::NotPositiveDefinite)?;
            return Ok(FitResult {
                cov: chol.inverse(),
                ll,
                ll0: null_log_likelihood(y),
                n,
                k,
                iterations: it,
                converged: true,
                term_map: term_map.clone(),
                ll_trace: trace,
                beta,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let chol = match Cholesky::new(&neg(&hess)) {
            Some(c) => c,
            None => {
                return Err(match detect_separation(&beta, x, &sds, term_map, opts) {
                    Some(msg) => FitError::Separation(msg),
                    None => FitError::NotPositiveDefinite,
                })
            }
        };
        let step = chol.solve(&score);
        // near the optimum the true gain drops below the rounding error of
        // the summed log-likelihood; a "decrease" that small is noise
        let noise = F::of(16.0) * F::epsilon() * ll.abs();
        let mut t = F::one();
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<F> = beta.iter().zip(&step).map(|(b, s)| *b + t * *s).collect();
            let ll_c = log_likelihood(&cand, x, y)?;
            if ll_c >= ll - noise {
                accepted = Some((cand, ll_c));
                break;
            }
            t *= F::of(0.5);
        }
        let (cand, ll_c) = accepted.unwrap_or_else(|| (beta.clone(), ll));
        rel_change = (ll_c - ll).abs() / ll.abs().max(F::min_positive_value());
        beta = cand;
        ll = ll_c;
        trace.push(ll);
        if let Some(msg) = detect_separation(&beta, x, &sds, term_map, opts) {
            return Err(FitError::Separation(msg));
        }
    }
    Err(FitError::NotConverged(opts.max_iter))
}

/// Convenience wrapper over [`fit`] for a built design.
pub fn fit_design<F: Scalar>(
    design: &DesignMatrix<F>,
    term_map: &TermMap,
    opts: &FitOptions<F>,
) -> Result<FitResult<F>> {
    fit(&design.x, &design.y, term_map, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefStat<F> {
    pub name: String,
    pub estimate: F,
    pub se: F,
    pub z: F,
    pub p: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStats<F> {
    /// McFadden: 1 − ll / ll0.
    pub pseudo_r2: F,
    pub aic: F,
    pub bic: F,
    pub lr_chi2: F,
    pub df: usize,
    pub coefficients: Vec<CoefStat<F>>,
}

pub fn fit_stats<F: Scalar>(fr: &FitResult<F>) -> Result<FitStats<F>> {
    if !fr.converged {
        return Err(FitError::NotConvergedStats);
    }
    if !(fr.ll0 < F::zero()) {
        return Err(FitError::InvalidNullLikelihood);
    }
    let k = F::of_usize(fr.k);
    let two = F::of(2.0);
    let mut coefficients = Vec::with_capacity(fr.k);
    for j in 0..fr.k {
        let var = fr.cov[(j, j)];
        if !(var > F::zero()) {
            return Err(FitError::DegenerateCovariance(j));
        }
        let se = var.sqrt();
        let z = fr.beta[j] / se;
        coefficients.push(CoefStat {
            name: fr.term_map.columns[j].name.clone(),
            estimate: fr.beta[j],
            se,
            z,
            p: F::of(stats::two_sided_p(z.f64())),
        });
    }
    Ok(FitStats {
        pseudo_r2: F::one() - fr.ll / fr.ll0,
        aic: two * k - two * fr.ll,
        bic: k * F::of_usize(fr.n).ln() - two * fr.ll,
        lr_chi2: (two * (fr.ll - fr.ll0)).max(F::zero()),
        df: fr.k - 1,
        coefficients,
    })
}

/// `logistic(x·β)` for each row.
pub fn predict<F: Scalar>(fr: &FitResult<F>, rows: &Matrix<F>) -> Result<Vec<F>> {
    if rows.ncols() != fr.k {
        return Err(FitError::Dimension(format!(
            "rows have width {}, model has {} coefficients",
            rows.ncols(),
            fr.k
        )));
    }
    Ok(rows.rows_iter().map(|r| dot(r, &fr.beta).logistic()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_only(y: &[f64]) -> (Matrix<f64>, TermMap) {
        let x = Matrix::from_row_major(y.len(), 1, vec![1.0; y.len()]);
        (x, TermMap::linear("y", &[]))
    }

    #[test]
    fn ll_at_zero_is_n_log_half() {
        let (x, _) = intercept_only(&[0.0, 1.0, 1.0, 0.0, 1.0]);
        let ll = log_likelihood(&[0.0], &x, &[0.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((ll - 5.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ll_closed_form_at_mle() {
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let (x, _) = intercept_only(&y);
        let ll = log_likelihood(&[(1.0f64 / 3.0).ln()], &x, &y).unwrap();
        let want = 8.0 * (0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn ll_is_finite_for_huge_eta() {
        let x = Matrix::from_rows(&[vec![1.0, 800.0], vec![1.0, -800.0]]);
        let ll: f64 = log_likelihood(&[0.0, 1.0], &x, &[1.0, 0.0]).unwrap();
        assert!(ll.is_finite());
        assert!(ll.abs() < 1e-300);
        assert_eq!(
            log_likelihood(&[f64::NAN, 1.0], &x, &[1.0, 0.0]),
            Err(FitError::NonFiniteBeta)
        );
    }

    #[test]
    fn intercept_only_fit_is_logit_of_mean() {
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let (x, map) = intercept_only(&y);
        let fr = fit(&x, &y, &map, &FitOptions::default()).unwrap();
        assert!((fr.beta[0] - (0.25f64 / 0.75).ln()).abs() < 1e-10);
        assert!((fr.beta[0] + 1.0986122886681098).abs() < 1e-10);
        let st = fit_stats(&fr).unwrap();
        assert!(st.pseudo_r2.abs() < 1e-12);
        assert!(st.lr_chi2.abs() < 1e-12);
        assert_eq!(st.df, 0);
    }

    #[test]
    fn separation_is_an_error() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let x = Matrix::from_rows(&xs.iter().map(|&v| vec![1.0, v]).collect::<Vec<_>>());
        let map = TermMap::linear("y", &["x"]);
        assert!(matches!(
            fit(&x, &y, &map, &FitOptions::default()),
            Err(FitError::Separation(_))
        ));
    }

    #[test]
    fn constant_response_is_separation() {
        let y = [1.0; 6];
        let (x, map) = intercept_only(&y);
        assert!(matches!(
            fit(&x, &y, &map, &FitOptions::default()),
            Err(FitError::Separation(_))
        ));
    }

    #[test]
    fn redundant_column_is_reported() {
        let x = Matrix::from_rows(&[
            vec![1.0, 1.0, 2.0],
            vec![1.0, 2.0, 4.0],
            vec![1.0, 3.0, 6.0],
            vec![1.0, 4.0, 8.0],
            vec![1.0, 5.0, 10.0],
        ]);
        let map = TermMap::linear("y", &["a", "b"]);
        let y = [0.0, 1.0, 0.0, 1.0, 1.0];
        assert_eq!(
            fit(&x, &y, &map, &FitOptions::default()),
            Err(FitError::RankDeficient(vec!["b".into()]))
        );
    }

    #[test]
    fn too_few_rows() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        let map = TermMap::linear("y", &["a"]);
        assert_eq!(
            fit(&x, &[0.0, 1.0], &map, &FitOptions::default()),
            Err(FitError::TooFewObservations { n: 2, k: 2 })
        );
    }

    #[test]
    fn predict_basics() {
        let map = TermMap::linear("y", &["x"]);
        let fr = FitResult::from_coefficients(map, vec![0.0, 0.0], None);
        let p = predict(&fr, &Matrix::from_rows(&[vec![1.0, 3.0]])).unwrap();
        assert_eq!(p, vec![0.5]);
        assert!(predict(&fr, &Matrix::from_rows(&[vec![1.0]])).is_err());

        let fr = FitResult::from_coefficients(TermMap::linear("y", &[]), vec![-3.961], None);
        let p: f64 = predict(&fr, &Matrix::from_rows(&[vec![1.0]])).unwrap()[0];
        assert!((p - 0.01869).abs() < 1e-5);
        assert!((p - 0.018_688_162_210_093_77).abs() < 1e-15);

        let fr = FitResult::from_coefficients(TermMap::linear("y", &["jif"]), vec![-1.0, 0.3], None);
        let p = predict(&fr, &Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 2.0]])).unwrap();
        assert!(p[1] > p[0]);
    }

    #[test]
    fn bic_minus_aic_identity() {
        let y: Vec<f64> = (0..40).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let x = Matrix::from_rows(&(0..40).map(|i| vec![1.0, (i % 5) as f64]).collect::<Vec<_>>());
        let fr = fit(&x, &y, &TermMap::linear("y", &["x"]), &FitOptions::default()).unwrap();
        let st = fit_stats(&fr).unwrap();
        assert!((st.bic - st.aic - 2.0 * ((40f64).ln() - 2.0)).abs() < 1e-9);
    }

    #[test]
    fn works_in_f32() {
        let y: Vec<f32> = (0..60).map(|i| ((i * 7) % 3 == 0) as u8 as f32).collect();
        let x = Matrix::from_rows(&(0..60).map(|i| vec![1.0f32, (i % 5) as f32]).collect::<Vec<_>>());
        let opts = FitOptions::<f32> {
            tol: 1e-6,
            score_tol: 1e-3,
            ..FitOptions::default()
        };
        let fr = fit(&x, &y, &TermMap::linear("y", &["x"]), &opts).unwrap();
        let mean_p: f32 = predict(&fr, &x).unwrap().iter().sum::<f32>() / 60.0;
        let ybar: f32 = y.iter().sum::<f32>() / 60.0;
        assert!((mean_p - ybar).abs() < 1e-4);
    }
}
