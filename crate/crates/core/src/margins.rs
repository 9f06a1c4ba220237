//! Adjusted predictions and marginal effects with delta-method standard
//! errors.
//!
//! Every margin is an average over the sample of a per-row quantity computed
//! on a counterfactual copy of the row: the target variable (and, for
//! representative values, a continuous covariate) is overwritten through
//! [`TermMap::plan`], everything else keeps its observed value. Squared
//! columns follow their base column. The standard error comes from the
//! gradient of that average with respect to β propagated through the
//! coefficient covariance, `se = sqrt(gᵀ V g)`.
//!
//! | kind | target | `at` | rows |
//! |------|--------|------|------|
//! | AAP  | factor | none | one per level |
//! | AAP  | continuous | same variable | one per grid value |
//! | AME  | factor (base) | none | one per non-base level |
//! | AME  | continuous | same variable, grid or observed | per grid value, or one |
//! | APRV | factor | other continuous | level × grid value |
//! | MERV | factor (base) | other continuous | non-base level × grid value |
//! | APM / MEM | as AAP / AME | as AAP / AME | evaluated at the sample-means row |
//!
//! Factor AAPs at-means use fractional indicators (the column means).

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::formula::{DesignMatrix, FormulaError, Substitution, TermMap, Transform, Value};
use crate::linalg::{dot, Matrix};
use crate::logit::{self, FitError, FitOptions, FitResult, BLOCK_ROWS};
use crate::rng::{child_seeds, Stream};
use crate::scalar::{pairwise_sum, tree_reduce, Scalar};
use crate::{fmt_sig17, stats};

#[derive(Debug, Error, PartialEq)]
pub enum MarginError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("`{0}` is not a factor in the model")]
    NotFactor(String),
    #[error("`{0}` is not a continuous variable in the model")]
    NotContinuous(String),
    #[error("a base level is required for marginal effects of `{0}`")]
    MissingBase(String),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid values must be finite")]
    NonFiniteGrid,
    #[error("grid values must be strictly ascending")]
    UnsortedGrid,
    #[error("confidence level must lie in (0, 1)")]
    InvalidCiLevel,
    #[error("model has not converged")]
    NotConverged,
    #[error("design has {got} columns, model has {expected}")]
    Width { got: usize, expected: usize },
    #[error("invalid request: {0}")]
    Request(String),
    #[error("bootstrap needs at least 100 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{failed} of {reps} bootstrap replicates failed")]
    TooManyFailures { failed: usize, reps: usize },
}

pub type Result<T> = std::result::Result<T, MarginError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginKind {
    Aap,
    Ame,
    Apm,
    Mem,
    Aprv,
    Merv,
}

impl MarginKind {
    fn is_effect(self) -> bool {
        matches!(self, MarginKind::Ame | MarginKind::Mem | MarginKind::Merv)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grid<F> {
    Values(Vec<F>),
    /// Each row keeps its own observed value.
    Observed,
}

/// Scale of continuous marginal effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EffectScale {
    /// Instantaneous derivative dp/dx.
    #[default]
    Derivative,
    /// Discrete change p(x + 1) − p(x).
    UnitChange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginRequest<F> {
    pub kind: MarginKind,
    pub variable: String,
    /// Factor levels to report; all coded levels when `None`.
    pub levels: Option<Vec<String>>,
    /// Base level for factor contrasts; the reference level when `None`.
    pub base: Option<String>,
    pub at: Option<(String, Grid<F>)>,
    pub ci_level: F,
    pub effect: EffectScale,
}

impl<F: Scalar> MarginRequest<F> {
    pub fn new(kind: MarginKind, variable: impl Into<String>) -> Self {
        Self {
            kind,
            variable: variable.into(),
            levels: None,
            base: None,
            at: None,
            ci_level: F::of(0.95),
            effect: EffectScale::Derivative,
        }
    }

    pub fn at(mut self, var: impl Into<String>, grid: Grid<F>) -> Self {
        self.at = Some((var.into(), grid));
        self
    }

    pub fn base(mut self, level: impl Into<String>) -> Self {
        self.base = Some(level.into());
        self
    }

    pub fn levels(mut self, levels: Vec<String>) -> Self {
        self.levels = Some(levels);
        self
    }

    pub fn ci_level(mut self, level: F) -> Self {
        self.ci_level = level;
        self
    }

    pub fn effect(mut self, effect: EffectScale) -> Self {
        self.effect = effect;
        self
    }
}

/// A margin before inference: point estimate and its gradient in β.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<F> {
    pub label: String,
    pub at_value: Option<F>,
    pub value: F,
    pub gradient: Vec<F>,
    /// The grid value lies outside the observed range of its variable.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginRow<F> {
    pub label: String,
    pub at_value: Option<F>,
    pub estimate: F,
    pub se: F,
    pub z: F,
    pub p: F,
    pub ci_low: F,
    pub ci_high: F,
    pub extrapolated: bool,
}

impl<F: Scalar> MarginRow<F> {
    /// Row with inference from a standard error and critical value.
    pub fn from_se(label: String, at_value: Option<F>, estimate: F, se: F, z_crit: F, extrapolated: bool) -> Self {
        let z = if se > F::zero() {
            estimate / se
        } else if estimate == F::zero() {
            F::zero()
        } else {
            estimate.signum() * F::infinity()
        };
        Self {
            label,
            at_value,
            estimate,
            se,
            z,
            p: F::of(stats::two_sided_p(z.f64())),
            ci_low: estimate - z_crit * se,
            ci_high: estimate + z_crit * se,
            extrapolated,
        }
    }

    pub fn with_se(&self, se: F, z_crit: F) -> Self {
        Self::from_se(self.label.clone(), self.at_value, self.estimate, se, z_crit, self.extrapolated)
    }
}

/// Critical value for a two-sided interval; exactly 1.959964 (to double
/// precision) at 95%.
pub fn z_critical<F: Scalar>(level: F) -> Result<F> {
    let l = level.f64();
    if !(l > 0.0 && l < 1.0) {
        return Err(MarginError::InvalidCiLevel);
    }
    Ok(F::of(stats::critical_value(l)))
}

/// Evaluation context: coefficients, rows to average over and column map.
struct Engine<'a, F> {
    beta: &'a [F],
    x: &'a Matrix<F>,
    map: &'a TermMap,
}

struct Acc<F> {
    value: Vec<F>,
    grad: Vec<F>,
}

impl<'a, F: Scalar> Engine<'a, F> {
    /// Mean over rows of `f(row)`, where `f` returns a value and adds its
    /// gradient into the supplied buffer. Blocked, tree-reduced.
    fn average<G>(&self, f: G) -> (F, Vec<F>)
    where
        G: Fn(&mut [F], &mut [F]) -> F + Sync,
    {
        let n = self.x.nrows();
        let k = self.x.ncols();
        let blocks: Vec<(usize, usize)> = (0..n.div_ceil(BLOCK_ROWS))
            .map(|b| (b * BLOCK_ROWS, ((b + 1) * BLOCK_ROWS).min(n)))
            .collect();
        let parts: Vec<Acc<F>> = blocks
            .into_par_iter()
            .map(|(lo, hi)| {
                let mut row = vec![F::zero(); k];
                let mut grad = vec![F::zero(); k];
                let mut values = Vec::with_capacity(hi - lo);
                for i in lo..hi {
                    row.copy_from_slice(self.x.row(i));
                    values.push(f(&mut row, &mut grad));
                }
                Acc {
                    value: vec![pairwise_sum(&values)],
                    grad,
                }
            })
            .collect();
        let total = tree_reduce(parts, |mut a, b| {
            a.value[0] += b.value[0];
            a.grad.iter_mut().zip(&b.grad).for_each(|(u, v)| *u += *v);
            a
        })
        .unwrap_or(Acc {
            value: vec![F::zero()],
            grad: vec![F::zero(); k],
        });
        let nf = F::of_usize(n.max(1));
        (total.value[0] / nf, total.grad.into_iter().map(|g| g / nf).collect())
    }

    /// Average adjusted prediction under a substitution.
    fn prediction(&self, plan: &Substitution<F>) -> (F, Vec<F>) {
        let beta = self.beta;
        let map = self.map;
        self.average(|row, grad| {
            plan.apply(row);
            debug_assert!(map.is_coherent(row), "substituted row is incoherent");
            let p = dot(row, beta).logistic();
            let w = p * (F::one() - p);
            for (g, x) in grad.iter_mut().zip(row.iter()) {
                *g += w * *x;
            }
            p
        })
    }

    /// Average derivative dp/d`var`. With `at = None` every row keeps its
    /// own value of `var`.
    fn derivative(&self, var: &str, plan: &Substitution<F>, at: Option<F>) -> (F, Vec<F>) {
        let lin = self.map.identity_column(var).expect("continuous variable");
        let sq = self.map.square_column(var);
        let beta = self.beta;
        let two = F::of(2.0);
        self.average(|row, grad| {
            plan.apply(row);
            let v = at.unwrap_or(row[lin]);
            if at.is_some() {
                row[lin] = v;
                if let Some(s) = sq {
                    row[s] = v * v;
                }
            }
            let slope = beta[lin] + sq.map_or(F::zero(), |s| two * beta[s] * v);
            let p = dot(row, beta).logistic();
            let w = p * (F::one() - p);
            let curv = w * (F::one() - two * p) * slope;
            for (g, x) in grad.iter_mut().zip(row.iter()) {
                *g += curv * *x;
            }
            grad[lin] += w;
            if let Some(s) = sq {
                grad[s] += w * two * v;
            }
            w * slope
        })
    }

    /// Average of p(x + 1) − p(x) for continuous `var`.
    fn unit_change(&self, var: &str, plan: &Substitution<F>, at: Option<F>) -> (F, Vec<F>) {
        let lin = self.map.identity_column(var).expect("continuous variable");
        let sq = self.map.square_column(var);
        let beta = self.beta;
        let k = self.x.ncols();
        self.average(|row, grad| {
            plan.apply(row);
            let v = at.unwrap_or(row[lin]);
            let mut out = F::zero();
            let mut upper = vec![F::zero(); k];
            for (sign, val) in [(-F::one(), v), (F::one(), v + F::one())] {
                row[lin] = val;
                if let Some(s) = sq {
                    row[s] = val * val;
                }
                let p = dot(row, beta).logistic();
                let w = p * (F::one() - p);
                for (g, x) in upper.iter_mut().zip(row.iter()) {
                    *g += sign * w * *x;
                }
                out += sign * p;
            }
            for (g, u) in grad.iter_mut().zip(&upper) {
                *g += *u;
            }
            out
        })
    }
}

fn validate_grid<F: Scalar>(grid: &[F]) -> Result<()> {
    if grid.is_empty() {
        return Err(MarginError::EmptyGrid);
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(MarginError::NonFiniteGrid);
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MarginError::UnsortedGrid);
    }
    Ok(())
}

fn factor_levels<'m>(map: &'m TermMap, var: &str, levels: &Option<Vec<String>>) -> Result<Vec<String>> {
    let f = map.factor(var).ok_or_else(|| MarginError::NotFactor(var.to_string()))?;
    match levels {
        None => Ok(f.levels.clone()),
        Some(ls) => {
            for l in ls {
                if !f.levels.contains(l) {
                    return Err(FormulaError::UnknownLevel {
                        variable: var.to_string(),
                        level: l.clone(),
                    }
                    .into());
                }
            }
            Ok(ls.clone())
        }
    }
}

fn observed_range<F: Scalar>(x: &Matrix<F>, map: &TermMap, var: &str) -> (F, F) {
    let j = map.identity_column(var).expect("continuous variable");
    x.rows_iter().fold((F::infinity(), F::neg_infinity()), |(lo, hi), r| {
        (lo.min(r[j]), hi.max(r[j]))
    })
}

/// Point estimates and β-gradients for a request, evaluated on the rows of
/// `x` with coefficients `beta`. `range_x` supplies the observed support
/// used to flag extrapolated grid values.
pub fn estimates<F: Scalar>(
    beta: &[F],
    x: &Matrix<F>,
    map: &TermMap,
    req: &MarginRequest<F>,
) -> Result<Vec<Estimate<F>>> {
    estimates_with_range(beta, x, x, map, req)
}

fn estimates_with_range<F: Scalar>(
    beta: &[F],
    x: &Matrix<F>,
    range_x: &Matrix<F>,
    map: &TermMap,
    req: &MarginRequest<F>,
) -> Result<Vec<Estimate<F>>> {
    if x.ncols() != map.k() || beta.len() != map.k() {
        return Err(MarginError::Width {
            got: x.ncols(),
            expected: map.k(),
        });
    }
    let eng = Engine { beta, x, map };
    let var = req.variable.as_str();
    let kind = req.kind;
    let base_kind = match kind {
        MarginKind::Apm => MarginKind::Aap,
        MarginKind::Mem => MarginKind::Ame,
        k => k,
    };

    if map.is_factor(var) {
        let levels = factor_levels(map, var, &req.levels)?;
        let coding = map.factor(var).expect("factor");
        let base = if base_kind.is_effect() {
            let b = req.base.clone().unwrap_or_else(|| coding.reference.clone());
            if !coding.levels.contains(&b) {
                return Err(FormulaError::UnknownLevel {
                    variable: var.to_string(),
                    level: b,
                }
                .into());
            }
            Some(b)
        } else {
            None
        };
        // (continuous var, grid) for representative values
        let rep: Option<(String, Vec<F>)> = match (&req.at, base_kind) {
            (None, MarginKind::Aap | MarginKind::Ame) => None,
            (Some((cv, Grid::Values(g))), MarginKind::Aprv | MarginKind::Merv | MarginKind::Aap | MarginKind::Ame) => {
                if !map.is_continuous(cv) {
                    return Err(MarginError::NotContinuous(cv.clone()));
                }
                validate_grid(g)?;
                Some((cv.clone(), g.clone()))
            }
            (Some((_, Grid::Observed)), _) => {
                return Err(MarginError::Request("`observed` grids apply to continuous effects only".into()))
            }
            (None, _) => {
                return Err(MarginError::Request(
                    "representative values need a continuous `at` grid".into(),
                ))
            }
            _ => unreachable!(),
        };
        let range = rep.as_ref().map(|(cv, _)| observed_range(range_x, map, cv));
        let points: Vec<Option<F>> = match &rep {
            None => vec![None],
            Some((_, g)) => g.iter().map(|&v| Some(v)).collect(),
        };
        let mut jobs = Vec::new();
        for l in &levels {
            if base.as_deref() == Some(l.as_str()) {
                continue;
            }
            for &v in &points {
                jobs.push((l.clone(), v));
            }
        }
        let out: Vec<Result<Estimate<F>>> = jobs
            .par_iter()
            .map(|(l, v)| {
                let mut plan = map.plan(var, &Value::Level(l.clone()))?;
                if let (Some((cv, _)), Some(val)) = (&rep, v) {
                    plan = plan.then(&map.plan(cv, &Value::Real(*val))?);
                }
                let (mut value, mut gradient) = eng.prediction(&plan);
                let mut label = format!("{var}={l}");
                if let Some(b) = &base {
                    let mut bplan = map.plan(var, &Value::Level(b.clone()))?;
                    if let (Some((cv, _)), Some(val)) = (&rep, v) {
                        bplan = bplan.then(&map.plan(cv, &Value::Real(*val))?);
                    }
                    let (bv, bg) = eng.prediction(&bplan);
                    value = value - bv;
                    gradient.iter_mut().zip(&bg).for_each(|(g, b)| *g -= *b);
                    label = format!("{var}={l} vs {b}");
                }
                let extrapolated = match (range, v) {
                    (Some((lo, hi)), Some(val)) => *val < lo || *val > hi,
                    _ => false,
                };
                Ok(Estimate {
                    label,
                    at_value: *v,
                    value,
                    gradient,
                    extrapolated,
                })
            })
            .collect();
        return out.into_iter().collect();
    }

    if !map.is_continuous(var) {
        return Err(if map.columns_of(var).is_empty() {
            FormulaError::NotInModel(var.to_string()).into()
        } else {
            MarginError::NotContinuous(var.to_string())
        });
    }
    if matches!(base_kind, MarginKind::Aprv | MarginKind::Merv) {
        return Err(MarginError::NotFactor(var.to_string()));
    }
    let grid = match &req.at {
        Some((cv, g)) if cv == var => g.clone(),
        Some((cv, _)) => {
            return Err(MarginError::Request(format!(
                "continuous margins of `{var}` take their grid on `{var}`, not `{cv}`"
            )))
        }
        None => {
            if base_kind == MarginKind::Ame {
                Grid::Observed
            } else {
                return Err(MarginError::Request(format!(
                    "adjusted predictions for continuous `{var}` need a grid"
                )));
            }
        }
    };
    let (lo, hi) = observed_range(range_x, map, var);
    let identity = Substitution::identity();
    match grid {
        Grid::Observed => {
            if base_kind != MarginKind::Ame {
                return Err(MarginError::Request("`observed` grids apply to effects only".into()));
            }
            let (value, gradient) = match req.effect {
                EffectScale::Derivative => eng.derivative(var, &identity, None),
                EffectScale::UnitChange => eng.unit_change(var, &identity, None),
            };
            Ok(vec![Estimate {
                label: format!("dydx({var})"),
                at_value: None,
                value,
                gradient,
                extrapolated: false,
            }])
        }
        Grid::Values(g) => {
            validate_grid(&g)?;
            g.par_iter()
                .map(|&v| {
                    let (value, gradient, label) = if base_kind == MarginKind::Ame {
                        let (a, b) = match req.effect {
                            EffectScale::Derivative => eng.derivative(var, &identity, Some(v)),
                            EffectScale::UnitChange => eng.unit_change(var, &identity, Some(v)),
                        };
                        (a, b, format!("dydx({var})"))
                    } else {
                        let plan = map.plan(var, &Value::Real(v))?;
                        let (a, b) = eng.prediction(&plan);
                        (a, b, var.to_string())
                    };
                    Ok(Estimate {
                        label,
                        at_value: Some(v),
                        value,
                        gradient,
                        extrapolated: v < lo || v > hi,
                    })
                })
                .collect()
        }
    }
}

/// The sample-means row: factor indicators at their shares, continuous
/// variables at their means, squares recomputed from the mean.
pub fn means_row<F: Scalar>(x: &Matrix<F>, map: &TermMap) -> Vec<F> {
    let n = F::of_usize(x.nrows().max(1));
    let mut row: Vec<F> = (0..x.ncols()).map(|j| pairwise_sum(&x.column(j)) / n).collect();
    for (j, c) in map.columns.iter().enumerate() {
        match (&c.transform, &c.source) {
            (Transform::Intercept, _) => row[j] = F::one(),
            (Transform::Square, Some(v)) => {
                let b = map.identity_column(v).expect("square has a base");
                row[j] = row[b] * row[b];
            }
            _ => {}
        }
    }
    row
}

fn check_fit<F: Scalar>(fr: &FitResult<F>, x: &Matrix<F>) -> Result<()> {
    if !fr.converged {
        return Err(MarginError::NotConverged);
    }
    if x.ncols() != fr.k {
        return Err(MarginError::Width {
            got: x.ncols(),
            expected: fr.k,
        });
    }
    Ok(())
}

fn finish<F: Scalar>(ests: Vec<Estimate<F>>, cov: &Matrix<F>, z_crit: F) -> Vec<MarginRow<F>> {
    ests.into_iter()
        .map(|e| {
            let var = cov.quad_form(&e.gradient).max(F::zero());
            MarginRow::from_se(e.label, e.at_value, e.value, var.sqrt(), z_crit, e.extrapolated)
        })
        .collect()
}

/// Evaluates any request with delta-method inference.
pub fn compute<F: Scalar>(fr: &FitResult<F>, x: &Matrix<F>, req: &MarginRequest<F>) -> Result<Vec<MarginRow<F>>> {
    check_fit(fr, x)?;
    let z = z_critical(req.ci_level)?;
    let ests = match req.kind {
        MarginKind::Apm | MarginKind::Mem => {
            let row = means_row(x, &fr.term_map);
            let m = Matrix::from_row_major(1, row.len(), row);
            estimates_with_range(&fr.beta, &m, x, &fr.term_map, req)?
        }
        _ => estimates(&fr.beta, x, &fr.term_map, req)?,
    };
    Ok(finish(ests, &fr.cov, z))
}

/// Average adjusted prediction with `var` set to `level` in every row.
pub fn aap_factor<F: Scalar>(fr: &FitResult<F>, x: &Matrix<F>, var: &str, level: &str) -> Result<MarginRow<F>> {
    let req = MarginRequest::new(MarginKind::Aap, var).levels(vec![level.to_string()]);
    Ok(compute(fr, x, &req)?.remove(0))
}

/// `aap(level) − aap(base)` with the gradient difference for its SE.
pub fn ame_factor<F: Scalar>(
    fr: &FitResult<F>,
    x: &Matrix<F>,
    var: &str,
    level: &str,
    base: &str,
) -> Result<MarginRow<F>> {
    check_fit(fr, x)?;
    let z = z_critical(F::of(0.95))?;
    let map = &fr.term_map;
    let eng = Engine { beta: &fr.beta, x, map };
    factor_levels(map, var, &Some(vec![level.to_string(), base.to_string()]))?;
    let (a, ga) = eng.prediction(&map.plan(var, &Value::Level(level.to_string()))?);
    let (b, gb) = eng.prediction(&map.plan(var, &Value::Level(base.to_string()))?);
    let g: Vec<F> = ga.iter().zip(&gb).map(|(u, v)| *u - *v).collect();
    let est = Estimate {
        label: format!("{var}={level} vs {base}"),
        at_value: None,
        value: a - b,
        gradient: g,
        extrapolated: false,
    };
    Ok(finish(vec![est], &fr.cov, z).remove(0))
}

pub fn aap_continuous_at<F: Scalar>(
    fr: &FitResult<F>,
    x: &Matrix<F>,
    var: &str,
    grid: &[F],
) -> Result<Vec<MarginRow<F>>> {
    let req = MarginRequest::new(MarginKind::Aap, var).at(var, Grid::Values(grid.to_vec()));
    compute(fr, x, &req)
}

pub fn ame_continuous_at<F: Scalar>(
    fr: &FitResult<F>,
    x: &Matrix<F>,
    var: &str,
    grid: Grid<F>,
) -> Result<Vec<MarginRow<F>>> {
    let req = MarginRequest::new(MarginKind::Ame, var).at(var, grid);
    compute(fr, x, &req)
}

/// Adjusted predictions for each `(level, v)` pair, level-major.
pub fn aprv<F: Scalar>(
    fr: &FitResult<F>,
    x: &Matrix<F>,
    factor: &str,
    levels: &[String],
    cont: &str,
    grid: &[F],
) -> Result<Vec<MarginRow<F>>> {
    let req = MarginRequest::new(MarginKind::Aprv, factor)
        .levels(levels.to_vec())
        .at(cont, Grid::Values(grid.to_vec()));
    compute(fr, x, &req)
}

/// `aprv(level) − aprv(base)` at each grid value.
pub fn merv<F: Scalar>(
    fr: &FitResult<F>,
    x: &Matrix<F>,
    factor: &str,
    level: &str,
    base: &str,
    cont: &str,
    grid: &[F],
) -> Result<Vec<MarginRow<F>>> {
    let req = MarginRequest::new(MarginKind::Merv, factor)
        .levels(vec![level.to_string()])
        .base(base)
        .at(cont, Grid::Values(grid.to_vec()));
    let rows = if level == base {
        let zc = z_critical(req.ci_level)?;
        grid.iter()
            .map(|&v| MarginRow::from_se(format!("{factor}={level} vs {base}"), Some(v), F::zero(), F::zero(), zc, false))
            .collect()
    } else {
        compute(fr, x, &req)?
    };
    Ok(rows)
}

/// Adjusted predictions / marginal effects at the means: the request is
/// evaluated on the single sample-means row instead of averaging.
pub fn apm_mem<F: Scalar>(fr: &FitResult<F>, x: &Matrix<F>, req: &MarginRequest<F>) -> Result<Vec<MarginRow<F>>> {
    let mut req = req.clone();
    req.kind = match req.kind {
        MarginKind::Aap | MarginKind::Apm => MarginKind::Apm,
        MarginKind::Ame | MarginKind::Mem => MarginKind::Mem,
        other => {
            return Err(MarginError::Request(format!("{other:?} has no at-means form")));
        }
    };
    compute(fr, x, &req)
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapOptions<F> {
    pub reps: usize,
    pub seed: u64,
    pub fit: FitOptions<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult<F> {
    /// Standard deviation across replicates, one per margin row.
    pub se: Vec<F>,
    pub reps: usize,
    pub failures: usize,
}

/// Nonparametric bootstrap of a margin request: resample rows with
/// replacement, refit, recompute. Replicate `r` draws from the stream
/// seeded with the `r`-th SplitMix64 output of `seed`, so results do not
/// depend on scheduling.
pub fn bootstrap_se<F: Scalar>(
    design: &DesignMatrix<F>,
    map: &TermMap,
    req: &MarginRequest<F>,
    opts: &BootstrapOptions<F>,
) -> Result<BootstrapResult<F>> {
    if opts.reps < 100 {
        return Err(MarginError::TooFewReplicates(opts.reps));
    }
    let n = design.n();
    let seeds = child_seeds(opts.seed, opts.reps);
    let draws: Vec<Option<Vec<F>>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = Stream::new(s);
            let idx: Vec<usize> = (0..n).map(|_| rng.below(n as u64) as usize).collect();
            let sample = design.select_rows(&idx);
            let fr = logit::fit_design(&sample, map, &opts.fit).ok()?;
            let rows = compute(&fr, &sample.x, req).ok()?;
            Some(rows.into_iter().map(|r| r.estimate).collect())
        })
        .collect();
    let failures = draws.iter().filter(|d| d.is_none()).count();
    if failures * 10 > opts.reps {
        return Err(MarginError::TooManyFailures {
            failed: failures,
            reps: opts.reps,
        });
    }
    let ok: Vec<Vec<F>> = draws.into_iter().flatten().collect();
    let m = ok[0].len();
    let cnt = F::of_usize(ok.len());
    let se = (0..m)
        .map(|j| {
            let vals: Vec<F> = ok.iter().map(|r| r[j]).collect();
            let mean = pairwise_sum(&vals) / cnt;
            let sq: Vec<F> = vals.iter().map(|v| (*v - mean) * (*v - mean)).collect();
            (pairwise_sum(&sq) / (cnt - F::one())).sqrt()
        })
        .collect();
    Ok(BootstrapResult {
        se,
        reps: opts.reps,
        failures,
    })
}

/// Writes margin rows as TSV: label, at, estimate, std_err, z, p, ci_low,
/// ci_high, with 17 significant digits.
pub fn write_tsv<F: Scalar, W: Write>(rows: &[MarginRow<F>], mut w: W) -> std::io::Result<()> {
    writeln!(w, "label\tat\testimate\tstd_err\tz\tp\tci_low\tci_high")?;
    for r in rows {
        let at = r.at_value.map(|v| fmt_sig17(v.f64())).unwrap_or_default();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.label,
            at,
            fmt_sig17(r.estimate.f64()),
            fmt_sig17(r.se.f64()),
            fmt_sig17(r.z.f64()),
            fmt_sig17(r.p.f64()),
            fmt_sig17(r.ci_low.f64()),
            fmt_sig17(r.ci_high.f64()),
        )?;
    }
    Ok(())
}
