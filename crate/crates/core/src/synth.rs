//! Synthetic publication corpora.
//!
//! Covariates are drawn independently from their marginals; the outcome is
//! Bernoulli with success probability `logistic(x·β)` where `β` is keyed by
//! design-column name (`_cons`, `univ=univ3`, `jif`, `jif^2`, ...).
//!
//! Draws happen row by row from a single [`Stream`]: each factor in
//! declaration order, then each continuous variable, then the outcome.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Column, Dataset, DatasetError};
use crate::formula::{build_design, parse_formula, DesignOptions, FormulaError};
use crate::logit::{fit_design, fit_stats, FitError, FitOptions};
use crate::rng::Stream;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cannot generate an empty dataset (n = 0)")]
    Empty,
    #[error("probabilities for `{0}` must be finite, non-negative and sum to 1")]
    Probabilities(String),
    #[error("non-finite or invalid parameter for `{0}`")]
    Parameter(String),
    #[error("coefficient `{0}` does not match any configured variable or level")]
    UnknownCoefficient(String),
    #[error("coefficient file: {0}")]
    Coefficients(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub levels: Vec<String>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Log-normal matched to the given mean and standard deviation.
    LogNormal { mean: f64, sd: f64 },
    /// Integers `lo..=hi` with equal probability.
    UniformInt { lo: i64, hi: i64 },
}

/// Makes a log-normal mean depend on the level of a factor, keeping the
/// coefficient of variation fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanByLevel {
    pub factor: String,
    pub means: BTreeMap<String, f64>,
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSpec {
    pub name: String,
    #[serde(flatten)]
    pub family: Family,
    pub clamp: (f64, f64),
    #[serde(default)]
    pub round: bool,
    #[serde(default)]
    pub by_level: Option<MeanByLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub response: String,
    pub formula: String,
    pub factors: Vec<FactorSpec>,
    pub continuous: Vec<ContinuousSpec>,
    pub true_beta: BTreeMap<String, f64>,
}

/// Formula plus coefficients, as stored in `table2_model3.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub formula: String,
    pub coefficients: BTreeMap<String, f64>,
}

pub const TABLE2_MODEL3_JSON: &str = include_str!("../data/table2_model3.json");

impl Coefficients {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SynthError::Coefficients(e.to_string()))
    }

    pub fn table2_model3() -> Self {
        Self::from_json(TABLE2_MODEL3_JSON).expect("bundled coefficients parse")
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl SynthConfig {
    /// Publication-corpus marginals with the bundled Model 3 outcome
    /// coefficients.
    /// Document-type shares are listed as 82.9/4.3/9.7/3.2 and sum to
    /// 100.1%, so they are rescaled to 1.
    pub fn table1_model3(n: usize, seed: u64) -> Self {
        let doctype = [82.9, 4.3, 9.7, 3.2];
        let total: f64 = doctype.iter().sum();
        let coefs = Coefficients::table2_model3();
        Self {
            n,
            seed,
            response: "top10".into(),
            formula: coefs.formula,
            factors: vec![
                FactorSpec {
                    name: "univ".into(),
                    levels: strings(&["univ1", "univ2", "univ3", "univ4"]),
                    probs: vec![0.074, 0.033, 0.554, 0.339],
                },
                FactorSpec {
                    name: "subject".into(),
                    levels: strings(&["engtech", "medhealth", "natsci"]),
                    probs: vec![0.114, 0.107, 0.779],
                },
                FactorSpec {
                    name: "doctype".into(),
                    levels: strings(&["article", "note", "proceedings", "review"]),
                    probs: doctype.iter().map(|p| p / total).collect(),
                },
            ],
            continuous: vec![
                ContinuousSpec {
                    name: "jif".into(),
                    family: Family::LogNormal { mean: 4.5, sd: 5.8 },
                    clamp: (0.4, 54.3),
                    round: false,
                    by_level: None,
                },
                ContinuousSpec {
                    name: "years".into(),
                    family: Family::UniformInt { lo: 1, hi: 31 },
                    clamp: (1.0, 31.0),
                    round: true,
                    by_level: None,
                },
                ContinuousSpec {
                    name: "authors".into(),
                    family: Family::LogNormal { mean: 4.2, sd: 2.4 },
                    clamp: (1.0, 23.0),
                    round: true,
                    by_level: None,
                },
                ContinuousSpec {
                    name: "pages".into(),
                    family: Family::LogNormal { mean: 7.7, sd: 6.1 },
                    clamp: (1.0, 160.0),
                    round: true,
                    by_level: None,
                },
            ],
            true_beta: coefs.coefficients,
        }
    }

    /// Shifts the JIF mean by university (univ1 8.4, univ3 3.2, the others
    /// in between) at the coefficient of variation that keeps the overall
    /// standard deviation near 5.8.
    pub fn with_jif_shift(mut self) -> Self {
        let means: BTreeMap<String, f64> = [("univ1", 8.4), ("univ2", 5.65), ("univ3", 3.2), ("univ4", 5.65)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        if let Some(c) = self.continuous.iter_mut().find(|c| c.name == "jif") {
            c.by_level = Some(MeanByLevel {
                factor: "univ".into(),
                means,
                cv: 1.1685,
            });
        }
        self
    }

    pub fn with_coefficients(mut self, coefs: Coefficients) -> Self {
        self.formula = coefs.formula;
        self.true_beta = coefs.coefficients;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SynthError::Empty);
        }
        for f in &self.factors {
            let ok = !f.levels.is_empty()
                && f.levels.len() == f.probs.len()
                && f.probs.iter().all(|p| p.is_finite() && *p >= 0.0)
                && (f.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
            if !ok {
                return Err(SynthError::Probabilities(f.name.clone()));
            }
        }
        for c in &self.continuous {
            let bad = || SynthError::Parameter(c.name.clone());
            let (lo, hi) = c.clamp;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(bad());
            }
            match c.family {
                Family::LogNormal { mean, sd } => {
                    if !(mean.is_finite() && sd.is_finite() && mean > 0.0 && sd >= 0.0) {
                        return Err(bad());
                    }
                }
                Family::UniformInt { lo, hi } => {
                    if lo > hi {
                        return Err(bad());
                    }
                }
            }
            if let Some(b) = &c.by_level {
                let f = self.factors.iter().find(|f| f.name == b.factor).ok_or_else(bad)?;
                let complete = f.levels.iter().all(|l| b.means.get(l).is_some_and(|m| m.is_finite() && *m > 0.0));
                if !complete || !(b.cv.is_finite() && b.cv >= 0.0) {
                    return Err(bad());
                }
            }
        }
        for (name, b) in &self.true_beta {
            if !b.is_finite() {
                return Err(SynthError::Parameter(name.clone()));
            }
            self.locate(name)?;
        }
        Ok(())
    }

    fn locate(&self, name: &str) -> Result<Slot> {
        if name == "_cons" {
            return Ok(Slot::Intercept);
        }
        if let Some((var, level)) = name.split_once('=') {
            if let Some((i, f)) = self.factors.iter().enumerate().find(|(_, f)| f.name == var) {
                if let Some(l) = f.levels.iter().position(|x| x == level) {
                    return Ok(Slot::Level(i, l as u32));
                }
            }
        } else {
            let (base, square) = match name.strip_suffix("^2") {
                Some(b) => (b, true),
                None => (name, false),
            };
            if let Some(j) = self.continuous.iter().position(|c| c.name == base) {
                return Ok(if square { Slot::Square(j) } else { Slot::Linear(j) });
            }
        }
        Err(SynthError::UnknownCoefficient(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Intercept,
    Level(usize, u32),
    Linear(usize),
    Square(usize),
}

/// `(μ, σ)` of the log-normal with the given mean and sd.
pub fn lognormal_params(mean: f64, sd: f64) -> (f64, f64) {
    let s2 = (1.0 + (sd * sd) / (mean * mean)).ln();
    (mean.ln() - s2 / 2.0, s2.sqrt())
}

fn draw_categorical(rng: &mut Stream, probs: &[f64]) -> u32 {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    // rounding left a sliver above the last cumulative value
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0) as u32
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let slots: Vec<(Slot, f64)> = cfg
        .true_beta
        .iter()
        .map(|(k, b)| Ok((cfg.locate(k)?, *b)))
        .collect::<Result<_>>()?;
    let params: Vec<Option<(f64, f64)>> = cfg
        .continuous
        .iter()
        .map(|c| match c.family {
            Family::LogNormal { mean, sd } => Some(lognormal_params(mean, sd)),
            Family::UniformInt { .. } => None,
        })
        .collect();

    let mut rng = Stream::new(cfg.seed);
    let mut codes = vec![Vec::with_capacity(cfg.n); cfg.factors.len()];
    let mut values = vec![Vec::with_capacity(cfg.n); cfg.continuous.len()];
    let mut y = Vec::with_capacity(cfg.n);
    let mut fc = vec![0u32; cfg.factors.len()];
    let mut cv = vec![0.0; cfg.continuous.len()];
    for _ in 0..cfg.n {
        for (i, f) in cfg.factors.iter().enumerate() {
            fc[i] = draw_categorical(&mut rng, &f.probs);
            codes[i].push(fc[i]);
        }
        for (j, c) in cfg.continuous.iter().enumerate() {
            let raw = match (&c.family, &c.by_level) {
                (Family::UniformInt { lo, hi }, _) => (*lo + rng.below((hi - lo + 1) as u64) as i64) as f64,
                (Family::LogNormal { .. }, Some(b)) => {
                    let fi = cfg.factors.iter().position(|f| f.name == b.factor).expect("validated");
                    let level = &cfg.factors[fi].levels[fc[fi] as usize];
                    let m = b.means[level];
                    let (mu, s) = lognormal_params(m, b.cv * m);
                    (mu + s * rng.standard_normal()).exp()
                }
                (Family::LogNormal { .. }, None) => {
                    let (mu, s) = params[j].expect("log-normal");
                    (mu + s * rng.standard_normal()).exp()
                }
            };
            let v = if c.round { raw.round() } else { raw };
            cv[j] = v.clamp(c.clamp.0, c.clamp.1);
            values[j].push(cv[j]);
        }
        let eta: f64 = slots
            .iter()
            .map(|(s, b)| match *s {
                Slot::Intercept => *b,
                Slot::Level(i, l) => {
                    if fc[i] == l {
                        *b
                    } else {
                        0.0
                    }
                }
                Slot::Linear(j) => b * cv[j],
                Slot::Square(j) => b * cv[j] * cv[j],
            })
            .sum();
        y.push(rng.bernoulli(eta.logistic()) as u8);
    }

    let mut columns = Vec::new();
    for (f, c) in cfg.factors.iter().zip(codes) {
        columns.push(Column::categorical(f.name.clone(), f.levels.clone(), c));
    }
    for (c, v) in cfg.continuous.iter().zip(values) {
        columns.push(Column::continuous(c.name.clone(), v));
    }
    columns.push(Column::binary(cfg.response.clone(), y));
    Ok(Dataset::new("synthetic", columns)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRow {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub se: f64,
    /// `(estimate − truth) / se`
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
    pub max_abs_z: f64,
    /// Some coefficient lies more than 3 standard errors from its truth.
    pub flagged: bool,
    pub pseudo_r2: f64,
    pub lr_chi2: f64,
    pub df: usize,
    pub mean_y: f64,
}

/// Generates a corpus, fits the configured formula and compares each
/// coefficient with its true value. Coefficients absent from `true_beta`
/// are taken as zero.
pub fn recover(cfg: &SynthConfig, opts: &FitOptions<f64>) -> Result<RecoveryReport> {
    let ds = generate(cfg)?;
    let spec = parse_formula(&cfg.formula)?;
    let (design, map) = build_design::<f64>(&ds, &spec, &DesignOptions::default())?;
    let fr = fit_design(&design, &map, opts)?;
    let st = fit_stats(&fr)?;
    let rows: Vec<RecoveryRow> = st
        .coefficients
        .iter()
        .map(|c| {
            let truth = cfg.true_beta.get(&c.name).copied().unwrap_or(0.0);
            RecoveryRow {
                name: c.name.clone(),
                truth,
                estimate: c.estimate,
                se: c.se,
                z: (c.estimate - truth) / c.se,
            }
        })
        .collect();
    let max_abs_z = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    Ok(RecoveryReport {
        max_abs_z,
        flagged: max_abs_z > 3.0,
        pseudo_r2: st.pseudo_r2,
        lr_chi2: st.lr_chi2,
        df: st.df,
        mean_y: design.y.iter().sum::<f64>() / design.n() as f64,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(generate(&SynthConfig::table1_model3(0, 1)), Err(SynthError::Empty)));
    }

    #[test]
    fn bad_probabilities() {
        let mut cfg = SynthConfig::table1_model3(10, 1);
        cfg.factors[0].probs[0] = 0.5;
        assert!(matches!(generate(&cfg), Err(SynthError::Probabilities(_))));
        let mut cfg = SynthConfig::table1_model3(10, 1);
        cfg.continuous[0].family = Family::LogNormal { mean: f64::NAN, sd: 1.0 };
        assert!(matches!(generate(&cfg), Err(SynthError::Parameter(_))));
        let mut cfg = SynthConfig::table1_model3(10, 1);
        cfg.true_beta.insert("univ=univ9".into(), 1.0);
        assert!(matches!(generate(&cfg), Err(SynthError::UnknownCoefficient(_))));
    }

    #[test]
    fn lognormal_moments() {
        let (mu, s) = lognormal_params(4.5, 5.8);
        let mean = (mu + s * s / 2.0).exp();
        let var = ((s * s).exp() - 1.0) * (2.0 * mu + s * s).exp();
        assert!((mean - 4.5).abs() < 1e-12);
        assert!((var.sqrt() - 5.8).abs() < 1e-12);
    }

    #[test]
    fn bundled_coefficients() {
        let c = Coefficients::table2_model3();
        assert_eq!(c.coefficients.len(), 15);
        assert_eq!(c.coefficients["_cons"], -3.961);
        assert_eq!(c.coefficients["pages^2"], -0.000519);
        let spec = parse_formula(&c.formula).unwrap();
        assert_eq!(spec.response, "top10");
    }

    #[test]
    fn deterministic_and_clamped() {
        let cfg = SynthConfig::table1_model3(500, 9);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        a.write_csv(&mut wa).unwrap();
        b.write_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
        for c in &cfg.continuous {
            let v = a.column(&c.name).unwrap().numeric().unwrap();
            assert!(v.iter().all(|x| *x >= c.clamp.0 && *x <= c.clamp.1));
            if c.round {
                assert!(v.iter().all(|x| x.fract() == 0.0));
            }
        }
    }
}
