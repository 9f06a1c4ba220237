//! Model formulas, design matrices and the map from raw variables to
//! design columns.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! formula := ident "~" term ("+" term)*
//! term    := "C(" ident ")" | ident | ident "^2"
//! ident   := [A-Za-z_][A-Za-z0-9_.]*
//! ```
//!
//! `C(x)` dummy-codes a categorical variable against a reference level,
//! `x` enters a numeric variable as is and `x^2` adds its square. A squared
//! term needs its base term in the same formula, and the two stay linked:
//! [`TermMap::substitute`] always rewrites both columns together.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnData, Dataset};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum FormulaError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("squared term `{0}^2` requires the base term `{0}`")]
    SquareWithoutBase(String),
    #[error("duplicate term `{0}`")]
    DuplicateTerm(String),
    #[error("response `{0}` cannot also be a predictor")]
    ResponseAsPredictor(String),
    #[error("unsupported exponent {exponent} at position {pos}; only ^2 is supported")]
    UnsupportedExponent { pos: usize, exponent: String },
    #[error("variable `{0}` is used both as a factor and as a numeric term")]
    MixedUse(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("continuous variable `{0}` cannot be used inside C()")]
    ContinuousFactor(String),
    #[error("categorical variable `{0}` must be wrapped in C()")]
    CategoricalNumeric(String),
    #[error("response `{0}` must be a binary 0/1 column")]
    NonBinaryResponse(String),
    #[error("factor `{0}` has fewer than two observed levels")]
    SingleLevel(String),
    #[error("variable `{variable}` has no level `{level}`")]
    UnknownLevel { variable: String, level: String },
    #[error("variable `{0}` is not in the model")]
    NotInModel(String),
    #[error("value for `{0}` must be finite")]
    NonFinite(String),
    #[error("variable `{0}` is a factor; a level is required")]
    ExpectedLevel(String),
    #[error("variable `{0}` is continuous; a real value is required")]
    ExpectedReal(String),
    #[error("design row has width {got}, expected {expected}")]
    RowWidth { got: usize, expected: usize },
}

impl FormulaError {
    /// Renders a syntax error as the formula text with a caret under the
    /// offending character.
    pub fn caret(&self, text: &str) -> Option<String> {
        let pos = match self {
            FormulaError::Syntax { pos, .. } | FormulaError::UnsupportedExponent { pos, .. } => *pos,
            _ => return None,
        };
        Some(format!("{text}\n{}^\n{self}", " ".repeat(pos)))
    }
}

pub type Result<T> = std::result::Result<T, FormulaError>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Factor(String),
    Linear(String),
    Square(String),
}

impl Term {
    pub fn variable(&self) -> &str {
        match self {
            Term::Factor(v) | Term::Linear(v) | Term::Square(v) => v,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Factor(v) => write!(f, "C({v})"),
            Term::Linear(v) => write!(f, "{v}"),
            Term::Square(v) => write!(f, "{v}^2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub terms: Vec<Term>,
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl ModelSpec {
    /// Checks the structural invariants of a formula.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for t in &self.terms {
            if t.variable() == self.response {
                return Err(FormulaError::ResponseAsPredictor(self.response.clone()));
            }
            if seen.insert(t.clone(), ()).is_some() {
                return Err(FormulaError::DuplicateTerm(t.to_string()));
            }
        }
        for t in &self.terms {
            match t {
                Term::Square(v) if !seen.contains_key(&Term::Linear(v.clone())) => {
                    return Err(FormulaError::SquareWithoutBase(v.clone()));
                }
                Term::Factor(v)
                    if seen.contains_key(&Term::Linear(v.clone()))
                        || seen.contains_key(&Term::Square(v.clone())) =>
                {
                    return Err(FormulaError::MixedUse(v.clone()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.terms {
            if !out.contains(&t.variable()) {
                out.push(t.variable());
            }
        }
        out
    }
}

struct Lexer<'a> {
    chars: Vec<(usize, char)>,
    i: usize,
    text: &'a str,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.chars().enumerate().collect(),
            i: 0,
            text,
        }
    }

    fn skip_ws(&mut self) {
        while self.i < self.chars.len() && self.chars[self.i].1.is_whitespace() {
            self.i += 1;
        }
    }

    fn pos(&self) -> usize {
        self.chars.get(self.i).map_or(self.chars.len(), |c| c.0)
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.i).map(|c| c.1)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(FormulaError::Syntax {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.peek() {
            Some(x) if x == c => {
                self.i += 1;
                Ok(())
            }
            Some(x) => self.err(format!("expected `{c}`, found `{x}`")),
            None => self.err(format!("expected `{c}`, found end of input")),
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
            Some(c) => return self.err(format!("expected a variable name, found `{c}`")),
            None => return self.err("expected a variable name, found end of input"),
        }
        let start = self.i;
        while self.i < self.chars.len() {
            let c = self.chars[self.i].1;
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                self.i += 1;
            } else {
                break;
            }
        }
        Ok(self.chars[start..self.i].iter().map(|c| c.1).collect())
    }

    fn term(&mut self) -> Result<Term> {
        let name = self.ident()?;
        if name == "C" && self.peek() == Some('(') {
            self.i += 1;
            let inner = self.ident()?;
            self.expect(')')?;
            return Ok(Term::Factor(inner));
        }
        if self.peek() == Some('^') {
            self.i += 1;
            self.skip_ws();
            let pos = self.pos();
            let start = self.i;
            while self.i < self.chars.len()
                && (self.chars[self.i].1.is_ascii_digit() || self.chars[self.i].1 == '.')
            {
                self.i += 1;
            }
            let exponent: String = self.chars[start..self.i].iter().map(|c| c.1).collect();
            if exponent.is_empty() {
                return self.err("expected an exponent after `^`");
            }
            if exponent != "2" {
                return Err(FormulaError::UnsupportedExponent { pos, exponent });
            }
            return Ok(Term::Square(name));
        }
        Ok(Term::Linear(name))
    }
}

/// Parses and validates a model formula.
pub fn parse_formula(text: &str) -> Result<ModelSpec> {
    let mut lx = Lexer::new(text);
    let response = lx.ident()?;
    lx.expect('~')?;
    let mut terms = vec![lx.term()?];
    loop {
        match lx.peek() {
            None => break,
            Some('+') => {
                lx.i += 1;
                terms.push(lx.term()?);
            }
            Some(c) => return lx.err(format!("expected `+` or end of formula, found `{c}`")),
        }
    }
    debug_assert_eq!(lx.text, text);
    let spec = ModelSpec { response, terms };
    spec.validate()?;
    Ok(spec)
}

/// How a design column is computed from its source variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Intercept,
    Indicator(String),
    Identity,
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub name: String,
    /// Source variable; `None` only for the intercept.
    pub source: Option<String>,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCoding {
    pub variable: String,
    /// All coded levels, in order; the reference is among them.
    pub levels: Vec<String>,
    pub reference: String,
}

/// Design column index -> (source variable, transform), plus the level
/// coding of every factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermMap {
    pub response: String,
    pub columns: Vec<DesignColumn>,
    pub factors: Vec<FactorCoding>,
}

/// A value to substitute for a variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Value<F> {
    Level(String),
    Real(F),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<F> {
    pub x: Matrix<F>,
    /// 0/1 response.
    pub y: Vec<F>,
}

impl<F: Scalar> DesignMatrix<F> {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Options for [`build_design`].
#[derive(Debug, Clone, Default)]
pub struct DesignOptions {
    /// Reference level per factor; the first observed level otherwise.
    pub references: HashMap<String, String>,
}

impl DesignOptions {
    pub fn with_reference(mut self, var: impl Into<String>, level: impl Into<String>) -> Self {
        self.references.insert(var.into(), level.into());
        self
    }
}

impl TermMap {
    /// Term map for an intercept plus one identity column per name.
    pub fn linear(response: &str, names: &[&str]) -> Self {
        let mut columns = vec![DesignColumn {
            name: "_cons".into(),
            source: None,
            transform: Transform::Intercept,
        }];
        for n in names {
            columns.push(DesignColumn {
                name: (*n).to_string(),
                source: Some((*n).to_string()),
                transform: Transform::Identity,
            });
        }
        Self {
            response: response.to_string(),
            columns,
            factors: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Design columns sourced from `var`.
    pub fn columns_of(&self, var: &str) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.source.as_deref() == Some(var))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn factor(&self, var: &str) -> Option<&FactorCoding> {
        self.factors.iter().find(|f| f.variable == var)
    }

    pub fn is_factor(&self, var: &str) -> bool {
        self.factor(var).is_some()
    }

    pub fn is_continuous(&self, var: &str) -> bool {
        !self.is_factor(var) && !self.columns_of(var).is_empty()
    }

    pub fn identity_column(&self, var: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.source.as_deref() == Some(var) && c.transform == Transform::Identity)
    }

    pub fn square_column(&self, var: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.source.as_deref() == Some(var) && c.transform == Transform::Square)
    }

    /// Continuous variables in column order.
    pub fn continuous_variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.columns {
            if let (Some(v), Transform::Identity) = (&c.source, &c.transform) {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
        }
        out
    }

    fn check_value<F: Scalar>(&self, var: &str, value: &Value<F>) -> Result<()> {
        if self.columns_of(var).is_empty() {
            return Err(FormulaError::NotInModel(var.to_string()));
        }
        match (self.factor(var), value) {
            (Some(f), Value::Level(l)) => {
                if !f.levels.iter().any(|x| x == l) {
                    return Err(FormulaError::UnknownLevel {
                        variable: var.to_string(),
                        level: l.clone(),
                    });
                }
            }
            (Some(_), Value::Real(_)) => return Err(FormulaError::ExpectedLevel(var.to_string())),
            (None, Value::Real(v)) => {
                if !v.is_finite() {
                    return Err(FormulaError::NonFinite(var.to_string()));
                }
            }
            (None, Value::Level(_)) => return Err(FormulaError::ExpectedReal(var.to_string())),
        }
        Ok(())
    }

    /// Copy of `row` with every column sourced from `var` rewritten for
    /// `value`: indicators for the new level, identity = v, square = v².
    /// Columns from other variables are left untouched.
    pub fn substitute<F: Scalar>(&self, row: &[F], var: &str, value: &Value<F>) -> Result<Vec<F>> {
        if row.len() != self.k() {
            return Err(FormulaError::RowWidth {
                got: row.len(),
                expected: self.k(),
            });
        }
        self.check_value(var, value)?;
        let mut out = row.to_vec();
        self.apply_unchecked(&mut out, var, value);
        Ok(out)
    }

    /// Compiles a substitution into column writes, validating it once.
    pub fn plan<F: Scalar>(&self, var: &str, value: &Value<F>) -> Result<Substitution<F>> {
        self.check_value(var, value)?;
        let mut writes = Vec::new();
        for j in self.columns_of(var) {
            let v = match (&self.columns[j].transform, value) {
                (Transform::Indicator(l), Value::Level(x)) => {
                    if l == x {
                        F::one()
                    } else {
                        F::zero()
                    }
                }
                (Transform::Identity, Value::Real(v)) => *v,
                (Transform::Square, Value::Real(v)) => *v * *v,
                _ => unreachable!("checked by check_value"),
            };
            writes.push((j, v));
        }
        Ok(Substitution { writes })
    }

    fn apply_unchecked<F: Scalar>(&self, row: &mut [F], var: &str, value: &Value<F>) {
        let plan = self.plan(var, value).expect("validated substitution");
        plan.apply(row);
    }

    /// True when every square column equals the square of its base column.
    pub fn is_coherent<F: Scalar>(&self, row: &[F]) -> bool {
        self.columns.iter().enumerate().all(|(j, c)| match (&c.transform, &c.source) {
            (Transform::Square, Some(v)) => {
                let b = self.identity_column(v).expect("square has a base");
                let want = row[b] * row[b];
                (row[j] - want).abs() <= F::of(1e-12) * F::one().max(want.abs())
            }
            (Transform::Intercept, _) => row[j] == F::one(),
            _ => true,
        })
    }

    /// Encodes a dataset with this map's coding. Factor levels must be
    /// among the coded levels.
    pub fn encode<F: Scalar>(&self, ds: &Dataset) -> Result<DesignMatrix<F>> {
        let n = ds.n_rows();
        let k = self.k();
        let mut x = Matrix::zeros(n, k);
        for (j, col) in self.columns.iter().enumerate() {
            match (&col.transform, &col.source) {
                (Transform::Intercept, _) => {
                    for i in 0..n {
                        x[(i, j)] = F::one();
                    }
                }
                (Transform::Indicator(level), Some(var)) => {
                    let (levels, codes) = categorical(ds, var)?;
                    let target = levels.iter().position(|l| l == level);
                    let coding = self.factor(var).expect("indicator belongs to a factor");
                    if let Some(bad) = levels
                        .iter()
                        .enumerate()
                        .find(|(li, l)| codes.contains(&(*li as u32)) && !coding.levels.contains(l))
                    {
                        return Err(FormulaError::UnknownLevel {
                            variable: var.clone(),
                            level: bad.1.clone(),
                        });
                    }
                    for i in 0..n {
                        if Some(codes[i] as usize) == target {
                            x[(i, j)] = F::one();
                        }
                    }
                }
                (Transform::Identity | Transform::Square, Some(var)) => {
                    let vals = numeric(ds, var)?;
                    let sq = col.transform == Transform::Square;
                    for i in 0..n {
                        let v = F::of(vals[i]);
                        x[(i, j)] = if sq { v * v } else { v };
                    }
                }
                _ => unreachable!("non-intercept columns have a source"),
            }
        }
        let y = match &ds
            .column(&self.response)
            .ok_or_else(|| FormulaError::UnknownVariable(self.response.clone()))?
            .data
        {
            ColumnData::Binary(v) => v.iter().map(|&b| F::of(b as f64)).collect(),
            _ => return Err(FormulaError::NonBinaryResponse(self.response.clone())),
        };
        Ok(DesignMatrix { x, y })
    }
}

/// Precompiled column writes for one substitution.
#[derive(Debug, Clone)]
pub struct Substitution<F> {
    writes: Vec<(usize, F)>,
}

impl<F: Scalar> Substitution<F> {
    #[inline]
    pub fn apply(&self, row: &mut [F]) {
        for &(j, v) in &self.writes {
            row[j] = v;
        }
    }

    pub fn then(mut self, other: &Substitution<F>) -> Self {
        self.writes.extend_from_slice(&other.writes);
        self
    }

    pub fn identity() -> Self {
        Self { writes: Vec::new() }
    }
}

fn categorical<'a>(ds: &'a Dataset, var: &str) -> Result<(&'a [String], &'a [u32])> {
    match &ds
        .column(var)
        .ok_or_else(|| FormulaError::UnknownVariable(var.to_string()))?
        .data
    {
        ColumnData::Categorical { levels, codes } => Ok((levels, codes)),
        _ => Err(FormulaError::ContinuousFactor(var.to_string())),
    }
}

fn numeric(ds: &Dataset, var: &str) -> Result<Vec<f64>> {
    let col = ds
        .column(var)
        .ok_or_else(|| FormulaError::UnknownVariable(var.to_string()))?;
    col.numeric()
        .ok_or_else(|| FormulaError::CategoricalNumeric(var.to_string()))
}

/// Builds the design matrix for `spec` on `ds` together with its term map.
pub fn build_design<F: Scalar>(
    ds: &Dataset,
    spec: &ModelSpec,
    opts: &DesignOptions,
) -> Result<(DesignMatrix<F>, TermMap)> {
    let map = term_map(ds, spec, opts)?;
    let design = map.encode(ds)?;
    Ok((design, map))
}

/// Derives the column layout and factor coding of `spec` on `ds`.
pub fn term_map(ds: &Dataset, spec: &ModelSpec, opts: &DesignOptions) -> Result<TermMap> {
    spec.validate()?;
    match &ds
        .column(&spec.response)
        .ok_or_else(|| FormulaError::UnknownVariable(spec.response.clone()))?
        .data
    {
        ColumnData::Binary(_) => {}
        _ => return Err(FormulaError::NonBinaryResponse(spec.response.clone())),
    }
    let mut columns = vec![DesignColumn {
        name: "_cons".into(),
        source: None,
        transform: Transform::Intercept,
    }];
    let mut factors = Vec::new();
    for t in &spec.terms {
        match t {
            Term::Factor(var) => {
                let col = ds
                    .column(var)
                    .ok_or_else(|| FormulaError::UnknownVariable(var.clone()))?;
                let (levels, codes) = match &col.data {
                    ColumnData::Categorical { levels, codes } => (levels.clone(), codes.clone()),
                    ColumnData::Binary(v) => (
                        vec!["0".to_string(), "1".to_string()],
                        v.iter().map(|&b| b as u32).collect(),
                    ),
                    ColumnData::Continuous { .. } => {
                        return Err(FormulaError::ContinuousFactor(var.clone()))
                    }
                };
                let mut used = vec![false; levels.len()];
                for &c in &codes {
                    used[c as usize] = true;
                }
                let observed: Vec<String> = levels
                    .into_iter()
                    .zip(used)
                    .filter(|(_, u)| *u)
                    .map(|(l, _)| l)
                    .collect();
                if observed.len() < 2 {
                    return Err(FormulaError::SingleLevel(var.clone()));
                }
                let reference = match opts.references.get(var) {
                    Some(r) => {
                        if !observed.contains(r) {
                            return Err(FormulaError::UnknownLevel {
                                variable: var.clone(),
                                level: r.clone(),
                            });
                        }
                        r.clone()
                    }
                    None => observed[0].clone(),
                };
                for l in observed.iter().filter(|l| **l != reference) {
                    columns.push(DesignColumn {
                        name: format!("{var}={l}"),
                        source: Some(var.clone()),
                        transform: Transform::Indicator(l.clone()),
                    });
                }
                factors.push(FactorCoding {
                    variable: var.clone(),
                    levels: observed,
                    reference,
                });
            }
            Term::Linear(var) | Term::Square(var) => {
                numeric(ds, var)?;
                let sq = matches!(t, Term::Square(_));
                columns.push(DesignColumn {
                    name: if sq { format!("{var}^2") } else { var.clone() },
                    source: Some(var.clone()),
                    transform: if sq { Transform::Square } else { Transform::Identity },
                });
            }
        }
    }
    Ok(TermMap {
        response: spec.response.clone(),
        columns,
        factors,
    })
}
