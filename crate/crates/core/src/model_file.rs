//! Fitted models on disk as JSON, with every number written to 17
//! significant digits so a reload reproduces the fit exactly.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::formula::TermMap;
use crate::linalg::Matrix;
use crate::logit::FitResult;
use crate::fmt_sig17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub formula: String,
    pub term_map: TermMap,
    pub beta: Vec<f64>,
    /// Row-major `k × k`.
    pub cov: Vec<Vec<f64>>,
    pub ll: f64,
    pub ll0: f64,
    pub n: usize,
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl ModelFile {
    pub fn from_fit(formula: &str, fr: &FitResult<f64>) -> Self {
        Self {
            formula: formula.to_string(),
            term_map: fr.term_map.clone(),
            beta: fr.beta.clone(),
            cov: fr.cov.rows_iter().map(<[f64]>::to_vec).collect(),
            ll: fr.ll,
            ll0: fr.ll0,
            n: fr.n,
            k: fr.k,
            converged: fr.converged,
            iterations: fr.iterations,
        }
    }

    pub fn into_fit(self) -> io::Result<FitResult<f64>> {
        let k = self.beta.len();
        if k != self.term_map.k() || self.cov.len() != k || self.cov.iter().any(|r| r.len() != k) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "model file dimensions are inconsistent",
            ));
        }
        let mut fr = FitResult::from_coefficients(self.term_map, self.beta, Some(Matrix::from_rows(&self.cov)));
        fr.ll = self.ll;
        fr.ll0 = self.ll0;
        fr.n = self.n;
        fr.converged = self.converged;
        fr.iterations = self.iterations;
        Ok(fr)
    }

    pub fn to_writer<W: Write>(&self, w: W) -> io::Result<()> {
        let mut ser = serde_json::Serializer::with_formatter(w, Sig17::default());
        self.serialize(&mut ser).map_err(io::Error::from)
    }

    pub fn to_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_writer(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn from_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Pretty JSON with floats in `d.dddddddddddddddde±x` form.
#[derive(Default)]
struct Sig17 {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_sig17(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}
