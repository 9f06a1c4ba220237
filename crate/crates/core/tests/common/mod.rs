//! Independent oracles shared by the integration tests.
//!
//! Nothing here goes through `TermMap::plan`, the blocked reductions or the
//! Cholesky code: rows are re-encoded from raw values by design-column
//! name, fits use plain IRLS with Gauss–Jordan inversion, and margins are
//! straight loops over rows.
#![allow(dead_code)]

use std::collections::HashMap;

use margins_core::dataset::{Column, ColumnData, Dataset};
use margins_core::rng::Stream;

pub type Mat = Vec<Vec<f64>>;

pub fn gauss_jordan_inverse(a: &Mat) -> Option<Mat> {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, p);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[r][j] -= f * m[c][j];
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn naive_ll(beta: &[f64], x: &Mat, y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(r, &yi)| {
            let eta: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
            let p = logistic(eta);
            yi * p.ln() + (1.0 - yi) * (1.0 - p).ln()
        })
        .sum()
}

/// Plain IRLS; returns (beta, covariance, log-likelihood).
pub fn irls(x: &Mat, y: &[f64]) -> (Vec<f64>, Mat, f64) {
    let k = x[0].len();
    let mut beta = vec![0.0; k];
    let mut info = vec![vec![0.0; k]; k];
    for _ in 0..200 {
        let mut grad = vec![0.0; k];
        info = vec![vec![0.0; k]; k];
        for (r, &yi) in x.iter().zip(y) {
            let p = logistic(r.iter().zip(&beta).map(|(a, b)| a * b).sum());
            let w = p * (1.0 - p);
            for a in 0..k {
                grad[a] += (yi - p) * r[a];
                for b in 0..k {
                    info[a][b] += w * r[a] * r[b];
                }
            }
        }
        let inv = gauss_jordan_inverse(&info).expect("information matrix invertible");
        let step: Vec<f64> = (0..k).map(|a| (0..k).map(|b| inv[a][b] * grad[b]).sum()).collect();
        for a in 0..k {
            beta[a] += step[a];
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-14 {
            break;
        }
    }
    let cov = gauss_jordan_inverse(&info).unwrap();
    let ll = naive_ll(&beta, x, y);
    (beta, cov, ll)
}

/// One observation as raw variable values.
#[derive(Debug, Clone, Default)]
pub struct RawRow {
    pub levels: HashMap<String, String>,
    pub nums: HashMap<String, f64>,
}

pub fn raw_rows(ds: &Dataset) -> Vec<RawRow> {
    let mut rows = vec![RawRow::default(); ds.n_rows()];
    for c in ds.columns() {
        for (i, r) in rows.iter_mut().enumerate() {
            match &c.data {
                ColumnData::Categorical { levels, codes } => {
                    r.levels.insert(c.name.clone(), levels[codes[i] as usize].clone());
                }
                ColumnData::Continuous { values, .. } => {
                    r.nums.insert(c.name.clone(), values[i]);
                }
                ColumnData::Binary(v) => {
                    r.nums.insert(c.name.clone(), v[i] as f64);
                    r.levels.insert(c.name.clone(), v[i].to_string());
                }
            }
        }
    }
    rows
}

/// Design row from column names `_cons`, `var=level`, `var^2`, `var`.
pub fn encode(names: &[String], r: &RawRow) -> Vec<f64> {
    names
        .iter()
        .map(|n| {
            if n == "_cons" {
                1.0
            } else if let Some((v, l)) = n.split_once('=') {
                (r.levels[v] == l) as u8 as f64
            } else if let Some(v) = n.strip_suffix("^2") {
                r.nums[v] * r.nums[v]
            } else {
                r.nums[n.as_str()]
            }
        })
        .collect()
}

/// Sample-means row: indicator shares, variable means, squares of means.
pub fn mean_row(names: &[String], rows: &[RawRow]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mean = |v: &str| rows.iter().map(|r| r.nums[v]).sum::<f64>() / n;
    names
        .iter()
        .map(|nm| {
            if nm == "_cons" {
                1.0
            } else if let Some((v, l)) = nm.split_once('=') {
                rows.iter().filter(|r| r.levels[v] == l).count() as f64 / n
            } else if let Some(v) = nm.strip_suffix("^2") {
                mean(v) * mean(v)
            } else {
                mean(nm)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Edit {
    Level(String, String),
    Num(String, f64),
}

pub fn apply(r: &RawRow, edits: &[Edit]) -> RawRow {
    let mut r = r.clone();
    for e in edits {
        match e {
            Edit::Level(v, l) => {
                r.levels.insert(v.clone(), l.clone());
            }
            Edit::Num(v, x) => {
                r.nums.insert(v.clone(), *x);
            }
        }
    }
    r
}

pub fn se(cov: &Mat, g: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in 0..g.len() {
        for b in 0..g.len() {
            s += g[a] * cov[a][b] * g[b];
        }
    }
    s.max(0.0).sqrt()
}

/// Average prediction after `edits`, with its β-gradient.
pub fn naive_ap(beta: &[f64], names: &[String], rows: &[RawRow], edits: &[Edit]) -> (f64, Vec<f64>) {
    let k = beta.len();
    let mut tot = 0.0;
    let mut g = vec![0.0; k];
    for r in rows {
        let x = encode(names, &apply(r, edits));
        let p = logistic(x.iter().zip(beta).map(|(a, b)| a * b).sum());
        tot += p;
        for j in 0..k {
            g[j] += p * (1.0 - p) * x[j];
        }
    }
    let n = rows.len() as f64;
    (tot / n, g.into_iter().map(|v| v / n).collect())
}

/// Average derivative of p with respect to `var`, at `at` or at each
/// row's own value.
pub fn naive_dydx(
    beta: &[f64],
    names: &[String],
    rows: &[RawRow],
    var: &str,
    at: Option<f64>,
    extra: &[Edit],
) -> (f64, Vec<f64>) {
    let k = beta.len();
    let lin = names.iter().position(|n| n == var).unwrap();
    let sq = names.iter().position(|n| *n == format!("{var}^2"));
    let mut tot = 0.0;
    let mut g = vec![0.0; k];
    for r in rows {
        let mut r = apply(r, extra);
        let v = at.unwrap_or(r.nums[var]);
        r.nums.insert(var.to_string(), v);
        let x = encode(names, &r);
        let p = logistic(x.iter().zip(beta).map(|(a, b)| a * b).sum());
        let s = beta[lin] + sq.map_or(0.0, |q| 2.0 * beta[q] * v);
        tot += p * (1.0 - p) * s;
        for j in 0..k {
            let ds = if j == lin {
                1.0
            } else if Some(j) == sq {
                2.0 * v
            } else {
                0.0
            };
            g[j] += p * (1.0 - p) * (1.0 - 2.0 * p) * s * x[j] + p * (1.0 - p) * ds;
        }
    }
    let n = rows.len() as f64;
    (tot / n, g.into_iter().map(|v| v / n).collect())
}

/// Random dataset with a three-level factor, two continuous covariates and
/// a logistic outcome.
pub fn random_dataset(seed: u64, n: usize) -> Dataset {
    let mut rng = Stream::new(seed);
    let levels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let b0 = rng.standard_normal() * 0.5;
    let bx = rng.standard_normal() * 0.5;
    let mut g = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        // every level appears at least once
        let gi = if i < 3 { i as u32 } else { rng.below(3) as u32 };
        let xi = rng.uniform() * 6.0;
        let zi = rng.standard_normal();
        let eta = b0 + 0.4 * gi as f64 + bx * xi - 0.05 * xi * xi + 0.3 * zi;
        g.push(gi);
        x.push(xi);
        z.push(zi);
        y.push(rng.bernoulli(1.0 / (1.0 + (-eta).exp())) as u8);
    }
    // keep both outcomes present
    y[0] = 0;
    y[1] = 1;
    Dataset::new(
        "random",
        vec![
            Column::categorical("g", levels, g),
            Column::continuous("x", x),
            Column::continuous("z", z),
            Column::binary("y", y),
        ],
    )
    .unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
