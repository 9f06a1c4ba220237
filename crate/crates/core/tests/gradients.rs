mod common;

use margins_core::formula::{build_design, parse_formula, DesignOptions, TermMap};
use margins_core::linalg::Matrix;
use margins_core::logit::{fit_design, log_likelihood, score_and_hessian, FitOptions};
use margins_core::margins::{estimates, means_row, EffectScale, Grid, MarginKind, MarginRequest};

use common::*;

fn setup(seed: u64, n: usize) -> (margins_core::Design, TermMap, Vec<f64>) {
    let ds = random_dataset(seed, n);
    let spec = parse_formula("y ~ C(g) + x + x^2 + z").unwrap();
    let (d, map) = build_design(&ds, &spec, &DesignOptions::default()).unwrap();
    let fr = fit_design(&d, &map, &FitOptions::default()).unwrap();
    // step off the optimum so the score is not identically zero
    let se = fr.std_errors();
    let beta: Vec<f64> = fr
        .beta
        .iter()
        .zip(&se)
        .enumerate()
        .map(|(j, (b, s))| b + 0.2 * s * (j as f64 - 2.0))
        .collect();
    (d, map, beta)
}

fn col_scale(x: &Matrix<f64>, j: usize) -> f64 {
    x.column(j).iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[test]
fn score_matches_finite_difference() {
    for seed in 0..5 {
        let (d, _, beta) = setup(seed, 300);
        let (score, _) = score_and_hessian(&beta, &d.x, &d.y).unwrap();
        for j in 0..beta.len() {
            let h = 1e-4 / col_scale(&d.x, j);
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (log_likelihood(&up, &d.x, &d.y).unwrap() - log_likelihood(&dn, &d.x, &d.y).unwrap()) / (2.0 * h);
            assert!((score[j] - fd).abs() < 1e-6, "seed {seed} j {j}: {} vs {fd}", score[j]);
        }
    }
}

#[test]
fn hessian_matches_finite_difference() {
    for seed in 0..5 {
        let (d, _, beta) = setup(seed, 300);
        let (_, hess) = score_and_hessian(&beta, &d.x, &d.y).unwrap();
        for j in 0..beta.len() {
            let h = 1e-5 / col_scale(&d.x, j);
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j] += h;
            dn[j] -= h;
            let (su, _) = score_and_hessian(&up, &d.x, &d.y).unwrap();
            let (sd, _) = score_and_hessian(&dn, &d.x, &d.y).unwrap();
            for i in 0..beta.len() {
                let fd = (su[i] - sd[i]) / (2.0 * h);
                let rel = (hess[(i, j)] - fd).abs() / hess[(i, j)].abs().max(1.0);
                assert!(rel < 1e-5, "seed {seed} ({i},{j}): {} vs {fd}", hess[(i, j)]);
            }
        }
    }
}

fn requests() -> Vec<MarginRequest<f64>> {
    vec![
        MarginRequest::new(MarginKind::Aap, "g"),
        MarginRequest::new(MarginKind::Ame, "g"),
        MarginRequest::new(MarginKind::Ame, "g").base("b"),
        MarginRequest::new(MarginKind::Aap, "x").at("x", Grid::Values(vec![0.0, 2.5, 7.0])),
        MarginRequest::new(MarginKind::Ame, "x").at("x", Grid::Values(vec![0.5, 3.0, 9.0])),
        MarginRequest::new(MarginKind::Ame, "x"),
        MarginRequest::new(MarginKind::Ame, "z"),
        MarginRequest::new(MarginKind::Ame, "x").effect(EffectScale::UnitChange),
        MarginRequest::new(MarginKind::Ame, "x")
            .at("x", Grid::Values(vec![1.0, 4.0]))
            .effect(EffectScale::UnitChange),
        MarginRequest::new(MarginKind::Aprv, "g").at("x", Grid::Values(vec![0.0, 3.0, 6.0])),
        MarginRequest::new(MarginKind::Merv, "g").at("x", Grid::Values(vec![0.0, 3.0, 6.0])),
        MarginRequest::new(MarginKind::Aprv, "g").at("z", Grid::Values(vec![-1.0, 1.0])),
    ]
}

fn check(beta: &[f64], x: &Matrix<f64>, map: &TermMap, req: &MarginRequest<f64>) {
    let base = estimates(beta, x, map, req).unwrap();
    let h = 1e-6;
    for j in 0..beta.len() {
        let mut up = beta.to_vec();
        let mut dn = beta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let eu = estimates(&up, x, map, req).unwrap();
        let ed = estimates(&dn, x, map, req).unwrap();
        for (r, e) in base.iter().enumerate() {
            let fd = (eu[r].value - ed[r].value) / (2.0 * h);
            let scale = e.gradient.iter().map(|g| g.abs()).fold(0.0, f64::max);
            let rel = (e.gradient[j] - fd).abs() / scale;
            assert!(rel < 1e-6, "{req:?} row {r} j {j}: {} vs {fd}", e.gradient[j]);
        }
    }
}

#[test]
fn margin_gradients_match_finite_difference() {
    for seed in 0..3 {
        let (d, map, beta) = setup(seed, 200);
        for req in requests() {
            check(&beta, &d.x, &map, &req);
        }
        let m = means_row(&d.x, &map);
        let at_means = Matrix::from_row_major(1, m.len(), m);
        for req in requests() {
            check(&beta, &at_means, &map, &req);
        }
    }
}

#[test]
fn bad_margin_gradient_would_be_caught() {
    // sanity check on the harness: a deliberately wrong gradient fails
    let (d, map, beta) = setup(11, 100);
    let req = MarginRequest::new(MarginKind::Aap, "g");
    let mut e = estimates(&beta, &d.x, &map, &req).unwrap();
    let scale = e[0].gradient.iter().map(|g| g.abs()).fold(0.0, f64::max);
    e[0].gradient[1] += 1e-4 * scale;
    let h = 1e-6;
    let mut up = beta.clone();
    let mut dn = beta.clone();
    up[1] += h;
    dn[1] -= h;
    let fd = (estimates(&up, &d.x, &map, &req).unwrap()[0].value - estimates(&dn, &d.x, &map, &req).unwrap()[0].value)
        / (2.0 * h);
    assert!((e[0].gradient[1] - fd).abs() / scale > 1e-6);
}
