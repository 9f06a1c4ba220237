mod common;

use margins_core::dataset::{infer_schema, load_csv};
use margins_core::formula::{build_design, parse_formula, DesignOptions};
use margins_core::logit::{fit_design, fit_stats, FitOptions};

use common::*;

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/toy32.csv");

// Frozen from an external logistic-regression fit of the same file
// (tolerance 1e-14), with region coded against `east`.
const REF: [(&str, f64, f64); 6] = [
    ("_cons", -0.09559218047634753, 1.9553192244738429),
    ("region=north", 0.3816470406173336, 1.0146893459045108),
    ("region=south", 1.2732767612752935, 1.0227387947280437),
    ("x", -0.08350064833161808, 0.5026666290450571),
    ("x^2", 0.016902554818801194, 0.049885552318818284),
    ("w", 0.015370477773840421, 0.2645474209461119),
];
const LL: f64 = -19.057757856880595;
// closed form with 20 successes in 31 rows; the external fit's iterative
// null model agrees to 2e-9
const LL0: f64 = -20.162109867177637;

fn fitted() -> (margins_core::Fit, margins_core::Design) {
    let schema = infer_schema(DATA).unwrap();
    let loaded = load_csv(DATA, &schema).unwrap();
    assert_eq!(loaded.dropped, 1);
    assert_eq!(loaded.dataset.n_rows(), 31);
    let spec = parse_formula("y ~ C(region) + x + x^2 + w").unwrap();
    let (d, map) = build_design(&loaded.dataset, &spec, &DesignOptions::default()).unwrap();
    (fit_design(&d, &map, &FitOptions::default()).unwrap(), d)
}

#[test]
fn matches_frozen_reference() {
    let (fr, _) = fitted();
    assert!(fr.converged);
    let se = fr.std_errors();
    for (name, b, s) in REF {
        let j = fr.term_map.column_index(name).unwrap();
        assert!(rel_err(fr.beta[j], b) < 1e-7, "{name}: {} vs {b}", fr.beta[j]);
        assert!(rel_err(se[j], s) < 1e-7, "{name} se: {} vs {s}", se[j]);
    }
    assert!((fr.ll - LL).abs() < 1e-10);
    assert!((fr.ll0 - LL0).abs() < 1e-10);
    let st = fit_stats(&fr).unwrap();
    assert!((st.pseudo_r2 - (1.0 - LL / LL0)).abs() < 1e-10);
    assert_eq!(st.df, 5);
}

#[test]
fn matches_independent_irls() {
    let (fr, d) = fitted();
    let x: Mat = d.x.rows_iter().map(<[f64]>::to_vec).collect();
    let (beta, cov, ll) = irls(&x, &d.y);
    for j in 0..fr.k {
        assert!((fr.beta[j] - beta[j]).abs() < 1e-9, "beta[{j}]");
        for i in 0..fr.k {
            assert!((fr.cov[(i, j)] - cov[i][j]).abs() < 1e-9 * cov[i][j].abs().max(1.0));
        }
    }
    assert!((fr.ll - ll).abs() < 1e-10);
}

#[test]
fn log_likelihood_never_decreases() {
    let (fr, _) = fitted();
    assert_eq!(fr.ll_trace.len(), fr.iterations + 1);
    // up to the rounding noise of the summed log-likelihood
    assert!(fr.ll_trace.windows(2).all(|w| w[1] >= w[0] - 16.0 * f64::EPSILON * w[0].abs()));
}

#[test]
fn f32_fit_agrees_with_f64() {
    let (fr, d) = fitted();
    let x32 = margins_core::Matrix32::from_row_major(
        d.x.nrows(),
        d.x.ncols(),
        d.x.as_slice().iter().map(|v| *v as f32).collect(),
    );
    let y32: Vec<f32> = d.y.iter().map(|v| *v as f32).collect();
    let opts = FitOptions {
        tol: 1e-6,
        score_tol: 1e-2,
        ..FitOptions::default()
    };
    let fr32 = margins_core::logit::fit(&x32, &y32, &fr.term_map, &opts).unwrap();
    for j in 0..fr.k {
        assert!((fr32.beta[j] as f64 - fr.beta[j]).abs() < 1e-2, "beta[{j}]");
    }
}
