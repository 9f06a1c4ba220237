mod common;

use margins_core::dataset::{load_reader, Column, Dataset};
use margins_core::formula::{build_design, parse_formula, DesignOptions, Value};
use margins_core::logit::{fit_design, predict, FitError, FitOptions};
use margins_core::margins::{self, MarginKind, MarginRequest};
use margins_core::rng::Stream;
use proptest::prelude::*;

use common::*;

fn fit_or_skip(ds: &Dataset, formula: &str) -> Option<(margins_core::Fit, margins_core::Design)> {
    let spec = parse_formula(formula).unwrap();
    let (d, map) = build_design(ds, &spec, &DesignOptions::default()).ok()?;
    match fit_design(&d, &map, &FitOptions::default()) {
        Ok(fr) => Some((fr, d)),
        Err(FitError::Separation(_)) => None,
        Err(e) => panic!("unexpected fit error: {e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mean_prediction_equals_mean_outcome(seed in any::<u64>(), n in 50usize..5000) {
        let ds = random_dataset(seed, n);
        let fitted = fit_or_skip(&ds, "y ~ C(g) + x + x^2 + z");
        prop_assume!(fitted.is_some());
        let (fr, d) = fitted.unwrap();
        let p = predict(&fr, &d.x).unwrap();
        let pbar = p.iter().sum::<f64>() / n as f64;
        let ybar = d.y.iter().sum::<f64>() / n as f64;
        prop_assert!((pbar - ybar).abs() < 1e-8, "{pbar} vs {ybar}");
    }

    #[test]
    fn row_order_does_not_matter(seed in any::<u64>(), n in 50usize..1500) {
        let ds = random_dataset(seed, n);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = Stream::new(seed ^ 0x5eed);
        for i in (1..n).rev() {
            idx.swap(i, rng.below(i as u64 + 1) as usize);
        }
        // keep the first-appearance level order identical
        let head: Vec<usize> = (0..3).collect();
        let tail: Vec<usize> = idx.into_iter().filter(|i| *i >= 3).collect();
        let order: Vec<usize> = head.into_iter().chain(tail).collect();
        let a = fit_or_skip(&ds, "y ~ C(g) + x + z");
        let b = fit_or_skip(&ds.select_rows(&order), "y ~ C(g) + x + z");
        prop_assume!(a.is_some() && b.is_some());
        let (fa, da) = a.unwrap();
        let (fb, db) = b.unwrap();
        // equal up to the convergence tolerance (score below 1e-6)
        for j in 0..fa.k {
            prop_assert!((fa.beta[j] - fb.beta[j]).abs() < 1e-6 * fa.beta[j].abs().max(1.0));
        }
        let req = MarginRequest::new(MarginKind::Aap, "g");
        let ma = margins::compute(&fa, &da.x, &req).unwrap();
        let mb = margins::compute(&fb, &db.x, &req).unwrap();
        for (u, v) in ma.iter().zip(&mb) {
            prop_assert!((u.estimate - v.estimate).abs() < 1e-8);
            prop_assert!((u.se - v.se).abs() < 1e-8);
        }
    }

    #[test]
    fn rescaling_a_covariate_rescales_its_coefficients(seed in any::<u64>(), n in 100usize..1500) {
        let ds = random_dataset(seed, n);
        let x = ds.column("x").unwrap().numeric().unwrap();
        let mut cols: Vec<Column> = ds.columns().to_vec();
        cols.push(Column::continuous("x10", x.iter().map(|v| v * 10.0).collect()));
        let ds = Dataset::new("scaled", cols).unwrap();
        let a = fit_or_skip(&ds, "y ~ C(g) + x + x^2");
        let b = fit_or_skip(&ds, "y ~ C(g) + x10 + x10^2");
        prop_assume!(a.is_some() && b.is_some());
        let (fa, da) = a.unwrap();
        let (fb, db) = b.unwrap();
        let rel = |u: f64, v: f64| (u - v).abs() / v.abs().max(1e-6);
        prop_assert!(rel(fb.coefficient("x10").unwrap() * 10.0, fa.coefficient("x").unwrap()) < 1e-6);
        prop_assert!(rel(fb.coefficient("x10^2").unwrap() * 100.0, fa.coefficient("x^2").unwrap()) < 1e-6);
        prop_assert!((fa.ll - fb.ll).abs() < 1e-8);
        let pa = margins::aap_continuous_at(&fa, &da.x, "x", &[0.5, 2.0, 4.0]).unwrap();
        let pb = margins::aap_continuous_at(&fb, &db.x, "x10", &[5.0, 20.0, 40.0]).unwrap();
        for (u, v) in pa.iter().zip(&pb) {
            prop_assert!((u.estimate - v.estimate).abs() < 1e-8);
        }
        // derivative per unit of x is ten times the derivative per unit of x10
        let da_ = margins::ame_continuous_at(&fa, &da.x, "x", margins::Grid::Observed).unwrap();
        let db_ = margins::ame_continuous_at(&fb, &db.x, "x10", margins::Grid::Observed).unwrap();
        prop_assert!((da_[0].estimate - 10.0 * db_[0].estimate).abs() < 1e-8);
    }

    #[test]
    fn substitution_round_trips(seed in any::<u64>(), v in -50.0f64..50.0, pick in 0usize..3) {
        let ds = random_dataset(seed, 60);
        let spec = parse_formula("y ~ C(g) + x + x^2 + z").unwrap();
        let (d, map) = build_design::<f64>(&ds, &spec, &DesignOptions::default()).unwrap();
        let raw = raw_rows(&ds);
        let names: Vec<String> = map.column_names().iter().map(|s| s.to_string()).collect();
        let level = ["a", "b", "c"][pick].to_string();
        for (i, r) in raw.iter().enumerate().take(20) {
            let row = d.x.row(i);
            prop_assert_eq!(encode(&names, r), row.to_vec());
            let s = map.substitute(row, "x", &Value::Real(v)).unwrap();
            prop_assert!(map.is_coherent(&s));
            prop_assert_eq!(s.clone(), encode(&names, &apply(r, &[Edit::Num("x".into(), v)])));
            let back = map.substitute(&s, "x", &Value::Real(r.nums["x"])).unwrap();
            prop_assert_eq!(back, row.to_vec());
            let s = map.substitute(row, "g", &Value::Level(level.clone())).unwrap();
            prop_assert_eq!(s.clone(), encode(&names, &apply(r, &[Edit::Level("g".into(), level.clone())])));
            let back = map.substitute(&s, "g", &Value::Level(r.levels["g"].clone())).unwrap();
            prop_assert_eq!(back, row.to_vec());
        }
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), n in 1usize..200) {
        let ds = random_dataset(seed, n.max(3));
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = load_reader(buf.as_slice(), "back", &ds.schema()).unwrap();
        prop_assert_eq!(back.dropped, 0);
        prop_assert_eq!(back.dataset.columns(), ds.columns());
    }

    #[test]
    fn summaries_ignore_row_order(seed in any::<u64>(), n in 3usize..300) {
        let ds = random_dataset(seed, n);
        let rev: Vec<usize> = (0..n).rev().collect();
        let a = ds.summarize().unwrap();
        let b = ds.select_rows(&rev).summarize().unwrap();
        prop_assert_eq!(a.n, b.n);
        for ra in &a.rows {
            let rb = b.get(&ra.variable, ra.level.as_deref()).unwrap();
            prop_assert!((ra.value - rb.value).abs() < 1e-9);
            match (ra.sd, rb.sd) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let ds = random_dataset(3, 5000);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let (fr, d) = fit_or_skip(&ds, "y ~ C(g) + x + x^2 + z").unwrap();
                let m = margins::aap_continuous_at(&fr, &d.x, "x", &[0.0, 1.0, 2.0, 3.0]).unwrap();
                (fr.beta, fr.cov, m)
            })
    };
    let one = run(1);
    for t in [2, 3, 8] {
        assert_eq!(run(t), one, "{t} threads");
    }
}
