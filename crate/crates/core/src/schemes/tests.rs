use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::calendar::ForecastMode;
use crate::clustering::ClusterModel;
use crate::features::{Column, FeaturePanel, Provenance, RowKey};

const SHARES: f64 = 1e6;

/// Panel whose log turnover is linear in `sig`; `junk` and `volume` are noise.
fn panel(stocks: &[&str], n_days: usize, seed: u64) -> FeaturePanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    let mut keys = Vec::new();
    let (mut t, mut intr, mut sig, mut junk, mut vol, mut target) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for (s, stock) in stocks.iter().enumerate() {
        for d in 0..n_days {
            for bin in 0..26 {
                keys.push(RowKey {
                    stock: stock.to_string(),
                    day: start + Days::new(d as u64),
                    bin,
                });
                let x: f64 = rng.random_range(-1.0..1.0);
                t.push(bin as f64);
                intr.push((bin / 9) as f64);
                sig.push(x);
                junk.push(rng.random_range(-1.0..1.0));
                let v = SHARES * (-8.0 + 1.5 * x + 0.1 * s as f64 + rng.random_range(-0.05..0.05)).exp();
                vol.push(SHARES * (-8.0 + rng.random_range(-1.0..1.0f64)).exp());
                target.push(v);
            }
        }
    }
    let col = |name: &str, provenance: Provenance, log: bool, values: Vec<f64>| Column {
        name: name.into(),
        provenance,
        log,
        values,
    };
    let basic = |b: &str| Provenance::Basic { base: b.into() };
    FeaturePanel {
        mode: ForecastMode::Dynamic,
        keys,
        columns: vec![
            col("timeHMs", Provenance::Calendar, false, t),
            col("intrIn", Provenance::Calendar, false, intr),
            col("sig", basic("sig"), false, sig),
            col("junk", basic("junk"), false, junk),
            col("volume", basic("volume"), true, vol),
        ],
        target,
        outstanding_shares: stocks.iter().map(|s| (s.to_string(), SHARES)).collect(),
        dropped_rows: 0,
    }
}

fn spec(scheme: Scheme, model: ModelKind) -> SchemeSpec {
    SchemeSpec {
        scheme,
        model,
        recipe: Recipe::Auxiliary,
        mode: ForecastMode::Dynamic,
        split: Split {
            train_days: 6,
            validation_days: 2,
            test_days: 3,
            refit_every: None,
        },
        params: ModelParams::default(),
        seed: 7,
    }
}

fn clusters(assign: &[(&str, usize)]) -> ClusterModel {
    ClusterModel {
        basis: crate::clustering::CorrelationBasis::Volume,
        window_days: 1,
        stocks: assign.iter().map(|(s, _)| s.to_string()).collect(),
        correlation: Vec::new(),
        evr_threshold: 0.8,
        evr: vec![1.0],
        n_components: 1,
        embedding: Vec::new(),
        k: 2,
        assignments: assign.iter().map(|(_, c)| *c).collect(),
        wcss: 0.0,
        seed: 0,
    }
}

#[test]
fn pooled_design_stacks_every_stock() {
    let p = panel(&["A", "B"], 1, 0);
    let d = assemble_design(&spec(Scheme::Uam, ModelKind::Gbt), &p, None).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].x.len(), 52);
    let d = assemble_design(&spec(Scheme::Sam, ModelKind::Gbt), &p, None).unwrap();
    assert_eq!(d.iter().map(|d| d.x.len()).collect::<Vec<_>>(), vec![26, 26]);
}

#[test]
fn linear_models_see_bin_dummies() {
    let p = panel(&["A"], 1, 0);
    let d = &assemble_design(&spec(Scheme::Sam, ModelKind::Ols), &p, None).unwrap()[0];
    assert_eq!(d.names.len(), 25 + 3);
    assert!(!d.names.iter().any(|n| n == "intrIn"));
    assert_eq!(d.x[0][..25].iter().sum::<f64>(), 0.0);
    assert_eq!(d.x[3][2], 1.0);
    let g = &assemble_design(&spec(Scheme::Sam, ModelKind::Gbt), &p, None).unwrap()[0];
    assert_eq!(g.names, vec!["timeHMs", "intrIn", "sig", "junk", "volume"]);
    assert!((g.x[5][4] - (p.column("volume").unwrap().values[5].ln_1p() - SHARES.ln())).abs() < 1e-12);
}

#[test]
fn cluster_means_match_brute_force() {
    let p = panel(&["A", "B", "C"], 2, 1);
    let cm = clusters(&[("A", 0), ("B", 0), ("C", 1)]);
    let s = spec(Scheme::Cam, ModelKind::Gbt);
    let d = assemble_design(&s, &p, Some(&cm)).unwrap();
    assert_eq!(d.len(), 2);
    let pair = &d[0];
    let j = pair.names.iter().position(|n| n == "cm_sig").unwrap();
    let jv = pair.names.iter().position(|n| n == "cm_volume").unwrap();
    assert!(!pair.names.iter().any(|n| n == "cm_timeHMs" || n == "cm_intrIn"));
    let sig = &p.column("sig").unwrap().values;
    for (i, &r) in pair.rows.iter().enumerate() {
        let k = &p.keys[r];
        let same: Vec<usize> = (0..p.n_rows())
            .filter(|&q| p.keys[q].day == k.day && p.keys[q].bin == k.bin && p.keys[q].stock != "C")
            .collect();
        let m = same.iter().map(|&q| sig[q]).sum::<f64>() / same.len() as f64;
        assert!((pair.x[i][j] - m).abs() < 1e-12);
        let vol = &p.column("volume").unwrap().values;
        let mv = same.iter().map(|&q| vol[q].ln_1p() - SHARES.ln()).sum::<f64>() / same.len() as f64;
        assert!((pair.x[i][jv] - mv).abs() < 1e-12);
    }
    // A singleton cluster's means are its own values.
    let single = &d[1];
    let own = single.names.iter().position(|n| n == "sig").unwrap();
    for row in &single.x {
        assert_eq!(row[own], row[j]);
    }
    assert!(assemble_design(&s, &p, Some(&clusters(&[("A", 0), ("B", 0)]))).is_err());
}

#[test]
fn daily_r2_reference_points() {
    let y = [3.0, 5.0, 10.0, 2.0];
    assert_eq!(day_r2(&y, &y), Some(1.0));
    let m = y.iter().sum::<f64>() / 4.0;
    assert!(day_r2(&y, &[m; 4]).unwrap().abs() < 1e-15);
    assert_eq!(day_r2(&[1.0; 3], &[1.0, 2.0, 3.0]), None);
}

#[test]
fn ols_learns_the_signal_and_ranks_it_first() {
    let p = panel(&["A", "B"], 11, 2);
    let e = rolling_evaluate(&spec(Scheme::Sam, ModelKind::Ols), &p, None).unwrap();
    let r = &e.report;
    assert_eq!(r.r2_by_day.len(), 3);
    let daily: Vec<f64> = r.r2_by_day.values().copied().collect();
    assert!((r.r2_mean - daily.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert!(r.r2_mean > 0.9, "{}", r.r2_mean);
    assert_eq!(r.importance.ranking[0].0, "sig");
    assert_eq!(e.predictions.len(), 2 * 3 * 26);
}

#[test]
fn tree_importance_prefers_the_signal() {
    let p = panel(&["A"], 11, 3);
    let e = rolling_evaluate(&spec(Scheme::Sam, ModelKind::Gbt), &p, None).unwrap();
    assert_eq!(e.report.importance.method, "split_count");
    assert_eq!(e.report.importance.ranking[0].0, "sig");
    assert!(e.report.r2_mean > 0.8);
}

#[test]
fn fully_shrunk_lasso_ranks_nothing() {
    let p = panel(&["A"], 11, 4);
    let mut s = spec(Scheme::Sam, ModelKind::Lasso);
    s.params.lasso_grid = vec![1.0];
    let e = rolling_evaluate(&s, &p, None).unwrap();
    assert!(e.report.importance.ranking.is_empty());
    let s = spec(Scheme::Sam, ModelKind::Ridge);
    let e = rolling_evaluate(&s, &p, None).unwrap();
    assert!(e.report.lambdas.contains_key("A"));
    assert_eq!(e.report.importance.ranking[0].0, "sig");
}

#[test]
fn pooled_on_one_stock_equals_per_stock() {
    let p = panel(&["A"], 11, 5);
    for model in [ModelKind::Ols, ModelKind::Gbt] {
        let a = rolling_evaluate(&spec(Scheme::Sam, model), &p, None).unwrap();
        let b = rolling_evaluate(&spec(Scheme::Uam, model), &p, None).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.report.r2_by_day, b.report.r2_by_day);
    }
}

#[test]
fn refitting_in_blocks_covers_every_test_day() {
    let p = panel(&["A"], 12, 6);
    let mut s = spec(Scheme::Sam, ModelKind::Ols);
    s.split.test_days = 4;
    s.split.refit_every = Some(2);
    let e = rolling_evaluate(&s, &p, None).unwrap();
    assert_eq!(e.report.test_days.len(), 4);
    assert_eq!(e.predictions.len(), 4 * 26);
}

#[test]
fn component_model_reads_the_forecast_column() {
    let mut p = panel(&["A"], 11, 7);
    let x = p.target.iter().map(|v| v * 1.1).collect();
    p.add_column("x", Provenance::Cmem, true, x).unwrap();
    let e = rolling_evaluate(&spec(Scheme::Sam, ModelKind::Cmem), &p, None).unwrap();
    assert!(e.predictions.iter().all(|q| (q.predicted - 1.1 * q.actual).abs() < 1e-9));
    let q = panel(&["A"], 11, 7);
    assert!(rolling_evaluate(&spec(Scheme::Sam, ModelKind::Cmem), &q, None).is_err());
}

#[test]
fn split_longer_than_panel_is_rejected() {
    let p = panel(&["A"], 5, 8);
    assert!(matches!(
        rolling_evaluate(&spec(Scheme::Sam, ModelKind::Ols), &p, None),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn reports_are_deterministic_and_compare_in_csv() {
    let p = panel(&["A", "B"], 11, 9);
    let s = spec(Scheme::Uam, ModelKind::Gbt);
    let a = rolling_evaluate(&s, &p, None).unwrap();
    let b = rolling_evaluate(&s, &p, None).unwrap();
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    let mut buf = Vec::new();
    write_comparison_csv(&[a.report], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("label,scheme,model"));
    assert!(text.contains("UAM_gbt_auxiliary_dynamic,UAM,gbt,auxiliary,dynamic"));
}

#[test]
fn names_round_trip() {
    for s in ["SAM", "CAM", "UAM"] {
        assert_eq!(s.parse::<Scheme>().unwrap().to_string(), s);
    }
    assert_eq!("cmem_components".parse::<Recipe>().unwrap(), Recipe::CmemComponents);
    assert!("xgb".parse::<ModelKind>().is_err());
}

#[test]
fn sequence_net_uses_permutation_importance() {
    let p = panel(&["A"], 11, 10);
    let mut s = spec(Scheme::Sam, ModelKind::Seqnet);
    s.params.seqnet.window = 3;
    s.params.seqnet.mlp = vec![8];
    s.params.seqnet.hidden = 8;
    s.params.seqnet.max_epochs = 60;
    s.params.seqnet.learning_rate = 1e-2;
    s.params.seqnet.batch_size = 16;
    s.params.permutation_rounds = 3;
    let a = rolling_evaluate(&s, &p, None).unwrap();
    assert_eq!(a.report.importance.method, "permutation_r2_drop");
    assert_eq!(a.report.importance.ranking[0].0, "sig");
    assert!(a.report.r2_mean > 0.5, "{}", a.report.r2_mean);
    let b = rolling_evaluate(&s, &p, None).unwrap();
    assert_eq!(a.predictions, b.predictions);
}
