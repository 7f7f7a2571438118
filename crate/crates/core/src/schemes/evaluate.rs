use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{assemble_design, cluster_series, Design};
use super::fit::{fit_group, GroupModel};
use super::importance::{feature_importance, FeatureImportance};
use super::{ModelKind, Recipe, Scheme, SchemeSpec};
use crate::calendar::ForecastMode;
use crate::clustering::{cluster_stocks, ClusterConfig, ClusterModel};
use crate::error::{Error, Result};
use crate::features::FeaturePanel;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub stock: String,
    pub day: NaiveDate,
    pub bin: usize,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub label: String,
    pub scheme: Scheme,
    pub model: ModelKind,
    pub recipe: Recipe,
    pub mode: ForecastMode,
    pub seed: u64,
    pub n_features: usize,
    pub n_models: usize,
    pub test_days: Vec<NaiveDate>,
    /// Pooled share-scale R^2 over every stock and bin of each test day.
    pub r2_by_day: BTreeMap<NaiveDate, f64>,
    /// Test days whose realized volume does not vary, so R^2 is undefined.
    pub skipped_days: Vec<NaiveDate>,
    pub r2_mean: f64,
    /// Population standard deviation of the daily R^2 values.
    pub r2_std: f64,
    pub per_stock_r2: BTreeMap<String, f64>,
    /// Lambda chosen per model in the last refit block.
    pub lambdas: BTreeMap<String, f64>,
    pub importance: FeatureImportance,
    pub config_hash: Option<String>,
    /// Wall-clock seconds; kept out of the serialized report so reruns compare equal.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl EvaluationReport {
    pub fn write_days_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["day", "r2"])?;
        for (d, r2) in &self.r2_by_day {
            w.write_record([d.to_string(), r2.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    /// Test-day predictions in panel order.
    pub predictions: Vec<Prediction>,
    /// Designs and models of the last refit block.
    pub designs: Vec<Design>,
    pub models: Vec<GroupModel>,
    pub clusters: Option<ClusterModel>,
}

/// `1 - SSE/SST` over one day's rows; `None` when realized volume is constant.
pub fn day_r2(actual: &[f64], predicted: &[f64]) -> Option<f64> {
    stats::r_squared(actual, predicted)
}

fn rows_in(design: &Design, panel: &FeaturePanel, days: &BTreeSet<NaiveDate>) -> Vec<usize> {
    (0..design.rows.len())
        .filter(|&i| days.contains(&panel.keys[design.rows[i]].day))
        .collect()
}

/// Rolling out-of-sample evaluation. The panel's days are split into training,
/// validation and test days in that order. With `split.refit_every`, test days are
/// covered in blocks and the training and validation windows roll forward to sit
/// right before each block. Clustered schemes re-cluster on each block's training
/// window using `clusters`.
pub fn rolling_evaluate(
    spec: &SchemeSpec,
    panel: &FeaturePanel,
    clusters: Option<&ClusterConfig>,
) -> Result<Evaluation> {
    let started = Instant::now();
    if panel.mode != spec.mode {
        return Err(Error::Config(format!(
            "panel was built for {} forecasts, run asks for {}",
            panel.mode.as_str(),
            spec.mode.as_str()
        )));
    }
    let split = spec.split;
    let days = panel.days();
    let needed = split.train_days + split.validation_days + split.test_days;
    if split.train_days == 0 || split.test_days == 0 {
        return Err(Error::Config("train_days and test_days must be >= 1".into()));
    }
    if days.len() < needed {
        return Err(Error::Config(format!("panel has {} days, the split needs {needed}", days.len())));
    }
    let test_start = split.train_days + split.validation_days;
    let block = split.refit_every.unwrap_or(split.test_days).max(1);

    let mut predictions = Vec::new();
    let mut last: Option<(Vec<Design>, Vec<GroupModel>, Option<ClusterModel>)> = None;
    let mut b = test_start;
    while b < test_start + split.test_days {
        let end = (b + block).min(test_start + split.test_days);
        let train: BTreeSet<NaiveDate> = days[b - test_start..b - split.validation_days].iter().copied().collect();
        let val: BTreeSet<NaiveDate> = days[b - split.validation_days..b].iter().copied().collect();
        let test: BTreeSet<NaiveDate> = days[b..end].iter().copied().collect();

        let (designs, models, cm) = if spec.model == ModelKind::Cmem {
            (Vec::new(), Vec::new(), None)
        } else {
            let cm = if spec.scheme == Scheme::Cam {
                let cfg = clusters.ok_or_else(|| Error::Config("the clustered scheme needs a cluster config".into()))?;
                let (stocks, series) = cluster_series(panel, cfg.basis, days[b], cfg.window_days)?;
                let k = cfg.k.min(stocks.len());
                if k < cfg.k {
                    log::warn!("k = {} exceeds the {} stocks; clustering with k = {k}", cfg.k, stocks.len());
                }
                Some(cluster_stocks(&stocks, &series, &ClusterConfig { seed: spec.seed, k, ..cfg.clone() })?)
            } else {
                None
            };
            let designs = assemble_design(spec, panel, cm.as_ref())?;
            let models = designs
                .par_iter()
                .map(|d| {
                    let tr = rows_in(d, panel, &train);
                    let va = rows_in(d, panel, &val);
                    fit_group(spec, d, panel, &tr, &va)
                })
                .collect::<Result<Vec<_>>>()?;
            (designs, models, cm)
        };

        if spec.model == ModelKind::Cmem {
            let x = panel
                .column("x")
                .ok_or_else(|| Error::InvalidInput("panel lacks the component forecast column `x`".into()))?;
            for (r, k) in panel.keys.iter().enumerate() {
                if test.contains(&k.day) {
                    predictions.push(Prediction {
                        stock: k.stock.clone(),
                        day: k.day,
                        bin: k.bin,
                        actual: panel.target[r],
                        predicted: x.values[r],
                    });
                }
            }
        } else {
            let per_design = designs
                .par_iter()
                .zip(&models)
                .map(|(d, m)| {
                    let idx = rows_in(d, panel, &test);
                    let pred = m.predict_shares(d, panel, &idx)?;
                    Ok(idx.into_iter().map(|i| d.rows[i]).zip(pred).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let mut rows: Vec<(usize, f64)> = per_design.into_iter().flatten().collect();
            rows.sort_by_key(|(r, _)| *r);
            for (r, p) in rows {
                let k = &panel.keys[r];
                predictions.push(Prediction {
                    stock: k.stock.clone(),
                    day: k.day,
                    bin: k.bin,
                    actual: panel.target[r],
                    predicted: p,
                });
            }
        }
        last = Some((designs, models, cm));
        b = end;
    }
    predictions.sort_by(|a, b| (&a.stock, a.day, a.bin).cmp(&(&b.stock, b.day, b.bin)));

    let test_days: Vec<NaiveDate> = days[test_start..needed].to_vec();
    let mut by_day: BTreeMap<NaiveDate, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut by_stock: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in &predictions {
        let e = by_day.entry(p.day).or_default();
        e.0.push(p.actual);
        e.1.push(p.predicted);
        let e = by_stock.entry(p.stock.clone()).or_default();
        e.0.push(p.actual);
        e.1.push(p.predicted);
    }
    let mut r2_by_day = BTreeMap::new();
    let mut skipped_days = Vec::new();
    for d in &test_days {
        match by_day.get(d).and_then(|(a, p)| day_r2(a, p)) {
            Some(r2) => {
                r2_by_day.insert(*d, r2);
            }
            None => {
                log::warn!("{}: R^2 undefined on {d}, day skipped", spec.label());
                skipped_days.push(*d);
            }
        }
    }
    if r2_by_day.is_empty() {
        return Err(Error::Numerical("R^2 is undefined on every test day".into()));
    }
    let daily: Vec<f64> = r2_by_day.values().copied().collect();
    let per_stock_r2 = by_stock
        .into_iter()
        .filter_map(|(s, (a, p))| stats::r_squared(&a, &p).map(|r| (s, r)))
        .collect();

    let (designs, models, clusters) = last.expect("at least one block");
    let importance = feature_importance(spec, &designs, &models, panel)?;
    let lambdas = models
        .iter()
        .filter_map(|m| m.lambda.as_ref().map(|l| (m.label.clone(), l.lambda)))
        .collect();
    let n_features = designs.first().map_or(0, |d| d.names.len());
    let report = EvaluationReport {
        label: spec.label(),
        scheme: spec.scheme,
        model: spec.model,
        recipe: spec.recipe,
        mode: spec.mode,
        seed: spec.seed,
        n_features,
        n_models: models.len(),
        test_days,
        r2_by_day,
        skipped_days,
        r2_mean: stats::mean(&daily),
        r2_std: stats::std_pop(&daily),
        per_stock_r2,
        lambdas,
        importance,
        config_hash: None,
        runtime_secs: started.elapsed().as_secs_f64(),
    };
    Ok(Evaluation {
        report,
        predictions,
        designs,
        models,
        clusters,
    })
}

/// One line per report: configuration and daily R^2 summary.
pub fn write_comparison_csv<W: std::io::Write>(reports: &[EvaluationReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label", "scheme", "model", "recipe", "mode", "n_features", "n_test_days", "r2_mean", "r2_std",
    ])?;
    for r in reports {
        w.write_record([
            r.label.clone(),
            r.scheme.to_string(),
            r.model.to_string(),
            r.recipe.to_string(),
            r.mode.as_str().to_string(),
            r.n_features.to_string(),
            r.r2_by_day.len().to_string(),
            format!("{:.6}", r.r2_mean),
            format!("{:.6}", r.r2_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}
