use std::collections::BTreeSet;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::{ModelKind, SchemeSpec};
use crate::error::{Error, Result};
use crate::features::{fit_normalizer, FeaturePanel, MinMax, NormalizerState};
use crate::models::gbt::{fit_gbt, BoostedEnsemble};
use crate::models::linear::{
    fit_lasso, fit_ols, fit_ridge, lasso_lambda_max, select_lambda, LambdaSelection, LassoOptions, LinearFit,
    OlsOptions, Penalty,
};
use crate::models::seqnet::{fit_seqnet, SeqData, SequenceNet};

/// Lambda used when plain least squares meets an exactly collinear design.
const OLS_RIDGE_FALLBACK: f64 = 1e-6;

/// Maps turnover to the model scale: `ln(max(turnover, floor))`, clipped to the
/// trailing window's range and scaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetTransform {
    pub floor: f64,
    pub scale: MinMax,
}

impl TargetTransform {
    pub fn log_turnover(&self, turnover: f64) -> f64 {
        turnover.max(self.floor).ln()
    }

    pub fn apply(&self, turnover: f64) -> f64 {
        self.scale.apply(self.log_turnover(turnover))
    }

    /// Back to log turnover.
    pub fn invert(&self, t: f64) -> f64 {
        self.scale.invert(t)
    }
}

#[derive(Debug, Clone)]
pub enum Fitted {
    Linear(LinearFit),
    Gbt(BoostedEnsemble),
    Seq(Box<SequenceNet>),
}

/// One fitted model for one design, plus everything needed to predict shares.
#[derive(Debug, Clone)]
pub struct GroupModel {
    pub label: String,
    pub names: Vec<String>,
    pub normalizer: NormalizerState,
    pub target: TargetTransform,
    pub fitted: Fitted,
    /// Retransformation factor `mean(exp(residual))` on the fitting rows.
    pub smear: f64,
    pub ridge_fallback_used: bool,
    pub lambda: Option<LambdaSelection>,
    /// Design rows held out for model selection.
    pub validation: Vec<usize>,
}

fn turnover(design: &Design, panel: &FeaturePanel, i: usize) -> Result<f64> {
    let r = design.rows[i];
    let stock = &panel.keys[r].stock;
    let shares = panel
        .outstanding_shares
        .get(stock)
        .copied()
        .filter(|s| *s > 0.0)
        .ok_or_else(|| Error::InvalidInput(format!("no outstanding shares for {stock}")))?;
    Ok(panel.target[r] / shares)
}

fn shares_of(design: &Design, panel: &FeaturePanel, i: usize) -> f64 {
    panel.outstanding_shares[&panel.keys[design.rows[i]].stock]
}

fn matrix(design: &Design, idx: &[usize], norm: &NormalizerState) -> DMatrix<f64> {
    let p = design.names.len();
    let mut m = DMatrix::zeros(idx.len(), p);
    let mut buf = vec![0.0; p];
    for (a, &i) in idx.iter().enumerate() {
        norm.apply_row(&design.x[i], &mut buf);
        for (j, v) in buf.iter().enumerate() {
            m[(a, j)] = *v;
        }
    }
    m
}

/// Lookback windows ending at each of `idx`, within the row's stock and left-padded
/// with the stock's earliest row.
pub(crate) fn windows(design: &Design, panel: &FeaturePanel, idx: &[usize], norm: &NormalizerState, window: usize) -> SeqData {
    let p = design.names.len();
    let mut data = SeqData::new(window, p);
    let mut flat = vec![0.0; window * p];
    for &i in idx {
        let stock = &panel.keys[design.rows[i]].stock;
        let mut first = i;
        while first > 0 && &panel.keys[design.rows[first - 1]].stock == stock && i - (first - 1) < window {
            first -= 1;
        }
        for step in 0..window {
            let back = window - 1 - step;
            let src = if i - first >= back { i - back } else { first };
            norm.apply_row(&design.x[src], &mut flat[step * p..(step + 1) * p]);
        }
        data.push(&flat, 0.0);
    }
    data
}

impl GroupModel {
    /// Model-scale predictions for design rows `idx`.
    pub fn predict_scaled(&self, design: &Design, panel: &FeaturePanel, idx: &[usize]) -> Result<Vec<f64>> {
        match &self.fitted {
            Fitted::Linear(f) => f.predict(&matrix(design, idx, &self.normalizer)),
            Fitted::Gbt(g) => g.predict(&matrix(design, idx, &self.normalizer)),
            Fitted::Seq(net) => {
                let data = windows(design, panel, idx, &self.normalizer, net.config.window);
                net.predict(&data)
            }
        }
    }

    /// Predicted bin volume in shares for design rows `idx`.
    pub fn predict_shares(&self, design: &Design, panel: &FeaturePanel, idx: &[usize]) -> Result<Vec<f64>> {
        let t = self.predict_scaled(design, panel, idx)?;
        Ok(idx
            .iter()
            .zip(t)
            .map(|(&i, t)| (self.target.invert(t).exp() * self.smear) * shares_of(design, panel, i))
            .collect())
    }
}

fn days_of(design: &Design, panel: &FeaturePanel, idx: &[usize]) -> BTreeSet<NaiveDate> {
    idx.iter().map(|&i| panel.keys[design.rows[i]].day).collect()
}

fn fit_transforms(
    design: &Design,
    panel: &FeaturePanel,
    idx: &[usize],
    clip_window_days: usize,
) -> Result<(NormalizerState, TargetTransform)> {
    let turn: Vec<f64> = idx.iter().map(|&i| turnover(design, panel, i)).collect::<Result<_>>()?;
    let floor = turn
        .iter()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(Error::InvalidInput(format!("{}: no positive volume in the fitting rows", design.label)));
    }
    let days = days_of(design, panel, idx);
    let recent: BTreeSet<NaiveDate> = days.iter().rev().take(clip_window_days.max(1)).copied().collect();
    let window: Vec<f64> = idx
        .iter()
        .zip(&turn)
        .filter(|(&i, _)| recent.contains(&panel.keys[design.rows[i]].day))
        .map(|(_, t)| t.max(floor).ln())
        .collect();
    let columns: Vec<Vec<f64>> = (0..design.names.len())
        .map(|j| idx.iter().map(|&i| design.x[i][j]).collect())
        .collect();
    let norm = fit_normalizer(&columns, &window)?;
    let target = TargetTransform {
        floor,
        scale: norm.target,
    };
    Ok((norm, target))
}

fn scaled_targets(design: &Design, panel: &FeaturePanel, idx: &[usize], t: &TargetTransform) -> Result<Vec<f64>> {
    idx.iter().map(|&i| Ok(t.apply(turnover(design, panel, i)?))).collect()
}

/// Fit one design. Linear and tree models are fitted on `train` plus `validation`;
/// penalized models first pick lambda on `validation` with a normalizer fitted on
/// `train` alone. The sequence network trains on `train` and stops early on
/// `validation`.
pub fn fit_group(
    spec: &SchemeSpec,
    design: &Design,
    panel: &FeaturePanel,
    train: &[usize],
    validation: &[usize],
) -> Result<GroupModel> {
    if train.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no training rows", design.label)));
    }
    let clip = spec.params.clip_window_days;
    let all: Vec<usize> = train.iter().chain(validation).copied().collect();
    let names = &design.names;
    let mut lambda = None;
    let mut ridge_fallback_used = false;

    let (normalizer, target, fitted, fit_rows) = match spec.model {
        ModelKind::Cmem => return Err(Error::InvalidInput("the component model is not fitted here".into())),
        ModelKind::Ols | ModelKind::Gbt => {
            let (norm, tt) = fit_transforms(design, panel, &all, clip)?;
            let x = matrix(design, &all, &norm);
            let y = scaled_targets(design, panel, &all, &tt)?;
            let fitted = if spec.model == ModelKind::Ols {
                let f = fit_ols(&x, &y, names, &OlsOptions { ridge_fallback: Some(OLS_RIDGE_FALLBACK) })?;
                ridge_fallback_used = f.penalty == Penalty::L2;
                Fitted::Linear(f)
            } else {
                Fitted::Gbt(fit_gbt(&x, &y, &spec.params.gbt)?)
            };
            (norm, tt, fitted, all.clone())
        }
        ModelKind::Lasso | ModelKind::Ridge => {
            if validation.is_empty() {
                return Err(Error::Config("penalized models need validation days to pick lambda".into()));
            }
            let (norm, tt) = fit_transforms(design, panel, train, clip)?;
            let xt = matrix(design, train, &norm);
            let yt = scaled_targets(design, panel, train, &tt)?;
            let xv = matrix(design, validation, &norm);
            let yv = scaled_targets(design, panel, validation, &tt)?;
            let (penalty, grid) = if spec.model == ModelKind::Lasso {
                let max = lasso_lambda_max(&xt, &yt);
                (Penalty::L1, spec.params.lasso_grid.iter().map(|f| f * max).collect::<Vec<_>>())
            } else {
                (Penalty::L2, spec.params.ridge_grid.clone())
            };
            let sel = select_lambda(penalty, &grid, (&xt, &yt), (&xv, &yv), names)?;
            let (norm, tt) = fit_transforms(design, panel, &all, clip)?;
            let x = matrix(design, &all, &norm);
            let y = scaled_targets(design, panel, &all, &tt)?;
            let f = if penalty == Penalty::L1 {
                fit_lasso(&x, &y, names, sel.lambda, &LassoOptions::default())?
            } else {
                fit_ridge(&x, &y, names, sel.lambda)?
            };
            lambda = Some(sel);
            (norm, tt, Fitted::Linear(f), all.clone())
        }
        ModelKind::Seqnet => {
            let mut cfg = spec.params.seqnet.clone();
            cfg.seed = spec.seed;
            let (norm, tt) = fit_transforms(design, panel, train, clip)?;
            let mut tr = windows(design, panel, train, &norm, cfg.window);
            tr.targets = scaled_targets(design, panel, train, &tt)?;
            let va = if validation.is_empty() {
                None
            } else {
                let mut v = windows(design, panel, validation, &norm, cfg.window);
                v.targets = scaled_targets(design, panel, validation, &tt)?;
                Some(v)
            };
            let net = fit_seqnet(&tr, va.as_ref(), &cfg)?;
            (norm, tt, Fitted::Seq(Box::new(net)), train.to_vec())
        }
    };

    let mut model = GroupModel {
        label: design.label.clone(),
        names: names.clone(),
        normalizer,
        target,
        fitted,
        smear: 1.0,
        ridge_fallback_used,
        lambda,
        validation: validation.to_vec(),
    };
    let pred = model.predict_scaled(design, panel, &fit_rows)?;
    let mut acc = 0.0;
    for (&i, p) in fit_rows.iter().zip(&pred) {
        let z = model.target.log_turnover(turnover(design, panel, i)?);
        acc += (z - model.target.invert(*p)).exp();
    }
    let smear = acc / fit_rows.len() as f64;
    if !smear.is_finite() || smear <= 0.0 {
        return Err(Error::Numerical(format!("{}: retransformation factor is {smear}", design.label)));
    }
    model.smear = smear;
    Ok(model)
}
