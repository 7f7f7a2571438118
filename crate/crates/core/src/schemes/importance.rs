use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::fit::{windows, Fitted, GroupModel};
use super::SchemeSpec;
use crate::error::{Error, Result};
use crate::features::FeaturePanel;
use crate::models::seqnet::{SeqData, SequenceNet};
use crate::stats::r_squared;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub method: String,
    /// Features with a nonzero score, best first; ties are ordered by name.
    pub ranking: Vec<(String, f64)>,
}

fn scores(spec: &SchemeSpec, design: &Design, model: &GroupModel, panel: &FeaturePanel) -> Result<(String, Vec<f64>)> {
    Ok(match &model.fitted {
        Fitted::Linear(f) => {
            let std: Vec<f64> = f.standardized_coefficients().iter().map(|c| c.abs()).collect();
            match (&f.diagnostics.t_values, model.lambda.is_none() && !model.ridge_fallback_used) {
                (Some(t), true) => ("abs_t_value".into(), t.iter().map(|v| if v.is_finite() { v.abs() } else { 0.0 }).collect()),
                _ => ("abs_standardized_coefficient".into(), std),
            }
        }
        Fitted::Gbt(g) => ("split_count".into(), g.split_counts().iter().map(|&c| c as f64).collect()),
        Fitted::Seq(net) => ("permutation_r2_drop".into(), permutation_drop(spec, design, model, net, panel)?),
    })
}

/// Mean drop in validation R^2 (model scale) when one feature's history is
/// shuffled across samples, over `permutation_rounds` shuffles.
fn permutation_drop(
    spec: &SchemeSpec,
    design: &Design,
    model: &GroupModel,
    net: &SequenceNet,
    panel: &FeaturePanel,
) -> Result<Vec<f64>> {
    let idx = &model.validation;
    let p = design.names.len();
    if idx.len() < 2 {
        return Err(Error::InvalidInput(format!("{}: permutation importance needs validation rows", design.label)));
    }
    let data = windows(design, panel, idx, &model.normalizer, net.config.window);
    let actual: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let r = design.rows[i];
            let shares = panel.outstanding_shares[&panel.keys[r].stock];
            model.target.apply(panel.target[r] / shares)
        })
        .collect();
    let base = r_squared(&actual, &net.predict(&data)?).unwrap_or(0.0);
    let w = net.config.window;
    let mut out = Vec::with_capacity(p);
    for f in 0..p {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(f as u64);
        let mut drop = 0.0;
        for _ in 0..spec.params.permutation_rounds.max(1) {
            let mut perm: Vec<usize> = (0..data.len()).collect();
            perm.shuffle(&mut rng);
            let mut shuffled = SeqData::new(w, p);
            let mut buf = vec![0.0; w * p];
            for (s, &src) in perm.iter().enumerate() {
                buf.copy_from_slice(data.sample(s));
                let other = data.sample(src);
                for step in 0..w {
                    buf[step * p + f] = other[step * p + f];
                }
                shuffled.push(&buf, 0.0);
            }
            drop += base - r_squared(&actual, &net.predict(&shuffled)?).unwrap_or(0.0);
        }
        out.push(drop / spec.params.permutation_rounds.max(1) as f64);
    }
    Ok(out)
}

/// Per-feature scores averaged across the fitted models (a feature missing from a
/// model counts as 0). Linear models use |t| (plain least squares) or the absolute
/// standardized coefficient, trees count splits and the sequence network uses
/// permutation R^2 drop.
pub fn feature_importance(
    spec: &SchemeSpec,
    designs: &[Design],
    models: &[GroupModel],
    panel: &FeaturePanel,
) -> Result<FeatureImportance> {
    if models.is_empty() {
        return Ok(FeatureImportance {
            method: "none".into(),
            ranking: Vec::new(),
        });
    }
    let mut totals: BTreeMap<String, f64> = BTreeMap::new();
    let mut method = String::new();
    for (d, m) in designs.iter().zip(models) {
        let (name, s) = scores(spec, d, m, panel)?;
        if !method.is_empty() && method != name {
            method = "mixed".into();
        } else {
            method = name;
        }
        for (n, v) in d.names.iter().zip(s) {
            *totals.entry(n.clone()).or_default() += v;
        }
    }
    let k = models.len() as f64;
    let mut ranking: Vec<(String, f64)> = totals
        .into_iter()
        .map(|(n, v)| (n, v / k))
        .filter(|(_, v)| *v != 0.0)
        .collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(FeatureImportance { method, ranking })
}
