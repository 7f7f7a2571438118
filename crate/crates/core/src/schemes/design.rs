use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;

use super::{ModelKind, Recipe, Scheme, SchemeSpec};
use crate::clustering::{ClusterModel, CorrelationBasis};
use crate::cmem::CMEM_FEATURES;
use crate::error::{Error, Result};
use crate::features::{FeaturePanel, Provenance};

/// Model-ready rows for one fitted model (one stock, one cluster, or the universe).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub label: String,
    pub stocks: Vec<String>,
    /// Panel row of each design row, in panel order.
    pub rows: Vec<usize>,
    pub names: Vec<String>,
    /// One entry per design row, transformed (log, calendar encoding) but not scaled.
    pub x: Vec<Vec<f64>>,
}

const CALENDAR: [&str; 2] = ["timeHMs", "intrIn"];

/// Panel columns used by `recipe`, in panel order within each family.
pub fn feature_columns(panel: &FeaturePanel, recipe: Recipe, with_ofi: bool) -> Result<Vec<String>> {
    let cmem = || -> Result<Vec<String>> {
        let missing: Vec<&str> = CMEM_FEATURES.iter().copied().filter(|n| panel.column(n).is_none()).collect();
        if !missing.is_empty() {
            return Err(Error::InvalidInput(format!(
                "panel lacks component columns {missing:?}; featurize with components enabled"
            )));
        }
        Ok(CMEM_FEATURES.iter().map(|s| s.to_string()).collect())
    };
    let mut names = match recipe {
        Recipe::CmemComponents => cmem()?,
        Recipe::Auxiliary => panel.auxiliary_names(),
        Recipe::Both => {
            let mut v = panel.auxiliary_names();
            v.extend(cmem()?);
            v
        }
    };
    if with_ofi {
        let ofi = panel.names_where(|p| matches!(p, Provenance::Ofi));
        if ofi.is_empty() {
            return Err(Error::InvalidInput("panel lacks OFI columns; featurize with OFI enabled".into()));
        }
        names.extend(ofi);
    }
    Ok(names)
}

struct Source<'a> {
    name: &'a str,
    values: &'a [f64],
    log: bool,
}

/// Log columns become `ln(1 + x) - ln(outstanding shares)`, which puts stocks of
/// different size on one scale. For a single stock it is a constant shift.
fn transform(v: f64, log: bool, ln_shares: f64) -> f64 {
    if log {
        v.max(0.0).ln_1p() - ln_shares
    } else {
        v
    }
}

fn ln_shares(panel: &FeaturePanel, stock: &str) -> Result<f64> {
    panel
        .outstanding_shares
        .get(stock)
        .copied()
        .filter(|s| *s > 0.0)
        .map(f64::ln)
        .ok_or_else(|| Error::InvalidInput(format!("no outstanding shares for {stock}")))
}

/// Group the panel's rows into designs for `spec.scheme`. Pooled and clustered designs
/// stack rows across stocks; clustered rows also carry the cluster mean (over members
/// present at the same day and bin) of every transformed non-calendar predictor,
/// named `cm_<name>`.
/// Linear models see `timeHMs` as bin dummies (the first bin is the baseline) and drop
/// `intrIn`, which those dummies span.
pub fn assemble_design(spec: &SchemeSpec, panel: &FeaturePanel, clusters: Option<&ClusterModel>) -> Result<Vec<Design>> {
    if spec.model == ModelKind::Cmem {
        return Err(Error::InvalidInput("the component model needs no design".into()));
    }
    let names = feature_columns(panel, spec.recipe, spec.params.with_ofi)?;
    let sources: Vec<Source> = names
        .iter()
        .map(|n| {
            let c = panel.column(n).expect("checked by feature_columns");
            Source {
                name: &c.name,
                values: &c.values,
                log: c.log,
            }
        })
        .collect();
    let linear = spec.model.is_linear();
    let time_levels: Vec<f64> = match panel.column("timeHMs") {
        Some(c) if linear && names.iter().any(|n| n == "timeHMs") => {
            let mut v = c.values.clone();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
        _ => Vec::new(),
    };

    // Encoded own-row columns.
    let mut base_names = Vec::new();
    for s in &sources {
        match s.name {
            "timeHMs" if linear => base_names.extend(time_levels.iter().skip(1).map(|t| format!("timeHMs_{t}"))),
            "intrIn" if linear => {}
            n => base_names.push(n.to_string()),
        }
    }
    let augmented: Vec<usize> = (0..sources.len()).filter(|&j| !CALENDAR.contains(&sources[j].name)).collect();
    let encode = |r: usize, ls: f64, out: &mut Vec<f64>| {
        for s in &sources {
            let v = s.values[r];
            match s.name {
                "timeHMs" if linear => out.extend(time_levels.iter().skip(1).map(|t| f64::from(u8::from(v == *t)))),
                "intrIn" if linear => {}
                _ => out.push(transform(v, s.log, ls)),
            }
        }
    };
    let mut shift: BTreeMap<&str, f64> = BTreeMap::new();
    for k in &panel.keys {
        if !shift.contains_key(k.stock.as_str()) {
            shift.insert(k.stock.as_str(), ln_shares(panel, &k.stock)?);
        }
    }

    let mut by_stock: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (r, k) in panel.keys.iter().enumerate() {
        by_stock.entry(k.stock.as_str()).or_default().push(r);
    }
    let groups: Vec<(String, Vec<String>)> = match spec.scheme {
        Scheme::Sam => by_stock.keys().map(|s| (s.to_string(), vec![s.to_string()])).collect(),
        Scheme::Uam => vec![("universe".into(), by_stock.keys().map(|s| s.to_string()).collect())],
        Scheme::Cam => {
            let cm = clusters.ok_or_else(|| Error::Config("the clustered scheme needs a cluster model".into()))?;
            let mut members: BTreeMap<usize, Vec<String>> = BTreeMap::new();
            for s in by_stock.keys() {
                let c = cm
                    .cluster_of(s)
                    .ok_or_else(|| Error::InvalidInput(format!("stock {s} has no cluster assignment")))?;
                members.entry(c).or_default().push(s.to_string());
            }
            members.into_iter().map(|(c, m)| (format!("cluster_{c}"), m)).collect()
        }
    };
    let all_stocks: Vec<String> = by_stock.keys().map(|s| s.to_string()).collect();

    let mut designs = Vec::with_capacity(groups.len());
    for (label, members) in groups {
        let rows: Vec<usize> = members.iter().flat_map(|s| by_stock[s.as_str()].iter().copied()).collect();
        let mut names = base_names.clone();
        let means: HashMap<(NaiveDate, usize), Vec<f64>> = if spec.scheme == Scheme::Cam {
            names.extend(augmented.iter().map(|&j| format!("cm_{}", sources[j].name)));
            let mut acc: HashMap<(NaiveDate, usize), (Vec<f64>, usize)> = HashMap::new();
            for &r in &rows {
                let k = &panel.keys[r];
                let ls = shift[k.stock.as_str()];
                let e = acc.entry((k.day, k.bin)).or_insert_with(|| (vec![0.0; augmented.len()], 0));
                for (a, &j) in e.0.iter_mut().zip(&augmented) {
                    *a += transform(sources[j].values[r], sources[j].log, ls);
                }
                e.1 += 1;
            }
            acc.into_iter()
                .map(|(key, (sum, n))| (key, sum.into_iter().map(|v| v / n as f64).collect()))
                .collect()
        } else {
            HashMap::new()
        };
        let dummies = spec.scheme == Scheme::Uam && spec.params.stock_dummies;
        if dummies {
            names.extend(all_stocks.iter().skip(1).map(|s| format!("stock_{s}")));
        }
        let x = rows
            .iter()
            .map(|&r| {
                let mut v = Vec::with_capacity(names.len());
                let k = &panel.keys[r];
                encode(r, shift[k.stock.as_str()], &mut v);
                if spec.scheme == Scheme::Cam {
                    v.extend_from_slice(&means[&(k.day, k.bin)]);
                }
                if dummies {
                    let s = &panel.keys[r].stock;
                    v.extend(all_stocks.iter().skip(1).map(|t| f64::from(u8::from(t == s))));
                }
                v
            })
            .collect();
        designs.push(Design {
            label,
            stocks: members,
            rows,
            names,
            x,
        });
    }
    Ok(designs)
}

/// Per-stock series over the `window_days` panel days before `end` for clustering.
/// The volume basis uses bin volumes; the feature basis concatenates every
/// non-calendar auxiliary column, log-transformed where flagged and standardized
/// over the window across all stocks.
pub fn cluster_series(
    panel: &FeaturePanel,
    basis: CorrelationBasis,
    end: NaiveDate,
    window_days: usize,
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let days: Vec<NaiveDate> = panel.days().into_iter().filter(|d| *d < end).collect();
    if days.len() < window_days || window_days == 0 {
        return Err(Error::InvalidInput(format!(
            "clustering needs {window_days} days before {end}, panel has {}",
            days.len()
        )));
    }
    let window = &days[days.len() - window_days..];
    let (first, last) = (window[0], window[window.len() - 1]);
    let stocks = panel.stocks();
    let mut rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (r, k) in panel.keys.iter().enumerate() {
        if k.day >= first && k.day <= last {
            rows.entry(k.stock.as_str()).or_default().push(r);
        }
    }
    let expected = rows.values().map(Vec::len).max().unwrap_or(0);
    for s in &stocks {
        let n = rows.get(s.as_str()).map_or(0, Vec::len);
        if n != expected || n == 0 {
            return Err(Error::InvalidInput(format!(
                "stock {s} has {n} rows in the clustering window, expected {expected}"
            )));
        }
    }
    let series = match basis {
        CorrelationBasis::Volume => stocks
            .iter()
            .map(|s| rows[s.as_str()].iter().map(|&r| panel.target[r]).collect())
            .collect(),
        CorrelationBasis::Features => {
            let cols: Vec<_> = panel
                .auxiliary_names()
                .into_iter()
                .filter(|n| !CALENDAR.contains(&n.as_str()))
                .map(|n| panel.column(&n).expect("listed by the panel"))
                .collect();
            let shift: Vec<f64> = stocks.iter().map(|s| ln_shares(panel, s)).collect::<Result<_>>()?;
            let all: Vec<(usize, f64)> = stocks
                .iter()
                .zip(&shift)
                .flat_map(|(s, ls)| rows[s.as_str()].iter().map(move |&r| (r, *ls)))
                .collect();
            let scales: Vec<(f64, f64)> = cols
                .iter()
                .map(|c| {
                    let v: Vec<f64> = all.iter().map(|&(r, ls)| transform(c.values[r], c.log, ls)).collect();
                    let sd = crate::stats::std_pop(&v);
                    (crate::stats::mean(&v), if sd > 0.0 { sd } else { 1.0 })
                })
                .collect();
            stocks
                .iter()
                .zip(&shift)
                .map(|(s, &ls)| {
                    cols.iter()
                        .zip(&scales)
                        .flat_map(|(c, (m, sd))| {
                            rows[s.as_str()].iter().map(move |&r| (transform(c.values[r], c.log, ls) - m) / sd)
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok((stocks, series))
}
