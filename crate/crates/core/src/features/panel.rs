use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::compound::{compound_anchored, BasicPredictor, CompoundOp};
use crate::calendar::{assign_interval, ForecastMode, IntervalConfig, IntradayInterval, BINS_PER_DAY};
use crate::error::{Error, Result};
use crate::lob::BinRecord;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub stock: String,
    pub day: NaiveDate,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Calendar,
    Basic { base: String },
    Compound { op: String, base: String },
    Cmem,
    Ofi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub provenance: Provenance,
    /// Whether models see `ln(1 + x)` of this column.
    pub log: bool,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub mode: ForecastMode,
    pub intervals: IntervalConfig,
    pub past_windows: Vec<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            mode: ForecastMode::Dynamic,
            intervals: IntervalConfig::default(),
            past_windows: vec![2, 8],
        }
    }
}

/// Design panel over (stock, day, bin) rows sorted by stock, then day, then bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    pub mode: ForecastMode,
    pub keys: Vec<RowKey>,
    pub columns: Vec<Column>,
    /// Realized bin volume in shares.
    pub target: Vec<f64>,
    pub outstanding_shares: BTreeMap<String, f64>,
    /// Rows excluded for lack of history.
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestColumn {
    pub name: String,
    pub provenance: Provenance,
    pub log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: ForecastMode,
    pub n_rows: usize,
    pub dropped_rows: usize,
    pub target: String,
    pub columns: Vec<ManifestColumn>,
    pub outstanding_shares: BTreeMap<String, f64>,
}

impl FeaturePanel {
    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn add_column(&mut self, name: &str, provenance: Provenance, log: bool, values: Vec<f64>) -> Result<()> {
        if self.column(name).is_some() {
            return Err(Error::InvalidInput(format!("duplicate column `{name}`")));
        }
        if values.len() != self.n_rows() {
            return Err(Error::InvalidInput(format!(
                "column `{name}` has {} values for {} rows",
                values.len(),
                self.n_rows()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("column `{name}` has a non-finite value at row {bad}")));
        }
        self.columns.push(Column {
            name: name.to_string(),
            provenance,
            log,
            values,
        });
        Ok(())
    }

    /// Keep rows where `keep` is true; removed rows are added to `dropped_rows`.
    pub fn retain_rows(&mut self, keep: &[bool]) -> Result<()> {
        if keep.len() != self.n_rows() {
            return Err(Error::InvalidInput(format!("mask has {} entries for {} rows", keep.len(), self.n_rows())));
        }
        let pick = |v: &mut Vec<f64>| {
            let mut i = 0;
            v.retain(|_| {
                i += 1;
                keep[i - 1]
            });
        };
        for c in &mut self.columns {
            pick(&mut c.values);
        }
        pick(&mut self.target);
        let mut i = 0;
        self.keys.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        self.dropped_rows += keep.iter().filter(|k| !**k).count();
        Ok(())
    }

    /// Names of the calendar, basic and compound columns.
    pub fn auxiliary_names(&self) -> Vec<String> {
        self.names_where(|p| matches!(p, Provenance::Calendar | Provenance::Basic { .. } | Provenance::Compound { .. }))
    }

    pub fn names_where(&self, pred: impl Fn(&Provenance) -> bool) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| pred(&c.provenance))
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn stocks(&self) -> Vec<String> {
        self.outstanding_shares.keys().cloned().collect()
    }

    pub fn days(&self) -> Vec<NaiveDate> {
        let mut d: Vec<NaiveDate> = self.keys.iter().map(|k| k.day).collect();
        d.sort();
        d.dedup();
        d
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            mode: self.mode,
            n_rows: self.n_rows(),
            dropped_rows: self.dropped_rows,
            target: "volume".into(),
            columns: self
                .columns
                .iter()
                .map(|c| ManifestColumn {
                    name: c.name.clone(),
                    provenance: c.provenance.clone(),
                    log: c.log,
                })
                .collect(),
            outstanding_shares: self.outstanding_shares.clone(),
        }
    }
}

/// Group records per stock into contiguous, complete days.
pub(crate) fn group_by_stock(records: &[BinRecord]) -> Result<BTreeMap<String, Vec<&BinRecord>>> {
    let mut by_stock: BTreeMap<String, Vec<&BinRecord>> = BTreeMap::new();
    for r in records {
        by_stock.entry(r.stock.clone()).or_default().push(r);
    }
    for (stock, rows) in by_stock.iter_mut() {
        rows.sort_by_key(|r| (r.day, r.bin_index));
        if rows.len() % BINS_PER_DAY != 0 {
            return Err(Error::InvalidInput(format!("{stock}: bin count {} is not a whole number of days", rows.len())));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.bin_index != i % BINS_PER_DAY || r.day != rows[i - i % BINS_PER_DAY].day {
                return Err(Error::InvalidInput(format!(
                    "{stock}: day {} is missing bins or has duplicates",
                    r.day
                )));
            }
        }
    }
    Ok(by_stock)
}

/// Build the auxiliary predictor panel (calendar, lagged basics and compounds).
///
/// In dynamic mode, bin j of a day sees everything up to bin j-1. In static mode
/// every bin of a day sees only data up to the previous close.
pub fn build_panel(
    records: &[BinRecord],
    outstanding_shares: &BTreeMap<String, f64>,
    config: &FeatureConfig,
) -> Result<FeaturePanel> {
    let by_stock = group_by_stock(records)?;
    let intervals: Vec<IntradayInterval> = (0..BINS_PER_DAY).map(|j| assign_interval(j, &config.intervals)).collect();
    let ops: Vec<CompoundOp> = [CompoundOp::Daily, CompoundOp::Intraday]
        .into_iter()
        .chain(config.past_windows.iter().map(|&k| CompoundOp::Past(k)))
        .collect();

    let mut names: Vec<(String, Provenance, bool)> = vec![
        ("timeHMs".into(), Provenance::Calendar, false),
        ("intrIn".into(), Provenance::Calendar, false),
    ];
    for b in BasicPredictor::ALL {
        names.push((b.name().into(), Provenance::Basic { base: b.name().into() }, true));
        for op in &ops {
            let op_name = match op {
                CompoundOp::Daily => "daily".to_string(),
                CompoundOp::Intraday => "intraday".to_string(),
                CompoundOp::Past(k) => format!("past_{k}"),
            };
            names.push((op.column_name(b), Provenance::Compound { op: op_name, base: b.name().into() }, true));
        }
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut keys = Vec::new();
    let mut target = Vec::new();
    let mut dropped = 0;
    let mut outstanding = BTreeMap::new();

    for (stock, rows) in &by_stock {
        let shares = *outstanding_shares
            .get(stock)
            .ok_or_else(|| Error::InvalidInput(format!("no outstanding shares for {stock}")))?;
        outstanding.insert(stock.clone(), shares);
        let n = rows.len();
        let anchors: Vec<usize> = (0..n)
            .map(|r| match config.mode {
                ForecastMode::Dynamic => r,
                ForecastMode::Static => r - r % BINS_PER_DAY,
            })
            .collect();
        let mut stock_cols: Vec<Vec<Option<f64>>> = Vec::with_capacity(names.len());
        stock_cols.push(rows.iter().map(|r| Some(r.time_hms as f64)).collect());
        stock_cols.push(rows.iter().map(|r| Some(r.intr_in.code() as f64)).collect());
        for b in BasicPredictor::ALL {
            let series: Vec<f64> = rows.iter().map(|r| b.value(r)).collect();
            stock_cols.push(anchors.iter().map(|&a| a.checked_sub(1).map(|i| series[i])).collect());
            for op in &ops {
                stock_cols.push(compound_anchored(&series, &intervals, BINS_PER_DAY, *op, &anchors));
            }
        }
        for r in 0..n {
            if stock_cols.iter().any(|c| c[r].is_none()) {
                dropped += 1;
                continue;
            }
            for (dst, src) in cols.iter_mut().zip(&stock_cols) {
                dst.push(src[r].expect("checked"));
            }
            keys.push(RowKey {
                stock: stock.clone(),
                day: rows[r].day,
                bin: rows[r].bin_index,
            });
            target.push(rows[r].volume as f64);
        }
    }
    Ok(FeaturePanel {
        mode: config.mode,
        keys,
        columns: names
            .into_iter()
            .zip(cols)
            .map(|((name, provenance, log), values)| Column {
                name,
                provenance,
                log,
                values,
            })
            .collect(),
        target,
        outstanding_shares: outstanding,
        dropped_rows: dropped,
    })
}

/// Write `features.csv` and `manifest.json` into `dir`.
pub fn write_panel(panel: &FeaturePanel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("features.csv"))?;
    let mut header = vec!["stock".to_string(), "day".into(), "bin".into()];
    header.extend(panel.columns.iter().map(|c| c.name.clone()));
    header.push("volume".into());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for (i, k) in panel.keys.iter().enumerate() {
        rec.clear();
        rec.push(k.stock.clone());
        rec.push(k.day.to_string());
        rec.push(k.bin.to_string());
        rec.extend(panel.columns.iter().map(|c| c.values[i].to_string()));
        rec.push(panel.target[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let manifest = serde_json::to_string_pretty(&panel.manifest())?;
    std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
    Ok(())
}

pub fn read_panel(dir: &Path) -> Result<FeaturePanel> {
    let csv_path = dir.join("features.csv");
    let manifest_path = dir.join("manifest.json");
    for p in [&csv_path, &manifest_path] {
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p.clone(),
                hint: "run `featurize` first".into(),
            });
        }
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    let mut rdr = csv::Reader::from_path(&csv_path)?;
    let n_cols = manifest.columns.len();
    let header = rdr.headers()?.clone();
    if header.len() != n_cols + 4 {
        return Err(Error::InvalidInput(format!(
            "{} has {} columns but the manifest lists {}",
            csv_path.display(),
            header.len(),
            n_cols
        )));
    }
    let mut keys = Vec::new();
    let mut target = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_cols];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse {
            path: csv_path.display().to_string(),
            line: i + 2,
            message: format!("bad {what}"),
        };
        keys.push(RowKey {
            stock: rec[0].to_string(),
            day: rec[1].parse().map_err(|_| bad("day"))?,
            bin: rec[2].parse().map_err(|_| bad("bin"))?,
        });
        for (j, col) in values.iter_mut().enumerate() {
            col.push(rec[3 + j].parse().map_err(|_| bad(&manifest.columns[j].name))?);
        }
        target.push(rec[3 + n_cols].parse().map_err(|_| bad("volume"))?);
    }
    Ok(FeaturePanel {
        mode: manifest.mode,
        keys,
        columns: manifest
            .columns
            .into_iter()
            .zip(values)
            .map(|(m, values)| Column {
                name: m.name,
                provenance: m.provenance,
                log: m.log,
                values,
            })
            .collect(),
        target,
        outstanding_shares: manifest.outstanding_shares,
        dropped_rows: manifest.dropped_rows,
    })
}
