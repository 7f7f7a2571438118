//! File-based pipeline: synth -> ingest -> featurize -> train-eval -> backtest-vwap /
//! simulate-fills. Every command reads the artifacts of the previous ones from the
//! output directory and stamps its outputs with the config hash.

mod config;
mod execution;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ExperimentMatrix, FeatureSettings, RunConfig};
pub use execution::{
    advantages, backtest, build_schedules, day_schedule, forecast_days, simulate_day, AdvantageRow,
    AdvantageSummary, BinIndex, FillSession, ORACLE,
};

use crate::calendar::{ForecastMode, TradingCalendar};
use crate::cmem::join_components;
use crate::error::{Error, Result};
use crate::features::{build_panel, read_panel, write_panel, FeatureConfig};
use crate::lob::{bin_events, parse_messages, read_bins, write_bins, write_messages, BinRecord};
use crate::ofi::{day_ofi, join_ofi, OfiCounters, OfiRow};
use crate::schemes::{rolling_evaluate, write_comparison_csv, EvaluationReport, ModelKind, Prediction, Recipe, Scheme, SchemeSpec};
use crate::synth::{generate_events, generate_volume_panel};
use crate::vwap::VwapReport;

/// Paths of every artifact under one output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn synth_messages(&self) -> PathBuf {
        self.root.join("data").join("messages")
    }
    pub fn synth_shares(&self) -> PathBuf {
        self.root.join("data").join("shares.csv")
    }
    pub fn synth_volumes(&self) -> PathBuf {
        self.root.join("data").join("volumes.csv")
    }
    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("data").join("ground_truth.json")
    }
    pub fn bins(&self) -> PathBuf {
        self.root.join("bins").join("bins.csv")
    }
    pub fn shares(&self) -> PathBuf {
        self.root.join("bins").join("shares.csv")
    }
    pub fn sources(&self) -> PathBuf {
        self.root.join("bins").join("sources.csv")
    }
    pub fn features(&self, mode: ForecastMode) -> PathBuf {
        self.root.join("features").join(mode.as_str())
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }
    pub fn vwap(&self) -> PathBuf {
        self.root.join("vwap")
    }
    pub fn fills(&self) -> PathBuf {
        self.root.join("fills")
    }
}

fn require(path: &Path, command: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: format!("run `{command}` first"),
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, command: &str) -> Result<T> {
    require(path, command)?;
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, command: &str) -> Result<Vec<T>> {
    require(path, command)?;
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Echo the config next to the artifacts so the run can be replayed from it.
fn write_echo(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    std::fs::create_dir_all(&ws.root)?;
    std::fs::write(ws.root.join("run_config.json"), cfg.echo() + "\n")?;
    std::fs::write(ws.root.join("config.sha256"), cfg.hash() + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ShareRow {
    stock: String,
    outstanding_shares: f64,
}

fn read_shares(path: &Path, command: &str) -> Result<BTreeMap<String, f64>> {
    Ok(read_rows::<ShareRow>(path, command)?
        .into_iter()
        .map(|r| (r.stock, r.outstanding_shares))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub stock: String,
    pub day: NaiveDate,
    pub bin: usize,
    pub volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub config_hash: String,
    pub stocks: usize,
    pub days: usize,
    pub message_files: usize,
    pub events: usize,
}

/// LOBSTER-style file name for one stock and day.
pub fn message_file_name(stock: &str, day: NaiveDate) -> String {
    format!("{stock}_{day}_34200000_57600000_message_10.csv")
}

/// Generate the synthetic universe: message files, outstanding shares, the exact
/// generated bin volumes and the component ground truth.
pub fn cmd_synth(cfg: &RunConfig, ws: &Workspace) -> Result<SynthSummary> {
    cfg.validate()?;
    write_echo(cfg, ws)?;
    let sc = cfg.synth_config();
    let (panel, truth) = generate_volume_panel(&sc)?;
    let opens: Vec<f64> = truth.stocks.iter().map(|s| s.open_price).collect();
    let events = generate_events(&sc, &panel, &opens);
    let dir = ws.synth_messages();
    std::fs::create_dir_all(&dir)?;
    let jobs: Vec<(usize, usize)> = (0..panel.tickers.len())
        .flat_map(|s| (0..panel.days.len()).map(move |d| (s, d)))
        .collect();
    jobs.par_iter().try_for_each(|&(s, d)| -> Result<()> {
        let path = dir.join(message_file_name(&panel.tickers[s], panel.days[d]));
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_messages(&mut out, &events[s][d])
    })?;
    let shares: Vec<ShareRow> = panel
        .tickers
        .iter()
        .zip(&panel.outstanding_shares)
        .map(|(t, s)| ShareRow {
            stock: t.clone(),
            outstanding_shares: *s,
        })
        .collect();
    write_rows(&ws.synth_shares(), &shares)?;
    let mut vols = Vec::new();
    for (s, t) in panel.tickers.iter().enumerate() {
        for (d, day) in panel.days.iter().enumerate() {
            for (bin, v) in panel.volume[s][d].iter().enumerate() {
                vols.push(VolumeRow {
                    stock: t.clone(),
                    day: *day,
                    bin,
                    volume: *v,
                });
            }
        }
    }
    write_rows(&ws.synth_volumes(), &vols)?;
    write_json(&ws.ground_truth(), &truth)?;
    Ok(SynthSummary {
        config_hash: cfg.hash(),
        stocks: panel.tickers.len(),
        days: panel.days.len(),
        message_files: jobs.len(),
        events: events.iter().flatten().map(Vec::len).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub stock: String,
    pub day: NaiveDate,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub config_hash: String,
    pub files: usize,
    pub records: usize,
    /// Events outside the session window.
    pub dropped_events: usize,
}

/// `(ticker, day)` from a `<TICKER>_<YYYY-MM-DD>_..._message_....csv` name.
pub fn parse_message_file_name(name: &str) -> Option<(String, NaiveDate)> {
    if !name.ends_with(".csv") || !name.contains("_message") {
        return None;
    }
    let mut parts = name.split('_');
    let ticker = parts.next()?.to_string();
    let day = NaiveDate::parse_from_str(parts.next()?, "%Y-%m-%d").ok()?;
    Some((ticker, day))
}

/// Bin every message file of the universe and date range into `bins/bins.csv`.
pub fn cmd_ingest(cfg: &RunConfig, ws: &Workspace) -> Result<IngestSummary> {
    cfg.validate()?;
    write_echo(cfg, ws)?;
    let (dir, shares_path) = match (&cfg.data.messages_dir, &cfg.data.shares_file) {
        (Some(d), Some(s)) => (d.clone(), s.clone()),
        _ => (ws.synth_messages(), ws.synth_shares()),
    };
    require(&dir, "synth")?;
    let shares = read_shares(&shares_path, "synth")?;
    let universe: Option<BTreeSet<&str>> = cfg.universe.as_ref().map(|u| u.iter().map(String::as_str).collect());
    let mut sources = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let Some((stock, day)) = path.file_name().and_then(|n| n.to_str()).and_then(parse_message_file_name) else {
            continue;
        };
        let keep = universe.as_ref().is_none_or(|u| u.contains(stock.as_str()))
            && cfg.start_date.is_none_or(|s| day >= s)
            && cfg.end_date.is_none_or(|e| day <= e);
        if keep {
            sources.push(SourceRow { stock, day, path });
        }
    }
    sources.sort_by(|a, b| (&a.stock, a.day).cmp(&(&b.stock, b.day)));
    if sources.is_empty() {
        return Err(Error::InvalidInput(format!("no message files selected in {}", dir.display())));
    }
    for s in &sources {
        if !shares.contains_key(&s.stock) {
            return Err(Error::InvalidInput(format!(
                "{} has no outstanding shares in {}",
                s.stock,
                shares_path.display()
            )));
        }
    }
    let cal = TradingCalendar {
        intervals: cfg.features.intervals,
        ..TradingCalendar::default()
    };
    let binned = sources
        .par_iter()
        .map(|s| Ok(bin_events(&parse_messages(&s.path)?, s.day, &s.stock, &cal)))
        .collect::<Result<Vec<_>>>()?;
    let dropped = binned.iter().map(|b| b.dropped).sum();
    let records: Vec<BinRecord> = binned.into_iter().flat_map(|b| b.records).collect();
    let bins_path = ws.bins();
    std::fs::create_dir_all(bins_path.parent().expect("has parent"))?;
    write_bins(std::io::BufWriter::new(std::fs::File::create(&bins_path)?), &records)?;
    let used: BTreeSet<&str> = sources.iter().map(|s| s.stock.as_str()).collect();
    let share_rows: Vec<ShareRow> = shares
        .iter()
        .filter(|(s, _)| used.contains(s.as_str()))
        .map(|(s, v)| ShareRow {
            stock: s.clone(),
            outstanding_shares: *v,
        })
        .collect();
    write_rows(&ws.shares(), &share_rows)?;
    write_rows(&ws.sources(), &sources)?;
    let summary = IngestSummary {
        config_hash: cfg.hash(),
        files: sources.len(),
        records: records.len(),
        dropped_events: dropped,
    };
    write_json(&ws.root.join("bins").join("ingest.json"), &summary)?;
    Ok(summary)
}

fn load_bins(ws: &Workspace) -> Result<Vec<BinRecord>> {
    let p = ws.bins();
    require(&p, "ingest")?;
    read_bins(std::io::BufReader::new(std::fs::File::open(p)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeSummary {
    pub config_hash: String,
    pub mode: ForecastMode,
    pub rows: usize,
    pub columns: usize,
    pub dropped_rows: usize,
    pub ofi: Option<OfiCounters>,
}

/// Build one feature panel per forecast mode, with component and OFI columns when
/// enabled.
pub fn cmd_featurize(cfg: &RunConfig, ws: &Workspace) -> Result<Vec<FeaturizeSummary>> {
    cfg.validate()?;
    write_echo(cfg, ws)?;
    let records = load_bins(ws)?;
    let shares = read_shares(&ws.shares(), "ingest")?;
    let cal = TradingCalendar {
        intervals: cfg.features.intervals,
        ..TradingCalendar::default()
    };
    let ofi = if cfg.features.ofi {
        let sources: Vec<SourceRow> = read_rows(&ws.sources(), "ingest")?;
        let days = sources
            .par_iter()
            .map(|s| day_ofi(&parse_messages(&s.path)?, &s.stock, s.day, &cal))
            .collect::<Result<Vec<_>>>()?;
        let mut counters = OfiCounters::default();
        let mut rows: Vec<OfiRow> = Vec::new();
        for (r, c) in days {
            counters.missing_levels += c.missing_levels;
            counters.empty_windows += c.empty_windows;
            rows.extend(r);
        }
        Some((rows, counters))
    } else {
        None
    };
    let mut out = Vec::new();
    for &mode in &cfg.experiments.modes {
        let fc = FeatureConfig {
            mode,
            intervals: cfg.features.intervals,
            past_windows: cfg.features.past_windows.clone(),
        };
        let mut panel = build_panel(&records, &shares, &fc)?;
        if cfg.features.components {
            join_components(&mut panel, &cfg.features.component)?;
        }
        if let Some((rows, _)) = &ofi {
            join_ofi(&mut panel, rows)?;
        }
        let dir = ws.features(mode);
        write_panel(&panel, &dir)?;
        let summary = FeaturizeSummary {
            config_hash: cfg.hash(),
            mode,
            rows: panel.n_rows(),
            columns: panel.columns.len(),
            dropped_rows: panel.dropped_rows,
            ofi: ofi.as_ref().map(|(_, c)| c.clone()),
        };
        write_json(&dir.join("featurize.json"), &summary)?;
        out.push(summary);
    }
    Ok(out)
}

/// Every evaluation the config asks for, component baseline first.
pub fn experiment_specs(cfg: &RunConfig) -> Vec<SchemeSpec> {
    let m = &cfg.experiments;
    let mut specs = Vec::new();
    for &mode in &m.modes {
        let spec = |scheme, model, recipe| SchemeSpec {
            scheme,
            model,
            recipe,
            mode,
            split: m.split,
            params: m.params.clone(),
            seed: cfg.seed,
        };
        if m.include_cmem || m.models.contains(&ModelKind::Cmem) {
            specs.push(spec(Scheme::Sam, ModelKind::Cmem, Recipe::CmemComponents));
        }
        for &scheme in &m.schemes {
            for &model in m.models.iter().filter(|k| **k != ModelKind::Cmem) {
                for &recipe in &m.recipes {
                    specs.push(spec(scheme, model, recipe));
                }
            }
        }
    }
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub label: String,
    pub model: ModelKind,
    pub mode: ForecastMode,
    pub file: String,
}

/// Evaluate the scheme x model x recipe matrix on each mode's panel.
pub fn cmd_train_eval(cfg: &RunConfig, ws: &Workspace) -> Result<Vec<EvaluationReport>> {
    cfg.validate()?;
    write_echo(cfg, ws)?;
    let hash = cfg.hash();
    let mut panels = BTreeMap::new();
    for &mode in &cfg.experiments.modes {
        let dir = ws.features(mode);
        require(&dir.join("features.csv"), "featurize")?;
        panels.insert(mode.as_str(), read_panel(&dir)?);
    }
    let mut reports = Vec::new();
    let mut index = Vec::new();
    for spec in experiment_specs(cfg) {
        let label = spec.label();
        log::info!("evaluating {label}");
        let panel = &panels[spec.mode.as_str()];
        let mut e = rolling_evaluate(&spec, panel, Some(&cfg.clustering))?;
        e.report.config_hash = Some(hash.clone());
        write_json(&ws.reports().join(format!("{label}.json")), &e.report)?;
        e.report
            .write_days_csv(std::fs::File::create(ws.reports().join(format!("{label}_r2_by_day.csv")))?)?;
        let file = format!("{label}.csv");
        write_rows(&ws.predictions().join(&file), &e.predictions)?;
        index.push(PredictionEntry {
            label,
            model: spec.model,
            mode: spec.mode,
            file,
        });
        reports.push(e.report);
    }
    write_comparison_csv(&reports, std::fs::File::create(ws.reports().join("comparison.csv"))?)?;
    write_json(&ws.predictions().join("index.json"), &index)?;
    Ok(reports)
}

fn load_forecasts(ws: &Workspace) -> Result<Vec<(PredictionEntry, BTreeMap<(String, NaiveDate), Vec<f64>>)>> {
    let index: Vec<PredictionEntry> = read_json(&ws.predictions().join("index.json"), "train-eval")?;
    index
        .into_iter()
        .map(|e| {
            let p: Vec<Prediction> = read_rows(&ws.predictions().join(&e.file), "train-eval")?;
            Ok((e, forecast_days(&p)?))
        })
        .collect()
}

/// Days of history behind the dynamic schedule extension.
fn profile_days(cfg: &RunConfig) -> usize {
    cfg.experiments.split.train_days + cfg.experiments.split.validation_days
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingErrorRow {
    pub source: String,
    pub mode: ForecastMode,
    pub days: usize,
    pub tracking_error_bp: f64,
    /// Relative reduction against the component baseline of the same mode, in percent.
    pub improvement_vs_cmem_pct: Option<f64>,
}

/// Replicate VWAP with every evaluated forecast and with perfect information.
pub fn cmd_backtest_vwap(cfg: &RunConfig, ws: &Workspace) -> Result<Vec<VwapReport>> {
    cfg.validate()?;
    write_echo(cfg, ws)?;
    let bins = BinIndex::new(&load_bins(ws)?)?;
    let forecasts = load_forecasts(ws)?;
    let hash = cfg.hash();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &mode in &cfg.experiments.modes {
        let of_mode: Vec<_> = forecasts.iter().filter(|(e, _)| e.mode == mode).collect();
        let Some((_, first)) = of_mode.first() else { continue };
        let mut runs = vec![(format!("{ORACLE}_{}", mode.as_str()), ORACLE, first)];
        runs.extend(of_mode.iter().map(|(e, f)| (e.label.clone(), e.label.as_str(), f)));
        let mut mode_reports = Vec::new();
        for (name, source, f) in runs {
            let schedules = build_schedules(source, mode, f, &bins, profile_days(cfg))?;
            let mut r = backtest(&name, mode, &schedules, &bins)?;
            r.config_hash = Some(hash.clone());
            write_json(&ws.vwap().join(format!("{name}.json")), &r)?;
            r.write_days_csv(std::fs::File::create(ws.vwap().join(format!("{name}_days.csv")))?)?;
            mode_reports.push(r);
        }
        let cmem = mode_reports
            .iter()
            .find(|r| r.source == format!("cmem_{}", mode.as_str()))
            .map(|r| r.tracking_error_bp);
        for r in &mode_reports {
            rows.push(TrackingErrorRow {
                source: r.source.clone(),
                mode,
                days: r.days.len(),
                tracking_error_bp: r.tracking_error_bp,
                improvement_vs_cmem_pct: cmem.map(|c| (c - r.tracking_error_bp) / c * 100.0),
            });
        }
        reports.extend(mode_reports);
    }
    write_rows(&ws.vwap().join("tracking_error.csv"), &rows)?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillSourceReport {
    pub config_hash: String,
    pub source: String,
    pub mode: ForecastMode,
    pub sessions: Vec<FillSession>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionRow {
    source: String,
    mode: ForecastMode,
    stock: String,
    day: NaiveDate,
    parent_quantity: u64,
    passive_filled: u64,
    cleanup_market_filled: u64,
    unmatched_cleanup: u64,
    fill_ratio: f64,
    reposts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillsOutput {
    pub reports: Vec<FillSourceReport>,
    pub summary: Vec<AdvantageSummary>,
}

/// Execute every schedule against the recorded order flow and compare passive fill
/// ratios with the component baseline.
pub fn cmd_simulate_fills(cfg: &RunConfig, ws: &Workspace) -> Result<FillsOutput> {
    cfg.validate()?;
    write_echo(cfg, ws)?;
    let bins = BinIndex::new(&load_bins(ws)?)?;
    let sources: Vec<SourceRow> = read_rows(&ws.sources(), "ingest")?;
    let paths: BTreeMap<(String, NaiveDate), PathBuf> =
        sources.into_iter().map(|s| ((s.stock, s.day), s.path)).collect();
    let forecasts = load_forecasts(ws)?;
    let cal = TradingCalendar {
        intervals: cfg.features.intervals,
        ..TradingCalendar::default()
    };
    let hash = cfg.hash();
    let mut reports = Vec::new();
    let mut session_rows = Vec::new();
    let mut adv_rows = Vec::new();
    let mut summary = Vec::new();
    for &mode in &cfg.experiments.modes {
        let of_mode: Vec<_> = forecasts.iter().filter(|(e, _)| e.mode == mode).collect();
        let Some((_, first)) = of_mode.first() else { continue };
        let mut names = vec![format!("{ORACLE}_{}", mode.as_str())];
        let mut schedules = build_schedules(ORACLE, mode, first, &bins, profile_days(cfg))?;
        for s in &mut schedules {
            s.source = names[0].clone();
        }
        for (e, f) in &of_mode {
            names.push(e.label.clone());
            schedules.extend(build_schedules(&e.label, mode, f, &bins, profile_days(cfg))?);
        }
        let mut by_day: BTreeMap<(&str, NaiveDate), Vec<&crate::vwap::SliceSchedule>> = BTreeMap::new();
        for s in &schedules {
            by_day.entry((s.stock.as_str(), s.day)).or_default().push(s);
        }
        let days: Vec<_> = by_day.into_iter().collect();
        let sessions: Vec<FillSession> = days
            .par_iter()
            .map(|((stock, day), sch)| {
                let path = paths.get(&(stock.to_string(), *day)).ok_or_else(|| Error::MissingArtifact {
                    path: ws.sources(),
                    hint: format!("no message file recorded for {stock} {day}; rerun `ingest`"),
                })?;
                let volume: u64 = bins.day(stock, *day).map_or(0, |b| b.iter().map(|r| r.volume).sum());
                simulate_day(&parse_messages(path)?, &cal, sch, volume, &cfg.session)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        for name in &names {
            let own: Vec<FillSession> = sessions.iter().filter(|s| &s.source == name).cloned().collect();
            for s in &own {
                session_rows.push(SessionRow {
                    source: s.source.clone(),
                    mode,
                    stock: s.stock.clone(),
                    day: s.day,
                    parent_quantity: s.report.parent_quantity,
                    passive_filled: s.report.passive_filled,
                    cleanup_market_filled: s.report.cleanup_market_filled,
                    unmatched_cleanup: s.report.unmatched_cleanup,
                    fill_ratio: s.report.fill_ratio,
                    reposts: s.report.reposts,
                });
            }
            let r = FillSourceReport {
                config_hash: hash.clone(),
                source: name.clone(),
                mode,
                sessions: own,
            };
            write_json(&ws.fills().join(format!("{name}.json")), &r)?;
            reports.push(r);
        }
        let baseline = format!("cmem_{}", mode.as_str());
        if names.contains(&baseline) {
            let (rows, s) = advantages(&sessions, &baseline)?;
            adv_rows.extend(rows);
            summary.extend(s);
        } else {
            log::warn!("no component baseline for {} fills; advantage skipped", mode.as_str());
        }
    }
    write_rows(&ws.fills().join("sessions.csv"), &session_rows)?;
    write_rows(&ws.fills().join("fill_advantage.csv"), &adv_rows)?;
    write_rows(&ws.fills().join("advantage_summary.csv"), &summary)?;
    Ok(FillsOutput { reports, summary })
}
