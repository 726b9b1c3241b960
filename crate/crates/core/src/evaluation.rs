//! Forecast metrics, embedding-dimension search and experiment protocols.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmarks::{fit_linear_rows, LinearModel};
use crate::dim_reduction::fit_reduction;
use crate::error::{check_dims, HopsError, Result};
use crate::features::{
    build_design_matrix, FeatureContext, FeatureMatrix, MinMaxNormalizer, Timestamp, VariableSpec,
};
use crate::ingestion::Dataset;
use crate::poly_model::{PolyModel, PolySpec};
use crate::polycg_solver::{self, SolverConfig, SolverTrace};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Mean absolute percentage error, in percent.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_dims("mape forecast length", y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(HopsError::InvalidParameter("MAPE of zero points".into()));
    }
    let mut sum = 0.0;
    for (i, (a, f)) in y.iter().zip(yhat).enumerate() {
        if *a == 0.0 {
            return Err(HopsError::ZeroActual(i));
        }
        sum += ((a - f) / a).abs();
    }
    Ok(100.0 * sum / y.len() as f64)
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_dims("mse forecast length", y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(HopsError::InvalidParameter("MSE of zero points".into()));
    }
    Ok(y.iter().zip(yhat).map(|(a, f)| (a - f) * (a - f)).sum::<f64>() / y.len() as f64)
}

/// MAPE of per-day maxima, in percent. Days without all 24 hours are
/// skipped with a warning; `None` when no complete day remains.
pub fn daily_peak_mape(y: &[f64], yhat: &[f64], timestamps: &[Timestamp]) -> Result<Option<f64>> {
    check_dims("daily_peak_mape forecast length", y.len(), yhat.len())?;
    check_dims("daily_peak_mape timestamps", y.len(), timestamps.len())?;
    let mut days: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, t) in timestamps.iter().enumerate() {
        days.entry(t.date()).or_default().push(i);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (date, idx) in days {
        let mut hours: Vec<u32> = idx.iter().map(|&i| timestamps[i].hour()).collect();
        hours.sort_unstable();
        hours.dedup();
        if idx.len() != 24 || hours.len() != 24 {
            warn!("daily peak: {date} has {} hourly values, excluded", idx.len());
            continue;
        }
        let peak = |v: &[f64]| idx.iter().map(|&i| v[i]).fold(f64::NEG_INFINITY, f64::max);
        let (actual, forecast) = (peak(y), peak(yhat));
        if actual == 0.0 {
            return Err(HopsError::ZeroActual(idx[0]));
        }
        sum += ((actual - forecast) / actual).abs();
        count += 1;
    }
    Ok((count > 0).then(|| 100.0 * sum / count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mape: f64,
    pub mse: f64,
    pub daily_peak_mape: Option<f64>,
}

impl Metrics {
    pub fn compute(y: &[f64], yhat: &[f64], timestamps: &[Timestamp]) -> Result<Self> {
        Ok(Self {
            mape: mape(y, yhat)?,
            mse: mse(y, yhat)?,
            daily_peak_mape: daily_peak_mape(y, yhat, timestamps)?,
        })
    }

    /// Field-wise arithmetic mean. The peak column is averaged only when
    /// every input has one.
    pub fn mean(items: &[Metrics]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let peaks: Option<Vec<f64>> = items.iter().map(|m| m.daily_peak_mape).collect();
        Some(Self {
            mape: items.iter().map(|m| m.mape).sum::<f64>() / n,
            mse: items.iter().map(|m| m.mse).sum::<f64>() / n,
            daily_peak_mape: peaks.map(|p| p.iter().sum::<f64>() / n),
        })
    }
}

/// Forecasts aligned with timestamps and (possibly absent) actual loads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub timestamps: Vec<Timestamp>,
    pub actual: Vec<Option<f64>>,
    pub predicted: Vec<f64>,
}

impl Predictions {
    /// Metrics over the rows that have an actual load.
    pub fn metrics(&self) -> Result<Metrics> {
        let (mut y, mut f, mut t) = (Vec::new(), Vec::new(), Vec::new());
        for ((a, p), ts) in self.actual.iter().zip(&self.predicted).zip(&self.timestamps) {
            if let Some(a) = a {
                y.push(*a);
                f.push(*p);
                t.push(*ts);
            }
        }
        Metrics::compute(&y, &f, &t)
    }

    /// `timestamp,actual,predicted`; absent actuals are empty fields.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["timestamp", "actual", "predicted"])?;
        for ((t, a), p) in self.timestamps.iter().zip(&self.actual).zip(&self.predicted) {
            out.write_record([
                t.to_string(),
                a.map_or_else(String::new, |v| v.to_string()),
                p.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut out = Self::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| {
                HopsError::InputRange(format!("predictions line {}: bad {what}", i + 2))
            };
            let field = |j: usize| rec.get(j).unwrap_or("").trim();
            out.timestamps.push(field(0).parse().map_err(|_| bad("timestamp"))?);
            out.actual.push(match field(1) {
                "" => None,
                v => Some(v.parse().map_err(|_| bad("actual"))?),
            });
            out.predicted.push(field(2).parse().map_err(|_| bad("predicted"))?);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hops,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentProtocol {
    pub name: String,
    pub kind: ModelKind,
    /// Feature set; replaced per cell when `recency_search` is set.
    pub spec: String,
    pub train_years: Vec<i32>,
    pub validation_year: i32,
    pub retrain_years: Vec<i32>,
    pub test_year: i32,
    pub k2_range: Vec<usize>,
    pub k3_range: Vec<usize>,
    /// `(h values, d values)`: searches `recency_h{h}_d{d}` (linear) or
    /// `rehops_h{h}_d{d}` (HOPS) feature sets.
    pub recency_search: Option<(Vec<usize>, Vec<usize>)>,
    pub solver: SolverConfig,
}

pub const PRESETS: [&str; 10] = [
    "hops47", "hops289", "hops50", "hops59", "rehops", "g1", "h1", "g2", "h2", "recency",
];

pub const K2_RANGE_WIDE: [usize; 9] = [12, 24, 36, 48, 60, 72, 84, 96, 108];
pub const K2_RANGE: [usize; 9] = [20, 28, 36, 44, 52, 60, 68, 76, 84];
pub const K3_RANGE: [usize; 7] = [0, 1, 5, 9, 13, 17, 21];

impl ExperimentProtocol {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            name: name.to_string(),
            kind: ModelKind::Hops,
            spec: name.to_string(),
            train_years: vec![2012, 2013],
            validation_year: 2014,
            retrain_years: vec![2012, 2013, 2014],
            test_year: 2015,
            k2_range: K2_RANGE.to_vec(),
            k3_range: K3_RANGE.to_vec(),
            recency_search: None,
            solver: SolverConfig::default(),
        };
        let recency_grid = Some(((0..=24).collect(), (1..=7).collect()));
        let p = match name {
            "hops47" | "hops50" | "hops59" => base,
            "hops289" => Self {
                k2_range: K2_RANGE_WIDE.to_vec(),
                ..base
            },
            "rehops" => Self {
                spec: "rehops".into(),
                retrain_years: vec![2013, 2014],
                k2_range: vec![60],
                k3_range: vec![9],
                recency_search: recency_grid,
                ..base
            },
            "g1" | "h1" | "g2" | "h2" => Self {
                kind: ModelKind::Linear,
                k2_range: vec![0],
                k3_range: vec![0],
                ..base
            },
            "recency" => Self {
                kind: ModelKind::Linear,
                spec: "recency".into(),
                retrain_years: vec![2013, 2014],
                k2_range: vec![0],
                k3_range: vec![0],
                recency_search: recency_grid,
                ..base
            },
            _ => {
                return Err(HopsError::InvalidParameter(format!(
                    "unknown preset '{name}'; valid: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HopsError::InvalidParameter(m));
        if self.train_years.is_empty() || self.retrain_years.is_empty() {
            return err("training and retraining years must be non-empty".into());
        }
        if self.validation_year == self.test_year {
            return err("validation year must differ from test year".into());
        }
        let last = self.train_years.iter().chain(&self.retrain_years).max().unwrap();
        if self.test_year <= *last {
            return err(format!("test year {} must follow training span", self.test_year));
        }
        if self.k2_range.is_empty() || self.k3_range.is_empty() {
            return err("embedding-dimension ranges must be non-empty".into());
        }
        if let Some((hs, ds)) = &self.recency_search {
            if hs.is_empty() || ds.is_empty() {
                return err("recency search ranges must be non-empty".into());
            }
            if hs.iter().any(|&h| h > 24) || ds.iter().any(|&d| !(1..=7).contains(&d)) {
                return err("recency search requires h in 0..=24 and d in 1..=7".into());
            }
        } else {
            VariableSpec::parse(&self.spec)?;
        }
        self.solver.validate()
    }

    fn spec_for(&self, hd: Option<(usize, usize)>) -> Result<VariableSpec> {
        match (hd, self.kind) {
            (None, _) => VariableSpec::parse(&self.spec),
            (Some((h, d)), ModelKind::Hops) => VariableSpec::rehops(h, d),
            (Some((h, d)), ModelKind::Linear) => VariableSpec::recency(h, d),
        }
    }
}

// ---------------------------------------------------------------------------
// Fitting pipeline
// ---------------------------------------------------------------------------

/// Row indices in `years` that carry an actual load.
pub fn labelled_rows(design: &FeatureMatrix, years: &[i32]) -> Vec<usize> {
    design
        .rows_in_years(years)
        .into_iter()
        .filter(|&i| design.loads[i].is_some())
        .collect()
}

fn targets(design: &FeatureMatrix, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| design.loads[i].expect("labelled row")).collect()
}

/// Highest admissible embedding dimension for a design (trend excluded).
pub fn max_embed_dim(design: &FeatureMatrix) -> usize {
    design.matrix.cols() - usize::from(design.trend_column.is_some())
}

/// Caps every value at `max` and removes the duplicates this creates.
pub fn clamp_range(range: &[usize], max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = range.iter().map(|&k| k.min(max)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Normalize on `rows`, fit embeddings on the normalized rows (trend
/// column removed), then run PolyCG.
pub fn fit_hops(
    design: &FeatureMatrix,
    rows: &[usize],
    k2: usize,
    k3: usize,
    solver: &SolverConfig,
    context: &FeatureContext,
) -> Result<(PolyModel, SolverTrace)> {
    if rows.is_empty() {
        return Err(HopsError::InvalidParameter("no labelled training rows".into()));
    }
    let x_raw = design.matrix.select_rows(rows);
    let y = targets(design, rows);
    let normalizer = MinMaxNormalizer::fit(&x_raw)?;
    let x = normalizer.apply(&x_raw)?;
    let n = x.cols();
    let mut dims = vec![n, k2, k3];
    while dims.len() > 1 && *dims.last().unwrap() == 0 {
        dims.pop();
    }
    let spec = PolySpec::new(n, dims, design.trend_column)?;
    let source = match design.trend_column {
        Some(t) if spec.max_order() > 1 => Some(x.without_column(t)),
        _ => None,
    };
    let reductions = (2..=spec.max_order())
        .map(|order| match spec.k(order) {
            0 => Ok(None),
            k => fit_reduction(source.as_ref().unwrap_or(&x), k).map(Some),
        })
        .collect::<Result<Vec<_>>>()?;
    let (model, trace) = polycg_solver::fit(&x, &y, &spec, reductions, solver)?;
    Ok((
        model.with_normalizer(normalizer).with_feature_spec(context.to_json()),
        trace,
    ))
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Hops { model: PolyModel, trace: SolverTrace },
    Linear(LinearModel),
}

impl FittedModel {
    pub fn predict(&self, design: &FeatureMatrix, rows: &[usize]) -> Result<Vec<f64>> {
        let x = design.matrix.select_rows(rows);
        match self {
            FittedModel::Hops { model, .. } => model.predict(&x),
            FittedModel::Linear(m) => m.predict_matrix(&x),
        }
    }
}

/// One grid point. Field order is the tie-break order: smaller `h`, then
/// `d`, then `k3`, then `k2` wins among equal validation scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub h: Option<usize>,
    pub d: Option<usize>,
    pub k3: usize,
    pub k2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub key: CellKey,
    pub validation_mape: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub cells: Vec<GridCell>,
    pub selected: CellKey,
    pub spec: VariableSpec,
    /// Design over the whole series for the selected feature set.
    pub design: FeatureMatrix,
    pub model: FittedModel,
}

fn fit_cell(
    design: &FeatureMatrix,
    spec: &VariableSpec,
    key: CellKey,
    rows: &[usize],
    protocol: &ExperimentProtocol,
    context: &FeatureContext,
) -> Result<FittedModel> {
    match protocol.kind {
        ModelKind::Hops => {
            let (model, trace) = fit_hops(design, rows, key.k2, key.k3, &protocol.solver, context)?;
            Ok(FittedModel::Hops { model, trace })
        }
        ModelKind::Linear => Ok(FittedModel::Linear(fit_linear_rows(
            design,
            rows,
            spec,
            context.trend_origin,
        )?)),
    }
}

fn cell_keys(design: &FeatureMatrix, hd: Option<(usize, usize)>, protocol: &ExperimentProtocol) -> Vec<CellKey> {
    let (h, d) = (hd.map(|p| p.0), hd.map(|p| p.1));
    if protocol.kind == ModelKind::Linear {
        return vec![CellKey { h, d, k3: 0, k2: 0 }];
    }
    let max = max_embed_dim(design);
    let k2s = clamp_range(&protocol.k2_range, max);
    let k3s = clamp_range(&protocol.k3_range, max);
    k3s.iter()
        .flat_map(|&k3| k2s.iter().map(move |&k2| CellKey { h, d, k3, k2 }))
        .collect()
}

fn validate_cell(
    design: &FeatureMatrix,
    spec: &VariableSpec,
    key: CellKey,
    protocol: &ExperimentProtocol,
    context: &FeatureContext,
) -> Result<f64> {
    let train = labelled_rows(design, &protocol.train_years);
    let val = labelled_rows(design, &[protocol.validation_year]);
    if val.is_empty() {
        return Err(HopsError::InvalidParameter(format!(
            "no labelled rows in validation year {}",
            protocol.validation_year
        )));
    }
    let model = fit_cell(design, spec, key, &train, protocol, context)?;
    mape(&targets(design, &val), &model.predict(design, &val)?)
}

/// Validates every cell of the protocol's grid on `records`, selects the
/// best by validation MAPE and refits it on the retraining years.
///
/// Cells run in parallel; the selection scans them in [`CellKey`] order so
/// the outcome does not depend on scheduling.
pub fn search(records: &[crate::features::HourlyRecord], protocol: &ExperimentProtocol) -> Result<SearchOutcome> {
    protocol.validate()?;
    let first = records
        .first()
        .ok_or_else(|| HopsError::InvalidParameter("empty record series".into()))?;
    let hds: Vec<Option<(usize, usize)>> = match &protocol.recency_search {
        None => vec![None],
        Some((hs, ds)) => hs
            .iter()
            .flat_map(|&h| ds.iter().map(move |&d| Some((h, d))))
            .collect(),
    };
    let context_for = |spec: &VariableSpec| FeatureContext {
        spec: spec.name.clone(),
        trend_origin: first.timestamp,
    };

    // With a single candidate overall there is nothing to validate.
    let single = hds.len() == 1 && {
        let spec = protocol.spec_for(hds[0])?;
        let design = build_design_matrix(records, &spec)?;
        cell_keys(&design, hds[0], protocol).len() == 1
    };

    let mut cells: Vec<GridCell> = if single {
        Vec::new()
    } else {
        hds.par_iter()
            .map(|&hd| -> Vec<GridCell> {
                let built = protocol
                    .spec_for(hd)
                    .and_then(|spec| build_design_matrix(records, &spec).map(|d| (spec, d)));
                let (spec, design) = match built {
                    Ok(v) => v,
                    Err(e) => {
                        return vec![GridCell {
                            key: CellKey { h: hd.map(|p| p.0), d: hd.map(|p| p.1), k3: 0, k2: 0 },
                            validation_mape: None,
                            error: Some(e.to_string()),
                        }]
                    }
                };
                let ctx = context_for(&spec);
                cell_keys(&design, hd, protocol)
                    .into_par_iter()
                    .map(|key| match validate_cell(&design, &spec, key, protocol, &ctx) {
                        Ok(v) => GridCell { key, validation_mape: Some(v), error: None },
                        Err(e) => GridCell { key, validation_mape: None, error: Some(e.to_string()) },
                    })
                    .collect()
            })
            .flatten()
            .collect()
    };
    cells.sort_by_key(|c| c.key);

    let selected = if single {
        let spec = protocol.spec_for(hds[0])?;
        cell_keys(&build_design_matrix(records, &spec)?, hds[0], protocol)[0]
    } else {
        let mut best: Option<(CellKey, f64)> = None;
        for c in &cells {
            if let Some(v) = c.validation_mape {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((c.key, v));
                }
            } else if let Some(e) = &c.error {
                warn!("grid cell {:?} failed: {e}", c.key);
            }
        }
        let (key, v) = best.ok_or_else(|| {
            HopsError::NumericalFailure("every grid cell failed validation".into())
        })?;
        info!("selected {key:?} with validation MAPE {v:.4}%");
        key
    };

    let hd = selected.h.zip(selected.d);
    let spec = protocol.spec_for(hd)?;
    let design = build_design_matrix(records, &spec)?;
    let rows = labelled_rows(&design, &protocol.retrain_years);
    let model = fit_cell(&design, &spec, selected, &rows, protocol, &context_for(&spec))?;
    Ok(SearchOutcome {
        cells,
        selected,
        spec,
        design,
        model,
    })
}

/// Embedding-dimension search for one feature set.
pub fn grid_search_k(
    records: &[crate::features::HourlyRecord],
    spec: &VariableSpec,
    k2_range: &[usize],
    k3_range: &[usize],
    protocol: &ExperimentProtocol,
) -> Result<SearchOutcome> {
    let p = ExperimentProtocol {
        kind: ModelKind::Hops,
        spec: spec.name.clone(),
        k2_range: k2_range.to_vec(),
        k3_range: k3_range.to_vec(),
        recency_search: None,
        ..protocol.clone()
    };
    search(records, &p)
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneResult {
    pub zone: String,
    pub metrics: Option<Metrics>,
    pub selected: Option<CellKey>,
    pub spec: Option<String>,
    pub solver_iterations: Option<usize>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: ExperimentProtocol,
    pub zones: Vec<ZoneResult>,
    /// Mean over the non-TOTAL zones that completed.
    pub average: Option<Metrics>,
    pub total: Option<Metrics>,
    pub partial: bool,
    pub config_fingerprint: String,
    pub wall_seconds: f64,
    #[serde(skip)]
    pub predictions: BTreeMap<String, Predictions>,
    #[serde(skip)]
    pub grids: BTreeMap<String, Vec<GridCell>>,
}

impl ExperimentReport {
    fn summarize(&mut self) {
        let zone_metrics: Vec<Metrics> = self
            .zones
            .iter()
            .filter(|z| z.zone != "TOTAL")
            .filter_map(|z| z.metrics)
            .collect();
        self.average = Metrics::mean(&zone_metrics);
        self.total = self.zones.iter().find(|z| z.zone == "TOTAL").and_then(|z| z.metrics);
        self.partial = self.zones.iter().any(|z| z.error.is_some());
    }

    /// Builds a report from finished zone rows.
    pub fn from_zones(protocol: ExperimentProtocol, zones: Vec<ZoneResult>, fingerprint: String) -> Self {
        let mut r = Self {
            protocol,
            zones,
            average: None,
            total: None,
            partial: false,
            config_fingerprint: fingerprint,
            wall_seconds: 0.0,
            predictions: BTreeMap::new(),
            grids: BTreeMap::new(),
        };
        r.summarize();
        r
    }

    /// One row per zone plus `AVERAGE`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "zone", "mape", "mse", "daily_peak_mape", "h", "d", "k2", "k3", "iterations", "seconds",
            "error",
        ])?;
        let f = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        let u = |v: Option<usize>| v.map_or_else(String::new, |v| v.to_string());
        let mut rows: Vec<(&str, Option<Metrics>, Option<&ZoneResult>)> = self
            .zones
            .iter()
            .map(|z| (z.zone.as_str(), z.metrics, Some(z)))
            .collect();
        rows.push(("AVERAGE", self.average, None));
        for (zone, m, z) in rows {
            let sel = z.and_then(|z| z.selected);
            out.write_record([
                zone.to_string(),
                f(m.map(|m| m.mape)),
                f(m.map(|m| m.mse)),
                f(m.and_then(|m| m.daily_peak_mape)),
                u(sel.and_then(|s| s.h)),
                u(sel.and_then(|s| s.d)),
                u(sel.map(|s| s.k2)),
                u(sel.map(|s| s.k3)),
                u(z.and_then(|z| z.solver_iterations)),
                z.map_or_else(|| self.wall_seconds.to_string(), |z| z.seconds.to_string()),
                z.and_then(|z| z.error.clone()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Long format `zone,model,metric,value`.
    pub fn write_plot_data<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["zone", "model", "metric", "value"])?;
        let mut rows: Vec<(&str, Metrics)> = self
            .zones
            .iter()
            .filter_map(|z| z.metrics.map(|m| (z.zone.as_str(), m)))
            .collect();
        if let Some(avg) = self.average {
            rows.push(("AVERAGE", avg));
        }
        for (zone, m) in rows {
            let mut values = vec![("mape", m.mape), ("mse", m.mse)];
            if let Some(p) = m.daily_peak_mape {
                values.push(("daily_peak_mape", p));
            }
            for (metric, v) in values {
                out.write_record([zone, &self.protocol.name, metric, &v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// SHA-256 over the protocol and the input file hashes.
pub fn config_fingerprint(protocol: &ExperimentProtocol, dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(protocol).expect("protocol serializes"));
    for (path, hash) in &dataset.provenance {
        h.update(path.as_bytes());
        h.update(hash.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct ZoneRun {
    result: ZoneResult,
    predictions: Predictions,
    grid: Vec<GridCell>,
}

fn run_zone(protocol: &ExperimentProtocol, dataset: &Dataset, zone: &str) -> Result<ZoneRun> {
    let started = Instant::now();
    let records = dataset.zone(zone)?;
    let outcome = search(records, protocol)?;
    let design = &outcome.design;
    let test_rows = design.rows_in_years(&[protocol.test_year]);
    if test_rows.is_empty() {
        return Err(HopsError::InvalidParameter(format!(
            "zone {zone}: no rows in test year {}",
            protocol.test_year
        )));
    }
    let predictions = Predictions {
        timestamps: test_rows.iter().map(|&i| design.timestamps[i]).collect(),
        actual: test_rows.iter().map(|&i| design.loads[i]).collect(),
        predicted: outcome.model.predict(design, &test_rows)?,
    };
    let metrics = predictions.metrics()?;
    let iterations = match &outcome.model {
        FittedModel::Hops { trace, .. } => Some(trace.iterations_run),
        FittedModel::Linear(_) => None,
    };
    Ok(ZoneRun {
        result: ZoneResult {
            zone: zone.to_string(),
            metrics: Some(metrics),
            selected: Some(outcome.selected),
            spec: Some(outcome.spec.name.clone()),
            solver_iterations: iterations,
            seconds: started.elapsed().as_secs_f64(),
            error: None,
        },
        predictions,
        grid: outcome.cells,
    })
}

/// Runs the protocol for each zone in turn. A failing zone is recorded in
/// its row and marks the report partial; the other zones still run.
pub fn run_experiment(protocol: &ExperimentProtocol, dataset: &Dataset, zones: &[String]) -> Result<ExperimentReport> {
    protocol.validate()?;
    let started = Instant::now();
    let mut rows = Vec::with_capacity(zones.len());
    let mut predictions = BTreeMap::new();
    let mut grids = BTreeMap::new();
    for zone in zones {
        let zone = zone.to_ascii_uppercase();
        let t0 = Instant::now();
        match run_zone(protocol, dataset, &zone) {
            Ok(run) => {
                if let Some(m) = run.result.metrics {
                    info!("{} {zone}: MAPE {:.3}%", protocol.name, m.mape);
                }
                predictions.insert(zone.clone(), run.predictions);
                grids.insert(zone, run.grid);
                rows.push(run.result);
            }
            Err(e) => {
                warn!("{} {zone} failed: {e}", protocol.name);
                rows.push(ZoneResult {
                    zone,
                    metrics: None,
                    selected: None,
                    spec: None,
                    solver_iterations: None,
                    seconds: t0.elapsed().as_secs_f64(),
                    error: Some(format!("{}: {e}", e.code())),
                });
            }
        }
    }
    let mut report = ExperimentReport::from_zones(protocol.clone(), rows, config_fingerprint(protocol, dataset));
    report.wall_seconds = started.elapsed().as_secs_f64();
    report.predictions = predictions;
    report.grids = grids;
    Ok(report)
}
