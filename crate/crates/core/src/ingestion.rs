//! Hourly load/weather CSV ingestion with integrity checks.
//!
//! Column names, delimiter and date formats come from an [`IngestConfig`]
//! (TOML). Hours are hour-ending `1..=24` in the source and are shifted to
//! `0..=23` internally. Per zone the output is a gapless hourly series:
//!
//! * duplicated timestamps are rejected (or, with
//!   `duplicate_hours = "keep-first"`, the later copies dropped);
//! * hours absent from the file are inserted with no load when the gap is
//!   at most `max_weather_gap` hours, and their weather interpolated;
//! * empty weather cells inside such short runs are linearly interpolated;
//!   longer gaps are errors. Load values are never imputed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{at_path, HopsError, Result};
use crate::features::{HourlyRecord, Timestamp};

/// The ten zone identifiers of the ISO New England data set.
pub const CANONICAL_ZONES: [&str; 10] = [
    "ME", "NH", "VT", "CT", "RI", "SEMASS", "WCMASS", "NEMASS", "MASS", "TOTAL",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub date: String,
    pub hour: String,
    pub demand: String,
    pub drybulb: String,
    pub dewpoint: String,
    /// Optional; when absent from the file, `default_zone` is used.
    pub zone: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: "Date".into(),
            hour: "Hr_End".into(),
            demand: "DEMAND".into(),
            drybulb: "DryBulb".into(),
            dewpoint: "DewPnt".into(),
            zone: "Zone".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicatePolicy {
    #[default]
    Reject,
    KeepFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub delimiter: char,
    pub columns: ColumnMap,
    pub date_formats: Vec<String>,
    pub default_zone: Option<String>,
    /// Unparseable rows tolerated (skipped with a warning) before failing.
    pub max_bad_rows: usize,
    /// Longest run of missing weather hours that is interpolated.
    pub max_weather_gap: usize,
    pub duplicate_hours: DuplicatePolicy,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            delimiter: ',',
            columns: ColumnMap::default(),
            date_formats: vec!["%Y-%m-%d".into(), "%m/%d/%Y".into(), "%d%b%Y".into()],
            default_zone: None,
            max_bad_rows: 0,
            max_weather_gap: 2,
            duplicate_hours: DuplicatePolicy::Reject,
        }
    }
}

impl IngestConfig {
    /// Layout written by [`write_canonical_csv`].
    pub fn canonical() -> Self {
        Self {
            columns: ColumnMap {
                date: "date".into(),
                hour: "hour".into(),
                demand: "load".into(),
                drybulb: "drybulb".into(),
                dewpoint: "dewpoint".into(),
                zone: "zone".into(),
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HopsError::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path).map_err(at_path(path))?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    /// zone → year → row count.
    pub rows: BTreeMap<String, BTreeMap<i32, usize>>,
    pub skipped_lines: Vec<usize>,
    pub inserted_hours: Vec<String>,
    pub interpolated_weather: Vec<String>,
    pub dropped_duplicates: Vec<String>,
    pub drybulb_below_dewpoint: usize,
}

impl IngestSummary {
    pub fn log(&self) {
        for (zone, years) in &self.rows {
            let parts: Vec<String> = years.iter().map(|(y, n)| format!("{y}:{n}")).collect();
            info!("zone {zone}: {}", parts.join(" "));
        }
        if !self.inserted_hours.is_empty() {
            info!("{} missing hours inserted without load", self.inserted_hours.len());
        }
        if !self.interpolated_weather.is_empty() {
            info!("{} weather values interpolated", self.interpolated_weather.len());
        }
        if self.drybulb_below_dewpoint > 0 {
            warn!("{} rows have drybulb below dewpoint", self.drybulb_below_dewpoint);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub zones: BTreeMap<String, Vec<HourlyRecord>>,
    /// `(source path, sha256 hex)` of every ingested file.
    pub provenance: Vec<(String, String)>,
    pub summary: IngestSummary,
}

impl Dataset {
    pub fn zone(&self, zone: &str) -> Result<&[HourlyRecord]> {
        self.zones
            .get(&zone.to_ascii_uppercase())
            .map(Vec::as_slice)
            .ok_or_else(|| {
                HopsError::Ingestion(format!(
                    "zone '{zone}' not in data set (have: {})",
                    self.zones.keys().cloned().collect::<Vec<_>>().join(", ")
                ))
            })
    }

    /// Merges another data set; zones must not overlap.
    pub fn merge(&mut self, other: Dataset) -> Result<()> {
        for (zone, recs) in other.zones {
            if self.zones.contains_key(&zone) {
                return Err(HopsError::Ingestion(format!("zone {zone} present in two inputs")));
            }
            self.zones.insert(zone, recs);
        }
        self.provenance.extend(other.provenance);
        let s = other.summary;
        self.summary.rows.extend(s.rows);
        self.summary.skipped_lines.extend(s.skipped_lines);
        self.summary.inserted_hours.extend(s.inserted_hours);
        self.summary.interpolated_weather.extend(s.interpolated_weather);
        self.summary.dropped_duplicates.extend(s.dropped_duplicates);
        self.summary.drybulb_below_dewpoint += s.drybulb_below_dewpoint;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads and validates one CSV file.
pub fn ingest_csv(path: &Path, config: &IngestConfig) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(at_path(path))?;
    let mut ds = ingest_reader(bytes.as_slice(), config)?;
    ds.provenance.push((path.display().to_string(), sha256_hex(&bytes)));
    Ok(ds)
}

struct RawRow {
    line: usize,
    zone: String,
    timestamp: Timestamp,
    load: Option<f64>,
    drybulb: Option<f64>,
    dewpoint: Option<f64>,
}

fn parse_opt_f64(field: &str) -> std::result::Result<Option<f64>, ()> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    match f.replace(',', "").parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

fn parse_date(field: &str, formats: &[String]) -> Option<NaiveDate> {
    let f = field.trim();
    // Tolerate a trailing time component such as "2012-01-01 00:00:00".
    let date_part = f.split_whitespace().next().unwrap_or(f);
    formats
        .iter()
        .find_map(|fmt| NaiveDate::parse_from_str(date_part, fmt).ok())
}

/// [`ingest_csv`] over any reader.
pub fn ingest_reader<R: Read>(reader: R, config: &IngestConfig) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(u8::try_from(config.delimiter).map_err(|_| {
            HopsError::Config(format!("delimiter '{}' is not a single byte", config.delimiter))
        })?)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let cols = &config.columns;
    let mut missing = Vec::new();
    let mut need = |name: &str| {
        let idx = find(name);
        if idx.is_none() {
            missing.push(name.to_string());
        }
        idx.unwrap_or(0)
    };
    let date_idx = need(&cols.date);
    let hour_idx = need(&cols.hour);
    let demand_idx = need(&cols.demand);
    let dry_idx = need(&cols.drybulb);
    let dew_idx = need(&cols.dewpoint);
    let zone_idx = find(&cols.zone);
    if zone_idx.is_none() && config.default_zone.is_none() {
        missing.push(cols.zone.clone());
    }
    if !missing.is_empty() {
        return Err(HopsError::Ingestion(format!(
            "unmappable columns: {} (header: {})",
            missing.join(", "),
            headers.iter().collect::<Vec<_>>().join(", ")
        )));
    }

    let mut rows = Vec::new();
    let mut bad_lines = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let field = |idx: usize| rec.get(idx).unwrap_or("");
        let zone = match zone_idx {
            Some(z) => field(z).trim().to_ascii_uppercase(),
            None => config.default_zone.clone().unwrap().to_ascii_uppercase(),
        };
        let parsed = (|| {
            let date = parse_date(field(date_idx), &config.date_formats)?;
            let hour: u32 = field(hour_idx).trim().parse().ok()?;
            let ts = Timestamp::from_hour_ending(date, hour).ok()?;
            Some(RawRow {
                line,
                zone: zone.clone(),
                timestamp: ts,
                load: parse_opt_f64(field(demand_idx)).ok()?,
                drybulb: parse_opt_f64(field(dry_idx)).ok()?,
                dewpoint: parse_opt_f64(field(dew_idx)).ok()?,
            })
        })();
        match parsed {
            Some(r) if !r.zone.is_empty() => rows.push(r),
            _ => bad_lines.push(line),
        }
    }
    if bad_lines.len() > config.max_bad_rows {
        let shown: Vec<String> = bad_lines.iter().take(20).map(usize::to_string).collect();
        return Err(HopsError::Ingestion(format!(
            "{} unparseable rows (threshold {}), lines: {}{}",
            bad_lines.len(),
            config.max_bad_rows,
            shown.join(", "),
            if bad_lines.len() > 20 { ", …" } else { "" }
        )));
    }
    for l in &bad_lines {
        warn!("skipping unparseable line {l}");
    }

    let mut by_zone: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for r in rows {
        by_zone.entry(r.zone.clone()).or_default().push(r);
    }
    let mut ds = Dataset::default();
    ds.summary.skipped_lines = bad_lines;
    for (zone, mut raw) in by_zone {
        if !CANONICAL_ZONES.contains(&zone.as_str()) {
            warn!("zone '{zone}' is not one of the canonical ISO-NE zones");
        }
        raw.sort_by_key(|r| (r.timestamp, r.line));
        let records = validate_zone(&zone, raw, config, &mut ds.summary)?;
        let mut per_year = BTreeMap::new();
        for r in &records {
            *per_year.entry(r.timestamp.year()).or_insert(0) += 1;
        }
        ds.summary.rows.insert(zone.clone(), per_year);
        ds.zones.insert(zone, records);
    }
    Ok(ds)
}

fn validate_zone(
    zone: &str,
    raw: Vec<RawRow>,
    config: &IngestConfig,
    summary: &mut IngestSummary,
) -> Result<Vec<HourlyRecord>> {
    let mut out: Vec<HourlyRecord> = Vec::with_capacity(raw.len());
    for r in raw {
        if let Some(last) = out.last() {
            if last.timestamp == r.timestamp {
                match config.duplicate_hours {
                    DuplicatePolicy::Reject => {
                        return Err(HopsError::Ingestion(format!(
                            "zone {zone}: duplicated hour {} (line {})",
                            r.timestamp, r.line
                        )))
                    }
                    DuplicatePolicy::KeepFirst => {
                        summary.dropped_duplicates.push(format!("{zone} {}", r.timestamp));
                        continue;
                    }
                }
            }
            let mut expected = last.timestamp.next_hour();
            let mut gap = 0;
            while expected < r.timestamp {
                gap += 1;
                if gap > config.max_weather_gap {
                    return Err(HopsError::Ingestion(format!(
                        "zone {zone}: gap of more than {} hours before {} (line {})",
                        config.max_weather_gap, r.timestamp, r.line
                    )));
                }
                summary.inserted_hours.push(format!("{zone} {expected}"));
                out.push(HourlyRecord {
                    timestamp: expected,
                    load: None,
                    drybulb: None,
                    dewpoint: None,
                    zone: zone.to_string(),
                });
                expected = expected.next_hour();
            }
        }
        if let (Some(d), Some(w)) = (r.drybulb, r.dewpoint) {
            if d < w {
                summary.drybulb_below_dewpoint += 1;
            }
        }
        out.push(HourlyRecord {
            timestamp: r.timestamp,
            load: r.load,
            drybulb: r.drybulb,
            dewpoint: r.dewpoint,
            zone: zone.to_string(),
        });
    }
    for (name, get, set) in [
        (
            "drybulb",
            (|r: &HourlyRecord| r.drybulb) as fn(&HourlyRecord) -> Option<f64>,
            (|r: &mut HourlyRecord, v| r.drybulb = Some(v)) as fn(&mut HourlyRecord, f64),
        ),
        ("dewpoint", |r| r.dewpoint, |r, v| r.dewpoint = Some(v)),
    ] {
        interpolate_gaps(zone, name, &mut out, get, set, config.max_weather_gap, summary)?;
    }
    Ok(out)
}

fn interpolate_gaps(
    zone: &str,
    name: &str,
    recs: &mut [HourlyRecord],
    get: fn(&HourlyRecord) -> Option<f64>,
    set: fn(&mut HourlyRecord, f64),
    max_gap: usize,
    summary: &mut IngestSummary,
) -> Result<()> {
    let mut i = 0;
    while i < recs.len() {
        if get(&recs[i]).is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < recs.len() && get(&recs[i]).is_none() {
            i += 1;
        }
        let len = i - start;
        let (Some(before), Some(after)) = (
            start.checked_sub(1).and_then(|j| get(&recs[j])),
            recs.get(i).and_then(get),
        ) else {
            return Err(HopsError::Ingestion(format!(
                "zone {zone}: {name} missing at series edge from {}",
                recs[start].timestamp
            )));
        };
        if len > max_gap {
            return Err(HopsError::Ingestion(format!(
                "zone {zone}: {name} missing for {len} consecutive hours from {}",
                recs[start].timestamp
            )));
        }
        for (step, rec) in recs[start..i].iter_mut().enumerate() {
            let frac = (step + 1) as f64 / (len + 1) as f64;
            set(rec, before + frac * (after - before));
            summary
                .interpolated_weather
                .push(format!("{zone} {} {name}", rec.timestamp));
        }
    }
    Ok(())
}

/// Writes `zone,date,hour,load,drybulb,dewpoint` (hour-ending, empty for
/// absent values). [`IngestConfig::canonical`] reads it back.
pub fn write_canonical_csv<W: Write>(records: &[HourlyRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["zone", "date", "hour", "load", "drybulb", "dewpoint"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for r in records {
        out.write_record([
            r.zone.clone(),
            r.timestamp.date().format("%Y-%m-%d").to_string(),
            r.timestamp.hour_ending().to_string(),
            opt(r.load),
            opt(r.drybulb),
            opt(r.dewpoint),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(days: u32, skip: Option<usize>, dup: Option<usize>) -> String {
        let mut s = String::from("Date,Hr_End,DEMAND,DryBulb,DewPnt\n");
        let mut n = 0;
        for d in 1..=days {
            for h in 1..=24 {
                let row = format!("2012-01-{d:02},{h},{},{},{}\n", 3000 + n, 20 + h, 10 + h);
                if Some(n) != skip {
                    s.push_str(&row);
                }
                if Some(n) == dup {
                    s.push_str(&row);
                }
                n += 1;
            }
        }
        s
    }

    fn config() -> IngestConfig {
        IngestConfig {
            default_zone: Some("ct".into()),
            ..IngestConfig::default()
        }
    }

    #[test]
    fn two_day_fixture() {
        let ds = ingest_reader(fixture(2, None, None).as_bytes(), &config()).unwrap();
        let recs = ds.zone("CT").unwrap();
        assert_eq!(recs.len(), 48);
        assert_eq!(recs[0].timestamp.hour(), 0);
        assert_eq!(recs[47].timestamp.to_string(), "2012-01-02 24");
        assert!(recs.windows(2).all(|w| w[1].timestamp == w[0].timestamp.next_hour()));
        assert_eq!(ds.summary.rows["CT"][&2012], 48);
    }

    #[test]
    fn duplicated_hour_rejected() {
        let err = ingest_reader(fixture(2, None, Some(5)).as_bytes(), &config()).unwrap_err();
        assert!(err.to_string().contains("2012-01-01 06"), "{err}");
        let keep = IngestConfig {
            duplicate_hours: DuplicatePolicy::KeepFirst,
            ..config()
        };
        let ds = ingest_reader(fixture(2, None, Some(5)).as_bytes(), &keep).unwrap();
        assert_eq!(ds.zone("CT").unwrap().len(), 48);
    }

    #[test]
    fn short_gap_inserted_without_load() {
        let ds = ingest_reader(fixture(2, Some(10), None).as_bytes(), &config()).unwrap();
        let recs = ds.zone("CT").unwrap();
        assert_eq!(recs.len(), 48);
        assert_eq!(recs[10].load, None);
        // drybulb 20+h: neighbours h=10 → 30 and h=12 → 32.
        assert_eq!(recs[10].drybulb, Some(31.0));
        assert_eq!(ds.summary.inserted_hours.len(), 1);
    }

    #[test]
    fn long_gap_is_error() {
        let text: String = fixture(2, None, None)
            .lines()
            .enumerate()
            .filter(|(i, _)| !(5..=8).contains(i))
            .map(|(_, l)| format!("{l}\n"))
            .collect();
        assert!(ingest_reader(text.as_bytes(), &config()).is_err());
    }

    #[test]
    fn bad_rows_threshold() {
        let text = fixture(1, None, None).replace("2012-01-01,3,", "2012-01-01,x,");
        let err = ingest_reader(text.as_bytes(), &config()).unwrap_err();
        assert!(err.to_string().contains("lines: 4"), "{err}");
        let lenient = IngestConfig { max_bad_rows: 1, ..config() };
        // The skipped hour becomes a short gap.
        let ds = ingest_reader(text.as_bytes(), &lenient).unwrap();
        assert_eq!(ds.zone("CT").unwrap()[2].load, None);
    }

    #[test]
    fn unmappable_columns() {
        let err = ingest_reader("a,b\n1,2\n".as_bytes(), &config()).unwrap_err();
        assert!(matches!(err, HopsError::Ingestion(_)));
    }

    #[test]
    fn missing_load_kept_absent() {
        let text = fixture(1, None, None).replace("2012-01-01,7,3006,", "2012-01-01,7,,");
        let ds = ingest_reader(text.as_bytes(), &config()).unwrap();
        assert_eq!(ds.zone("CT").unwrap()[6].load, None);
    }

    #[test]
    fn toml_config() {
        let cfg = IngestConfig::from_toml_str(
            "delimiter = ';'\ndefault_zone = 'ME'\n[columns]\ndemand = 'RT_DEMAND'\n",
        )
        .unwrap();
        assert_eq!(cfg.delimiter, ';');
        assert_eq!(cfg.columns.demand, "RT_DEMAND");
        assert_eq!(cfg.columns.hour, "Hr_End");
        assert!(IngestConfig::from_toml_str("delimiter = 5").is_err());
    }
}
