//! Design-matrix construction for hourly load data.
//!
//! Every variable set is described by a [`VariableSpec`]: an ordered list of
//! column blocks (calendar dummies, temperature powers, temperature ×
//! calendar interactions, humidity terms, lags and daily moving averages).
//! [`build_design_matrix`] materializes the raw columns; Min-Max
//! normalization is fitted separately on training rows only.

use std::fmt;
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, HopsError, Result};
use crate::numerics::Matrix;

/// Hour-resolution local timestamp. Internally the hour is `0..=23`; the
/// source data's hour-ending `1..=24` convention is restored for display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(NaiveDateTime);

impl Timestamp {
    /// `hour_ending` in `1..=24`.
    pub fn from_hour_ending(date: NaiveDate, hour_ending: u32) -> Result<Self> {
        if !(1..=24).contains(&hour_ending) {
            return Err(HopsError::InputRange(format!(
                "hour {hour_ending} outside 1..=24 on {date}"
            )));
        }
        Ok(Self(date.and_hms_opt(hour_ending - 1, 0, 0).expect("hour < 24")))
    }

    pub fn date(&self) -> NaiveDate {
        self.0.date()
    }

    /// `0..=23`.
    pub fn hour(&self) -> u32 {
        self.0.hour()
    }

    pub fn hour_ending(&self) -> u32 {
        self.0.hour() + 1
    }

    pub fn year(&self) -> i32 {
        self.0.year()
    }

    /// `0` = Monday.
    pub fn weekday(&self) -> u32 {
        self.0.weekday().num_days_from_monday()
    }

    /// `1..=12`.
    pub fn month(&self) -> u32 {
        self.0.month()
    }

    pub fn next_hour(&self) -> Self {
        Self(self.0 + Duration::hours(1))
    }

    /// Signed whole hours from `earlier` to `self`.
    pub fn hours_since(&self, earlier: &Timestamp) -> i64 {
        (self.0 - earlier.0).num_hours()
    }
}

/// Parses the `YYYY-MM-DD HH` display form (hour-ending).
impl std::str::FromStr for Timestamp {
    type Err = HopsError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HopsError::InputRange(format!("unparseable timestamp '{s}'"));
        let (date, hour) = s.trim().split_once(' ').ok_or_else(bad)?;
        let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| bad())?;
        Self::from_hour_ending(date, hour.trim().parse().map_err(|_| bad())?)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:02}", self.date(), self.hour_ending())
    }
}

/// One hour of one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    pub timestamp: Timestamp,
    /// MW; absent for rows to be forecast.
    pub load: Option<f64>,
    /// °F.
    pub drybulb: Option<f64>,
    /// °F.
    pub dewpoint: Option<f64>,
    pub zone: String,
}

/// A named raw column.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedColumn {
    pub name: String,
    pub values: Vec<f64>,
}

impl NamedColumn {
    fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

// ---------------------------------------------------------------------------
// Humidity
// ---------------------------------------------------------------------------

fn fahrenheit_to_celsius(f: f64) -> f64 {
    (f - 32.0) * 5.0 / 9.0
}

/// Tetens saturation vapour pressure (hPa) at `t` °C.
fn tetens_saturation(t: f64) -> Result<f64> {
    let denom = t + 237.3;
    if denom <= 0.0 {
        return Err(HopsError::InputRange(format!(
            "temperature {t:.2} °C is below the Tetens validity bound"
        )));
    }
    Ok(6.1078 * (17.27 * t / denom).exp())
}

/// Relative humidity in percent from drybulb and dewpoint (°F), clamped to
/// `[0, 100]`.
pub fn relative_humidity(drybulb_f: f64, dewpoint_f: f64) -> Result<f64> {
    if !drybulb_f.is_finite() || !dewpoint_f.is_finite() {
        return Err(HopsError::InputRange("non-finite temperature".into()));
    }
    let e_dew = tetens_saturation(fahrenheit_to_celsius(dewpoint_f))?;
    let e_dry = tetens_saturation(fahrenheit_to_celsius(drybulb_f))?;
    Ok((100.0 * e_dew / e_dry).clamp(0.0, 100.0))
}

// ---------------------------------------------------------------------------
// Calendar
// ---------------------------------------------------------------------------

pub fn hour_name(h: u32) -> String {
    format!("H_{:02}", h + 1)
}

fn one_hot(name: impl Fn(u32) -> String, count: u32, idx: impl Fn(&Timestamp) -> u32, ts: &[Timestamp]) -> Vec<NamedColumn> {
    (0..count)
        .map(|c| {
            NamedColumn::new(
                name(c),
                ts.iter().map(|t| f64::from(u8::from(idx(t) == c))).collect(),
            )
        })
        .collect()
}

/// `Trend` (1, 2, 3, …), then `H_01..H_24`, `W_01..W_07` (Monday first) and
/// `M_01..M_12` one-hot groups.
pub fn calendar_features(timestamps: &[Timestamp]) -> Vec<NamedColumn> {
    let mut cols = vec![NamedColumn::new(
        "Trend",
        (1..=timestamps.len()).map(|i| i as f64).collect(),
    )];
    cols.extend(one_hot(hour_name, 24, Timestamp::hour, timestamps));
    cols.extend(one_hot(|w| format!("W_{:02}", w + 1), 7, Timestamp::weekday, timestamps));
    cols.extend(one_hot(|m| format!("M_{:02}", m + 1), 12, |t| t.month() - 1, timestamps));
    cols
}

// ---------------------------------------------------------------------------
// Variable specifications
// ---------------------------------------------------------------------------

/// Where a temperature series comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TempSource {
    /// `T_{t−h}`; `Lag(0)` is the concurrent temperature.
    Lag(usize),
    /// `T̃_{t,d}`, the mean of `T_{t−24d+23} … T_{t−24d}`.
    MovingAverage(usize),
}

impl TempSource {
    fn label(self, power: u32) -> String {
        let p = if power == 1 { String::new() } else { power.to_string() };
        match self {
            TempSource::Lag(0) => format!("T{p}"),
            TempSource::Lag(h) => format!("T{p}_L{h}"),
            TempSource::MovingAverage(d) => format!("MA_T{p}_{d}"),
        }
    }

    /// Hours of history needed before the first usable row.
    fn history(self) -> usize {
        match self {
            TempSource::Lag(h) => h,
            TempSource::MovingAverage(d) => 24 * d,
        }
    }
}

/// One group of columns in a design matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Trend,
    Hour,
    Weekday,
    Month,
    /// 168 hour × weekday dummies.
    HourXWeekday,
    /// `T, T², T³` of the source.
    TempPowers(TempSource),
    /// `T^p · H_j` for `p = 1..3`, 72 columns.
    TempXHour(TempSource),
    /// `T^p · M_j` for `p = 1..3`, 36 columns.
    TempXMonth(TempSource),
    /// `RH, RH², RH³`.
    HumidityPowers,
    /// `RHS, RHS², T·RHS, T²·RHS, T·RHS², T²·RHS²`.
    SummerHumidity,
    /// `H_j·RHS` then `H_j·RHS²`, 48 columns.
    HourXSummerHumidity,
}

impl Block {
    pub fn width(&self) -> usize {
        match self {
            Block::Trend => 1,
            Block::Hour => 24,
            Block::Weekday => 7,
            Block::Month => 12,
            Block::HourXWeekday => 168,
            Block::TempPowers(_) | Block::HumidityPowers => 3,
            Block::TempXHour(_) => 72,
            Block::TempXMonth(_) => 36,
            Block::SummerHumidity => 6,
            Block::HourXSummerHumidity => 48,
        }
    }

    fn history(&self) -> usize {
        match self {
            Block::TempPowers(s) | Block::TempXHour(s) | Block::TempXMonth(s) => s.history(),
            _ => 0,
        }
    }

    fn needs_dewpoint(&self) -> bool {
        matches!(
            self,
            Block::HumidityPowers | Block::SummerHumidity | Block::HourXSummerHumidity
        )
    }
}

/// Recency parameters: lags `0..=h` and moving averages `1..=d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recency {
    pub h: usize,
    pub d: usize,
}

/// Canonical names accepted by [`VariableSpec::named`].
pub const NAMED_SPECS: [&str; 8] = ["hops47", "hops50", "hops59", "hops289", "g1", "h1", "g2", "h2"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub blocks: Vec<Block>,
    pub recency: Option<Recency>,
    /// Column total the named spec must produce.
    pub declared_count: Option<usize>,
}

fn g1_blocks() -> Vec<Block> {
    vec![
        Block::Trend,
        Block::Month,
        Block::HourXWeekday,
        Block::TempXHour(TempSource::Lag(0)),
        Block::TempXMonth(TempSource::Lag(0)),
    ]
}

fn g2_blocks() -> Vec<Block> {
    let mut b = g1_blocks();
    for h in 1..=3 {
        b.push(Block::TempXHour(TempSource::Lag(h)));
        b.push(Block::TempXMonth(TempSource::Lag(h)));
    }
    b
}

fn hops47_blocks() -> Vec<Block> {
    vec![
        Block::Trend,
        Block::Hour,
        Block::Weekday,
        Block::Month,
        Block::TempPowers(TempSource::Lag(0)),
    ]
}

fn humidity_benchmark_blocks() -> [Block; 2] {
    [Block::SummerHumidity, Block::HourXSummerHumidity]
}

impl VariableSpec {
    fn declared(name: &str, blocks: Vec<Block>, count: usize) -> Self {
        Self {
            name: name.to_string(),
            blocks,
            recency: None,
            declared_count: Some(count),
        }
    }

    /// One of [`NAMED_SPECS`].
    pub fn named(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        let spec = match lower.as_str() {
            "hops47" => Self::declared("hops47", hops47_blocks(), 47),
            "hops50" => {
                let mut b = hops47_blocks();
                b.push(Block::HumidityPowers);
                Self::declared("hops50", b, 50)
            }
            "hops59" => {
                let mut b = hops47_blocks();
                b.push(Block::HumidityPowers);
                b.extend((1..=3).map(|h| Block::TempPowers(TempSource::Lag(h))));
                Self::declared("hops59", b, 59)
            }
            "hops289" => Self::declared("hops289", g1_blocks(), 289),
            "g1" => Self::declared("g1", g1_blocks(), 289),
            "h1" => {
                let mut b = g1_blocks();
                b.extend(humidity_benchmark_blocks());
                Self::declared("h1", b, 343)
            }
            "g2" => Self::declared("g2", g2_blocks(), 613),
            "h2" => {
                let mut b = g2_blocks();
                b.extend(humidity_benchmark_blocks());
                Self::declared("h2", b, 667)
            }
            _ => {
                return Err(HopsError::InvalidParameter(format!(
                    "unknown variable spec '{name}'; valid: {}, recency_h<H>_d<D>, rehops_h<H>_d<D>",
                    NAMED_SPECS.join(", ")
                )))
            }
        };
        Ok(spec)
    }

    /// Parses named specs plus the parameterized `recency_h3_d2` /
    /// `rehops_h3_d2` forms.
    pub fn parse(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        for (prefix, ctor) in [
            ("recency_", Self::recency as fn(usize, usize) -> Result<Self>),
            ("rehops_", Self::rehops),
        ] {
            if let Some(rest) = lower.strip_prefix(prefix) {
                let parsed = rest
                    .strip_prefix('h')
                    .and_then(|r| r.split_once("_d"))
                    .and_then(|(h, d)| Some((h.parse().ok()?, d.parse().ok()?)));
                return match parsed {
                    Some((h, d)) => ctor(h, d),
                    None => Err(HopsError::InvalidParameter(format!(
                        "malformed recency spec '{name}', expected {prefix}h<H>_d<D>"
                    ))),
                };
            }
        }
        Self::named(name)
    }

    /// Benchmark Recency regression: `Trend, M, H×W` plus `f(T_{t−i})` for
    /// `i = 0..=h` and `f(T̃_{t,j})` for `j = 1..=d`, where `f` contributes
    /// `T^p·H` and `T^p·M` cross terms.
    pub fn recency(h: usize, d: usize) -> Result<Self> {
        check_recency_range(h, d)?;
        let mut blocks = vec![Block::Trend, Block::Month, Block::HourXWeekday];
        for src in recency_sources(h, d) {
            blocks.push(Block::TempXHour(src));
            blocks.push(Block::TempXMonth(src));
        }
        Ok(Self {
            name: format!("recency_h{h}_d{d}"),
            blocks,
            recency: Some(Recency { h, d }),
            declared_count: Some(181 + 108 * (h + 1 + d)),
        })
    }

    /// Recency inputs for the polynomial model: HOPS47 calendar columns plus
    /// powers of every lag `0..=h` and moving average `1..=d`, no
    /// interactions.
    pub fn rehops(h: usize, d: usize) -> Result<Self> {
        check_recency_range(h, d)?;
        let mut blocks = vec![Block::Trend, Block::Hour, Block::Weekday, Block::Month];
        blocks.extend(recency_sources(h, d).map(Block::TempPowers));
        Ok(Self {
            name: format!("rehops_h{h}_d{d}"),
            blocks,
            recency: Some(Recency { h, d }),
            declared_count: Some(44 + 3 * (h + 1 + d)),
        })
    }

    pub fn column_count(&self) -> usize {
        self.blocks.iter().map(Block::width).sum()
    }

    /// Hours of history consumed before the first usable row.
    pub fn history(&self) -> usize {
        self.blocks.iter().map(Block::history).max().unwrap_or(0)
    }

    pub fn uses_humidity(&self) -> bool {
        self.blocks.iter().any(Block::needs_dewpoint)
    }

    pub fn uses_summer_interaction(&self) -> bool {
        self.blocks
            .iter()
            .any(|b| matches!(b, Block::SummerHumidity | Block::HourXSummerHumidity))
    }

    /// Index of the `Trend` column, if present.
    pub fn trend_column(&self) -> Option<usize> {
        let mut offset = 0;
        for b in &self.blocks {
            if *b == Block::Trend {
                return Some(offset);
            }
            offset += b.width();
        }
        None
    }

    /// Canonical column names in order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.column_count());
        for b in &self.blocks {
            match b {
                Block::Trend => names.push("Trend".into()),
                Block::Hour => names.extend((0..24).map(hour_name)),
                Block::Weekday => names.extend((1..=7).map(|w| format!("W_{w:02}"))),
                Block::Month => names.extend((1..=12).map(|m| format!("M_{m:02}"))),
                Block::HourXWeekday => {
                    for h in 1..=24 {
                        for w in 1..=7 {
                            names.push(format!("HxW_{h:02}_{w}"));
                        }
                    }
                }
                Block::TempPowers(s) => names.extend((1..=3).map(|p| s.label(p))),
                Block::TempXHour(s) => {
                    for p in 1..=3 {
                        names.extend((1..=24).map(|h| format!("{}xH_{h:02}", s.label(p))));
                    }
                }
                Block::TempXMonth(s) => {
                    for p in 1..=3 {
                        names.extend((1..=12).map(|m| format!("{}xM_{m:02}", s.label(p))));
                    }
                }
                Block::HumidityPowers => names.extend(["RH", "RH2", "RH3"].map(String::from)),
                Block::SummerHumidity => names.extend(
                    ["RHS", "RHS2", "TxRHS", "T2xRHS", "TxRHS2", "T2xRHS2"].map(String::from),
                ),
                Block::HourXSummerHumidity => {
                    names.extend((1..=24).map(|h| format!("HxRHS_{h:02}")));
                    names.extend((1..=24).map(|h| format!("HxRHS2_{h:02}")));
                }
            }
        }
        names
    }
}

fn check_recency_range(h: usize, d: usize) -> Result<()> {
    if h > 24 || !(1..=7).contains(&d) {
        return Err(HopsError::InvalidParameter(format!(
            "recency parameters h={h}, d={d} outside h in 0..=24, d in 1..=7"
        )));
    }
    Ok(())
}

fn recency_sources(h: usize, d: usize) -> impl Iterator<Item = TempSource> {
    (0..=h)
        .map(TempSource::Lag)
        .chain((1..=d).map(TempSource::MovingAverage))
}

// ---------------------------------------------------------------------------
// Recency columns
// ---------------------------------------------------------------------------

/// Series of `source` aligned with `temps[start..]`.
fn temp_series(temps: &[f64], source: TempSource, start: usize) -> Vec<f64> {
    match source {
        TempSource::Lag(h) => temps[start - h..temps.len() - h].to_vec(),
        TempSource::MovingAverage(d) => (start..temps.len())
            .map(|t| temps[t - 24 * d..t - 24 * d + 24].iter().sum::<f64>() / 24.0)
            .collect(),
    }
}

/// Lagged temperatures `T_{t−1} … T_{t−h}` and daily moving averages
/// `T̃_{t,1} … T̃_{t,d}`, each raised to powers `1..=max_power`.
///
/// Columns are aligned with `records[first_row..]`, `first_row` being the
/// returned history length `max(h, 24·d)`.
pub fn recency_columns(
    records: &[HourlyRecord],
    h: usize,
    d: usize,
    max_power: u32,
) -> Result<(Vec<NamedColumn>, usize)> {
    check_recency_range(h, d)?;
    let temps = drybulb_series(records)?;
    let start = h.max(24 * d);
    if temps.len() <= start {
        return Err(HopsError::InsufficientHistory {
            needed: start,
            available: temps.len(),
        });
    }
    let mut cols = Vec::new();
    let sources = (1..=h)
        .map(TempSource::Lag)
        .chain((1..=d).map(TempSource::MovingAverage));
    for src in sources {
        let base = temp_series(&temps, src, start);
        for p in 1..=max_power {
            cols.push(NamedColumn::new(
                src.label(p),
                base.iter().map(|v| v.powi(p as i32)).collect(),
            ));
        }
    }
    Ok((cols, start))
}

fn drybulb_series(records: &[HourlyRecord]) -> Result<Vec<f64>> {
    let missing: Vec<String> = records
        .iter()
        .filter(|r| r.drybulb.is_none())
        .map(|r| r.timestamp.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(HopsError::MissingWeather(missing));
    }
    Ok(records.iter().map(|r| r.drybulb.unwrap()).collect())
}

// ---------------------------------------------------------------------------
// Design matrix
// ---------------------------------------------------------------------------

/// Raw (unnormalized) design matrix with names and row timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub matrix: Matrix,
    pub names: Vec<String>,
    pub timestamps: Vec<Timestamp>,
    pub loads: Vec<Option<f64>>,
    /// Leading records dropped for lag warm-up.
    pub dropped_rows: usize,
    pub trend_column: Option<usize>,
}

impl FeatureMatrix {
    /// Row indices whose timestamp year lies in `years`.
    pub fn rows_in_years(&self, years: &[i32]) -> Vec<usize> {
        self.timestamps
            .iter()
            .enumerate()
            .filter(|(_, t)| years.contains(&t.year()))
            .map(|(i, _)| i)
            .collect()
    }

    /// CSV with `timestamp,load` followed by the canonical column names.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["timestamp".to_string(), "load".to_string()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header)?;
        for i in 0..self.matrix.rows() {
            let mut rec = vec![
                self.timestamps[i].to_string(),
                self.loads[i].map_or_else(String::new, |v| v.to_string()),
            ];
            rec.extend(self.matrix.row(i).iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_contiguous(records: &[HourlyRecord]) -> Result<()> {
    for pair in records.windows(2) {
        if pair[1].timestamp != pair[0].timestamp.next_hour() {
            return Err(HopsError::InvalidParameter(format!(
                "records not contiguous hourly: {} followed by {}",
                pair[0].timestamp, pair[1].timestamp
            )));
        }
    }
    Ok(())
}

/// Builds the raw columns of `spec` over `records`. The first
/// `spec.history()` records only supply lag history and produce no row.
/// `Trend` counts from 1 at the first record.
pub fn build_design_matrix(records: &[HourlyRecord], spec: &VariableSpec) -> Result<FeatureMatrix> {
    check_contiguous(records)?;
    let start = spec.history();
    if records.len() <= start {
        return Err(HopsError::InsufficientHistory {
            needed: start,
            available: records.len(),
        });
    }
    let temps = drybulb_series(records)?;
    let rh = if spec.uses_humidity() {
        let missing: Vec<String> = records[start..]
            .iter()
            .filter(|r| r.dewpoint.is_none())
            .map(|r| r.timestamp.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(HopsError::MissingWeather(missing));
        }
        Some(
            records[start..]
                .iter()
                .map(|r| relative_humidity(r.drybulb.unwrap(), r.dewpoint.unwrap()))
                .collect::<Result<Vec<f64>>>()?,
        )
    } else {
        None
    };

    let rows = records.len() - start;
    let ts: Vec<Timestamp> = records[start..].iter().map(|r| r.timestamp).collect();
    let t0 = &temps[start..];
    let summer: Vec<f64> = ts
        .iter()
        .map(|t| f64::from(u8::from((6..=9).contains(&t.month()))))
        .collect();
    let rhs: Option<Vec<f64>> = rh
        .as_ref()
        .map(|rh| rh.iter().zip(&summer).map(|(r, s)| r * s).collect());

    let width = spec.column_count();
    let mut data = vec![0.0; rows * width];
    let mut offset = 0;
    for block in &spec.blocks {
        let mut set = |row: usize, col: usize, v: f64| data[row * width + offset + col] = v;
        match block {
            Block::Trend => {
                for r in 0..rows {
                    set(r, 0, (start + r + 1) as f64);
                }
            }
            Block::Hour => {
                for (r, t) in ts.iter().enumerate() {
                    set(r, t.hour() as usize, 1.0);
                }
            }
            Block::Weekday => {
                for (r, t) in ts.iter().enumerate() {
                    set(r, t.weekday() as usize, 1.0);
                }
            }
            Block::Month => {
                for (r, t) in ts.iter().enumerate() {
                    set(r, t.month() as usize - 1, 1.0);
                }
            }
            Block::HourXWeekday => {
                for (r, t) in ts.iter().enumerate() {
                    set(r, t.hour() as usize * 7 + t.weekday() as usize, 1.0);
                }
            }
            Block::TempPowers(src) => {
                let s = temp_series(&temps, *src, start);
                for (r, v) in s.iter().enumerate() {
                    for p in 0..3 {
                        set(r, p, v.powi(p as i32 + 1));
                    }
                }
            }
            Block::TempXHour(src) => {
                let s = temp_series(&temps, *src, start);
                for (r, (v, t)) in s.iter().zip(&ts).enumerate() {
                    for p in 0..3 {
                        set(r, p * 24 + t.hour() as usize, v.powi(p as i32 + 1));
                    }
                }
            }
            Block::TempXMonth(src) => {
                let s = temp_series(&temps, *src, start);
                for (r, (v, t)) in s.iter().zip(&ts).enumerate() {
                    for p in 0..3 {
                        set(r, p * 12 + t.month() as usize - 1, v.powi(p as i32 + 1));
                    }
                }
            }
            Block::HumidityPowers => {
                for (r, v) in rh.as_ref().unwrap().iter().enumerate() {
                    for p in 0..3 {
                        set(r, p, v.powi(p as i32 + 1));
                    }
                }
            }
            Block::SummerHumidity => {
                for (r, (s, t)) in rhs.as_ref().unwrap().iter().zip(t0).enumerate() {
                    let (s, t) = (*s, *t);
                    let vals = [s, s * s, t * s, t * t * s, t * s * s, t * t * s * s];
                    for (c, v) in vals.into_iter().enumerate() {
                        set(r, c, v);
                    }
                }
            }
            Block::HourXSummerHumidity => {
                for (r, (s, t)) in rhs.as_ref().unwrap().iter().zip(&ts).enumerate() {
                    let h = t.hour() as usize;
                    set(r, h, *s);
                    set(r, 24 + h, s * s);
                }
            }
        }
        offset += block.width();
    }

    let names = spec.column_names();
    check_dims("design column names", width, names.len())?;
    if let Some(declared) = spec.declared_count {
        check_dims("declared variable count", declared, width)?;
    }
    Ok(FeatureMatrix {
        matrix: Matrix::new(rows, width, data)?,
        names,
        timestamps: ts,
        loads: records[start..].iter().map(|r| r.load).collect(),
        dropped_rows: start,
        trend_column: spec.trend_column(),
    })
}

/// [`build_design_matrix`] with `Trend` counted from `origin` instead of the
/// first record, so that a model fitted on one span scores another span on
/// the same time axis.
pub fn build_design_matrix_from(
    records: &[HourlyRecord],
    spec: &VariableSpec,
    origin: Timestamp,
) -> Result<FeatureMatrix> {
    let mut fm = build_design_matrix(records, spec)?;
    if let (Some(col), Some(first)) = (fm.trend_column, records.first()) {
        let shift = first.timestamp.hours_since(&origin) as f64;
        for i in 0..fm.matrix.rows() {
            let v = fm.matrix.get(i, col);
            fm.matrix.set(i, col, v + shift);
        }
    }
    Ok(fm)
}

/// Feature set name plus `Trend` origin, stored alongside fitted models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureContext {
    pub spec: String,
    pub trend_origin: Timestamp,
}

impl FeatureContext {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-column Min-Max scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxNormalizer {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl MinMaxNormalizer {
    pub fn fit(x_train: &Matrix) -> Result<Self> {
        if x_train.rows() == 0 {
            return Err(HopsError::InvalidParameter(
                "cannot fit a normalizer on zero rows".into(),
            ));
        }
        let mut mins = x_train.row(0).to_vec();
        let mut maxs = mins.clone();
        for i in 1..x_train.rows() {
            for (j, &v) in x_train.row(i).iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Ok(Self { mins, maxs })
    }

    pub fn from_parts(mins: Vec<f64>, maxs: Vec<f64>) -> Result<Self> {
        check_dims("MinMaxNormalizer bounds", mins.len(), maxs.len())?;
        if mins.iter().zip(&maxs).any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi >= lo)) {
            return Err(HopsError::InvalidParameter(
                "normalizer bounds must be finite with max >= min".into(),
            ));
        }
        Ok(Self { mins, maxs })
    }

    pub fn mins(&self) -> &[f64] {
        &self.mins
    }

    pub fn maxs(&self) -> &[f64] {
        &self.maxs
    }

    #[inline]
    fn scale(&self, j: usize, v: f64) -> f64 {
        let span = self.maxs[j] - self.mins[j];
        if span > 0.0 {
            (v - self.mins[j]) / span
        } else {
            0.0
        }
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        check_dims("MinMaxNormalizer row length", self.mins.len(), row.len())?;
        Ok(row.iter().enumerate().map(|(j, &v)| self.scale(j, v)).collect())
    }

    /// `(x − min)/(max − min)` per column; constant columns map to 0 and
    /// values outside the training range are not clamped.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        check_dims("MinMaxNormalizer columns", self.mins.len(), x.cols())?;
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| self.scale(j, x.get(i, j))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(y: i32, m: u32, d: u32, he: u32) -> Timestamp {
        Timestamp::from_hour_ending(NaiveDate::from_ymd_opt(y, m, d).unwrap(), he).unwrap()
    }

    pub(crate) fn series(start: Timestamp, temps: &[f64]) -> Vec<HourlyRecord> {
        let mut t = start;
        temps
            .iter()
            .map(|&v| {
                let r = HourlyRecord {
                    timestamp: t,
                    load: Some(100.0 + v),
                    drybulb: Some(v),
                    dewpoint: Some(v - 10.0),
                    zone: "CT".into(),
                };
                t = t.next_hour();
                r
            })
            .collect()
    }

    #[test]
    fn saturation_gives_100() {
        for t in [-20.0, 32.0, 68.0, 101.5] {
            assert!((relative_humidity(t, t).unwrap() - 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tetens_reference_point() {
        // Direct Tetens evaluation: 20 °C drybulb, 10 °C dewpoint.
        let rh = relative_humidity(68.0, 50.0).unwrap();
        assert!((rh - 52.51560770755027).abs() < 1e-9);
        assert!((rh - 52.5).abs() < 0.5);
    }

    #[test]
    fn very_dry_is_small_but_positive() {
        let rh = relative_humidity(100.0, -40.0).unwrap();
        assert!(rh > 0.0 && rh < 1.0);
    }

    #[test]
    fn tetens_range_error() {
        assert!(matches!(
            relative_humidity(50.0, -500.0),
            Err(HopsError::InputRange(_))
        ));
    }

    #[test]
    fn hour_one_is_first_dummy() {
        let cols = calendar_features(&[ts(2012, 1, 1, 1)]);
        assert_eq!(cols[1].name, "H_01");
        assert_eq!(cols[1].values, vec![1.0]);
        assert!(cols[2..25].iter().all(|c| c.values == vec![0.0]));
    }

    #[test]
    fn trend_over_three_years() {
        let mut t = ts(2012, 1, 1, 1);
        let mut stamps = Vec::new();
        while t.year() < 2015 {
            stamps.push(t);
            t = t.next_hour();
        }
        let cols = calendar_features(&stamps);
        assert_eq!(*cols[0].values.last().unwrap(), 26304.0);
    }

    #[test]
    fn named_counts() {
        for (name, n) in [
            ("hops47", 47),
            ("hops50", 50),
            ("hops59", 59),
            ("hops289", 289),
            ("g1", 289),
            ("h1", 343),
            ("g2", 613),
            ("h2", 667),
        ] {
            let spec = VariableSpec::named(name).unwrap();
            assert_eq!(spec.column_count(), n, "{name}");
            assert_eq!(spec.column_names().len(), n, "{name}");
        }
        assert!(VariableSpec::named("g7").is_err());
    }

    #[test]
    fn parse_recency_names() {
        let s = VariableSpec::parse("rehops_h3_d2").unwrap();
        assert_eq!(s.recency, Some(Recency { h: 3, d: 2 }));
        assert_eq!(s.column_count(), 44 + 3 * 6);
        assert_eq!(VariableSpec::parse("recency_h0_d1").unwrap().column_count(), 181 + 216);
        assert!(VariableSpec::parse("rehops_h30_d2").is_err());
        assert!(VariableSpec::parse("rehops_x").is_err());
    }

    #[test]
    fn constant_series_moving_average() {
        let recs = series(ts(2012, 1, 1, 1), &[55.0; 200]);
        let (cols, start) = recency_columns(&recs, 2, 3, 1).unwrap();
        assert_eq!(start, 72);
        assert!(cols.iter().all(|c| c.values.iter().all(|&v| v == 55.0)));
    }

    #[test]
    fn h_zero_d_one_only_moving_average() {
        let recs = series(ts(2012, 1, 1, 1), &[50.0; 30]);
        let (cols, _) = recency_columns(&recs, 0, 1, 1).unwrap();
        assert_eq!(cols.len(), 1);
        assert_eq!(cols[0].name, "MA_T_1");
    }

    #[test]
    fn ramp_moving_average() {
        let temps: Vec<f64> = (0..100).map(f64::from).collect();
        let recs = series(ts(2012, 1, 1, 1), &temps);
        let (cols, start) = recency_columns(&recs, 0, 1, 1).unwrap();
        for (i, v) in cols[0].values.iter().enumerate() {
            let t = (start + i) as f64;
            assert!((v - (t - 12.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn insufficient_history() {
        let recs = series(ts(2012, 1, 1, 1), &[50.0; 24]);
        assert!(matches!(
            recency_columns(&recs, 0, 1, 1),
            Err(HopsError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn design_one_hot_partition_and_trend() {
        let temps: Vec<f64> = (0..24 * 40).map(|i| 40.0 + (i % 17) as f64).collect();
        let recs = series(ts(2012, 5, 20, 1), &temps);
        let spec = VariableSpec::named("hops59").unwrap();
        let fm = build_design_matrix(&recs, &spec).unwrap();
        assert_eq!(fm.dropped_rows, 3);
        assert_eq!(fm.matrix.cols(), 59);
        assert_eq!(fm.matrix.get(0, 0), 4.0);
        for i in 0..fm.matrix.rows() {
            let row = fm.matrix.row(i);
            assert_eq!(row[1..25].iter().sum::<f64>(), 1.0);
            assert_eq!(row[25..32].iter().sum::<f64>(), 1.0);
            assert_eq!(row[32..44].iter().sum::<f64>(), 1.0);
        }
        // T_L1 column equals previous row's T.
        let t_col = fm.names.iter().position(|n| n == "T").unwrap();
        let l1_col = fm.names.iter().position(|n| n == "T_L1").unwrap();
        for i in 1..fm.matrix.rows() {
            assert_eq!(fm.matrix.get(i, l1_col), fm.matrix.get(i - 1, t_col));
        }
    }

    #[test]
    fn rhs_zero_outside_summer() {
        let temps: Vec<f64> = (0..24 * 10).map(|i| 60.0 + (i % 5) as f64).collect();
        let recs = series(ts(2012, 5, 27, 1), &temps);
        let fm = build_design_matrix(&recs, &VariableSpec::named("h1").unwrap()).unwrap();
        let rhs = fm.names.iter().position(|n| n == "RHS").unwrap();
        for (i, t) in fm.timestamps.iter().enumerate() {
            let v = fm.matrix.get(i, rhs);
            if t.month() == 5 {
                assert_eq!(v, 0.0);
            } else {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn missing_weather_lists_timestamps() {
        let mut recs = series(ts(2012, 1, 1, 1), &[50.0; 10]);
        recs[4].drybulb = None;
        match build_design_matrix(&recs, &VariableSpec::named("hops47").unwrap()) {
            Err(HopsError::MissingWeather(list)) => assert_eq!(list, vec!["2012-01-01 05".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_contiguous_rejected() {
        let mut recs = series(ts(2012, 1, 1, 1), &[50.0; 10]);
        recs.remove(3);
        assert!(build_design_matrix(&recs, &VariableSpec::named("hops47").unwrap()).is_err());
    }

    #[test]
    fn normalizer_behaviour() {
        let x = Matrix::from_rows(&[[0.0, 1.0, 3.0], [5.0, 0.0, 3.0], [10.0, 1.0, 3.0]]).unwrap();
        let norm = MinMaxNormalizer::fit(&x).unwrap();
        let z = norm.apply(&x).unwrap();
        assert_eq!(z.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(z.column(1), vec![1.0, 0.0, 1.0]);
        assert_eq!(z.column(2), vec![0.0, 0.0, 0.0]);
        let test = Matrix::from_rows(&[[20.0, 1.0, 4.0]]).unwrap();
        assert_eq!(norm.apply(&test).unwrap().row(0), &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn trend_origin_shift() {
        let recs = series(ts(2012, 1, 1, 1), &[50.0; 48]);
        let spec = VariableSpec::named("g1").unwrap();
        let whole = build_design_matrix(&recs, &spec).unwrap();
        let tail = build_design_matrix_from(&recs[24..], &spec, recs[0].timestamp).unwrap();
        let col = whole.trend_column.unwrap();
        assert_eq!(tail.matrix.get(0, col), whole.matrix.get(24, col));
        assert_eq!(tail.matrix.get(0, col), 25.0);
        let ctx = FeatureContext { spec: "g1".into(), trend_origin: recs[0].timestamp };
        assert_eq!(FeatureContext::from_json(&ctx.to_json()).unwrap(), ctx);
    }

    #[test]
    fn timestamp_display_parses_back() {
        let t = ts(2014, 3, 9, 24);
        assert_eq!(t.to_string().parse::<Timestamp>().unwrap(), t);
        assert!("2014-03-09 25".parse::<Timestamp>().is_err());
        assert!("2014-03-09".parse::<Timestamp>().is_err());
    }
}
