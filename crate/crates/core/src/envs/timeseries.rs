//! Wind / price time series: delimited-text ingestion, writing, and a
//! synthetic generator.
//!
//! Files carry a header naming `timestamp, actual_wind, forecast_wind,
//! price` (any order, extra columns ignored). Timestamps are epoch seconds
//! or RFC 3339 / `YYYY-MM-DD HH:MM:SS` (UTC).

use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub const COLUMNS: [&str; 4] = ["timestamp", "actual_wind", "forecast_wind", "price"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRow {
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub actual_wind: f64,
    pub forecast_wind: f64,
    pub price: f64,
}

impl TimeSeriesRow {
    /// Generation mismatch `actual - forecast`.
    pub fn mismatch(&self) -> f64 {
        self.actual_wind - self.forecast_wind
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub rows: Vec<TimeSeriesRow>,
}

/// Sidecar description of a delimited file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestFormat {
    pub delimiter: char,
    /// Skip rows with unparseable fields instead of failing.
    pub lenient: bool,
    pub power_unit: String,
    pub price_unit: String,
}

impl Default for IngestFormat {
    fn default() -> Self {
        IngestFormat {
            delimiter: ',',
            lenient: false,
            power_unit: "kWh".into(),
            price_unit: "currency/kWh".into(),
        }
    }
}

impl IngestFormat {
    /// Reads a TOML sidecar.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::invalid("format", e.to_string()))
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| Error::invalid("delimiter", "must be a single ASCII character"))
    }
}

fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Ok(t.timestamp());
    }
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S")
        .map(|t| t.and_utc().timestamp())
        .map_err(|_| format!("unrecognized timestamp `{raw}`"))
}

fn parse_number(raw: &str, column: &str) -> std::result::Result<f64, String> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("column `{column}`: `{}` is not a finite number", raw.trim()))
}

/// Parses and validates a delimited time-series file.
pub fn ingest_timeseries(path: &Path, format: &IngestFormat) -> Result<TimeSeriesDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter_byte()?)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers()?.clone();
    let index = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let cols = [
        index(COLUMNS[0])?,
        index(COLUMNS[1])?,
        index(COLUMNS[2])?,
        index(COLUMNS[3])?,
    ];

    let mut rows: Vec<TimeSeriesRow> = Vec::new();
    let mut last_line = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(cols[i]).unwrap_or("");
        let parsed = (|| -> std::result::Result<TimeSeriesRow, String> {
            Ok(TimeSeriesRow {
                timestamp: parse_timestamp(field(0))?,
                actual_wind: parse_number(field(1), COLUMNS[1])?,
                forecast_wind: parse_number(field(2), COLUMNS[2])?,
                price: parse_number(field(3), COLUMNS[3])?,
            })
        })();
        let row = match parsed {
            Ok(row) => row,
            Err(message) if format.lenient => {
                warn!("{}:{line}: skipping row: {message}", path.display());
                continue;
            }
            Err(message) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message,
                })
            }
        };
        if let Some(prev) = rows.last() {
            if row.timestamp <= prev.timestamp {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!(
                        "timestamps must increase strictly: {} follows {} (line {last_line})",
                        row.timestamp, prev.timestamp
                    ),
                });
            }
        }
        last_line = line;
        rows.push(row);
    }
    Ok(TimeSeriesDataset { rows })
}

/// Writes the dataset with epoch-second timestamps; numbers use the
/// shortest representation that parses back to the same value.
pub fn write_timeseries(dataset: &TimeSeriesDataset, path: &Path, format: &IngestFormat) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(format.delimiter_byte()?)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::invalid("path", format!("{other:?}")),
        })?;
    writer.write_record(COLUMNS)?;
    for row in &dataset.rows {
        writer.write_record([
            row.timestamp.to_string(),
            row.actual_wind.to_string(),
            row.forecast_wind.to_string(),
            row.price.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic wind / price generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSeries {
    pub rows: usize,
    pub start_timestamp: i64,
    pub resolution_secs: i64,
    /// Installed wind capacity per interval.
    pub wind_capacity: f64,
    pub mean_price: f64,
    /// Standard deviation of the forecast error relative to capacity.
    pub forecast_error: f64,
}

impl Default for SyntheticSeries {
    fn default() -> Self {
        SyntheticSeries {
            rows: 2016,
            start_timestamp: 1_577_836_800,
            resolution_secs: 300,
            wind_capacity: 6.0,
            mean_price: 40.0,
            forecast_error: 0.15,
        }
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Mean-reverting wind with a persistent forecast error and a daily price
/// cycle. Values are rounded to three decimals so files stay readable.
pub fn generate_synthetic(params: &SyntheticSeries, seed: u64) -> Result<TimeSeriesDataset> {
    if params.rows < 2 || params.resolution_secs <= 0 || !(params.wind_capacity > 0.0) {
        return Err(Error::invalid("synthetic", "need rows ≥ 2, positive resolution and capacity"));
    }
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let cap = params.wind_capacity;
    let mut wind = 0.5 * cap;
    let mut error = 0.0;
    let mut price_noise = 0.0;
    let day = 86_400.0 / params.resolution_secs as f64;
    let rows = (0..params.rows)
        .map(|t| {
            wind += 0.05 * (0.5 * cap - wind) + 0.06 * cap * normal.sample(&mut rng);
            wind = wind.clamp(0.0, cap);
            error = 0.9 * error + params.forecast_error * cap * 0.45 * normal.sample(&mut rng);
            price_noise = 0.8 * price_noise + 0.1 * params.mean_price * normal.sample(&mut rng);
            let cycle = (2.0 * std::f64::consts::PI * t as f64 / day).sin();
            let spike = if rng.random::<f64>() < 0.01 { params.mean_price } else { 0.0 };
            let price = (params.mean_price * (1.0 + 0.3 * cycle) + price_noise + spike).max(0.0);
            TimeSeriesRow {
                timestamp: params.start_timestamp + t as i64 * params.resolution_secs,
                actual_wind: round3(wind),
                forecast_wind: round3((wind - error).clamp(0.0, cap)),
                price: round3(price),
            }
        })
        .collect();
    Ok(TimeSeriesDataset { rows })
}
