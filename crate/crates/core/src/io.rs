//! Artifact formats.
//!
//! Every CSV file starts with a schema line
//! `# tlsbath.<kind> v<version> key=value ...` followed by a column header.
//! Floats are written in Rust's shortest round-trip notation. Binary traces
//! hold `b"TLSF"`, a little-endian `u32` sample count, an `f64` sample
//! interval and the `f64` samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::detector::Demodulated;
use crate::dynamics::ShiftTrace;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const BIN_MAGIC: &[u8; 4] = b"TLSF";
const BIN_HEADER_LEN: usize = 16;

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Schema-tagged table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        Self {
            kind: kind.to_string(),
            meta: BTreeMap::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# tlsbath.{} v{}", self.kind, SCHEMA_VERSION);
        for (k, v) in &self.meta {
            let _ = write!(s, " {k}={v}");
        }
        s.push('\n');
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// Parses a table and checks its kind and column names.
    pub fn parse(text: &str, path: &Path, kind: &str, columns: &[&str]) -> Result<Self> {
        let mut lines = text.lines();
        let schema = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty file"))?;
        let mut words = schema
            .strip_prefix("# ")
            .ok_or_else(|| Error::format(path, "missing schema line"))?
            .split_whitespace();
        let tag = words.next().unwrap_or_default();
        if tag != format!("tlsbath.{kind}") {
            return Err(Error::format(path, format!("expected schema tlsbath.{kind}, found `{tag}`")));
        }
        let version = words.next().unwrap_or_default();
        if version != format!("v{SCHEMA_VERSION}") {
            return Err(Error::format(path, format!("unsupported schema version `{version}`")));
        }
        let mut meta = BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("malformed schema field `{w}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::format(path, "missing column header"))?;
        let found: Vec<&str> = header.split(',').collect();
        if found != columns {
            return Err(Error::format(
                path,
                format!("expected columns `{}`, found `{header}`", columns.join(",")),
            ));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != columns.len() {
                return Err(Error::format(path, format!("row {}: expected {} fields", i + 1, columns.len())));
            }
            rows.push(row);
        }
        Ok(Self {
            kind: kind.to_string(),
            meta,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows,
        })
    }

    pub fn read(path: &Path, kind: &str, columns: &[&str]) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path, kind, columns)
    }

    pub fn meta_value<V: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<V> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(path, format!("schema line lacks a valid `{key}`")))
    }

    pub fn column_f64(&self, index: usize, path: &Path) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[index]
                    .parse()
                    .map_err(|_| Error::format(path, format!("row {}: `{}` is not a number", i + 1, r[index])))
            })
            .collect()
    }
}

/// How shift traces are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[default]
    Csv,
    Bin,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Bin => "bin",
        }
    }
}

fn uniform_series(kind: &str, dt: f64, values: &[f64], value_column: &str) -> Table {
    let mut t = Table::new(kind, &["t_s", value_column]).with_meta("dt_s", dt);
    t.rows = values
        .iter()
        .enumerate()
        .map(|(j, v)| vec![(j as f64 * dt).to_string(), v.to_string()])
        .collect();
    t
}

pub fn shift_trace_table(trace: &ShiftTrace<f64>) -> Table {
    uniform_series("shift", trace.dt, &trace.samples, "delta_hz")
        .with_meta("mode", &trace.mode)
        .with_meta("trajectory", trace.trajectory_id)
        .with_meta("seed", trace.seed)
}

pub fn encode_bin_trace(dt: f64, samples: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(BIN_HEADER_LEN + 8 * samples.len());
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    out.extend_from_slice(&dt.to_le_bytes());
    for v in samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_bin_trace(bytes: &[u8], path: &Path) -> Result<(f64, Vec<f64>)> {
    if bytes.len() < BIN_HEADER_LEN || &bytes[..4] != BIN_MAGIC {
        return Err(Error::format(path, "not a binary trace"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let dt = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[BIN_HEADER_LEN..];
    if body.len() != 8 * n {
        return Err(Error::format(path, format!("expected {n} samples, found {} bytes", body.len())));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((dt, samples))
}

pub fn write_shift_trace(path: &Path, trace: &ShiftTrace<f64>, format: TraceFormat) -> Result<()> {
    match format {
        TraceFormat::Csv => shift_trace_table(trace).write(path),
        TraceFormat::Bin => write_atomic(path, &encode_bin_trace(trace.dt, &trace.samples)),
    }
}

/// Reads a shift trace; `mode`, `trajectory_id` and `seed` fill in what the
/// binary format does not store.
pub fn read_shift_trace(
    path: &Path,
    format: TraceFormat,
    mode: &str,
    trajectory_id: u64,
    seed: u64,
) -> Result<ShiftTrace<f64>> {
    match format {
        TraceFormat::Csv => {
            let t = Table::read(path, "shift", &["t_s", "delta_hz"])?;
            Ok(ShiftTrace {
                mode: t.meta.get("mode").cloned().unwrap_or_else(|| mode.to_string()),
                dt: t.meta_value("dt_s", path)?,
                samples: t.column_f64(1, path)?,
                trajectory_id: t.meta_value("trajectory", path)?,
                seed: t.meta_value("seed", path)?,
            })
        }
        TraceFormat::Bin => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let (dt, samples) = decode_bin_trace(&bytes, path)?;
            Ok(ShiftTrace {
                mode: mode.to_string(),
                dt,
                samples,
                trajectory_id,
                seed,
            })
        }
    }
}

/// `t_s,value` series such as zero-span power or thermal amplitude.
pub fn write_series(path: &Path, kind: &str, dt: f64, values: &[f64], meta: &[(&str, String)]) -> Result<()> {
    let mut t = uniform_series(kind, dt, values, "value");
    for (k, v) in meta {
        t = t.with_meta(k, v);
    }
    t.write(path)
}

pub fn read_series(path: &Path, kind: &str) -> Result<(f64, Vec<f64>)> {
    let t = Table::read(path, kind, &["t_s", "value"])?;
    Ok((t.meta_value("dt_s", path)?, t.column_f64(1, path)?))
}

pub fn write_demodulated(path: &Path, d: &Demodulated<f64>, meta: &[(&str, String)]) -> Result<()> {
    let mut t = Table::new("demod", &["t_s", "value", "valid"]).with_meta("dt_s", d.dt);
    for (k, v) in meta {
        t = t.with_meta(k, v);
    }
    t.rows = d
        .values
        .iter()
        .zip(&d.valid)
        .enumerate()
        .map(|(j, (v, &ok))| vec![(j as f64 * d.dt).to_string(), v.to_string(), u8::from(ok).to_string()])
        .collect();
    t.write(path)
}

pub fn read_demodulated(path: &Path) -> Result<Demodulated<f64>> {
    let t = Table::read(path, "demod", &["t_s", "value", "valid"])?;
    let valid = t
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| match r[2].as_str() {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(Error::format(path, format!("row {}: validity `{other}` is not 0 or 1", i + 1))),
        })
        .collect::<Result<_>>()?;
    Ok(Demodulated {
        dt: t.meta_value("dt_s", path)?,
        values: t.column_f64(1, path)?,
        valid,
    })
}
