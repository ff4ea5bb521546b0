//! File formats.
//!
//! All CSV files start with one provenance comment line,
//!
//! ```text
//! # fibersphere <version> | config_sha256=<hex> | seed=<n>
//! ```
//!
//! followed by a header row with a fixed column order. Readers skip lines
//! starting with `#`. Missing values are written as empty fields.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photon_sim::{SweepMeta, SweepRecord};
use crate::tomography::PuritySpectrum;

pub const SWEEP_COLUMNS: [&str; 7] = [
    "detuning_hz",
    "counts_x",
    "counts_y",
    "counts_p",
    "counts_m",
    "counts_r",
    "counts_l",
];
pub const SPECTRUM_COLUMNS: [&str; 3] = ["detuning_hz", "value", "flag"];
pub const PURITY_COLUMNS: [&str; 6] = [
    "detuning_hz",
    "purity",
    "s1_s0",
    "s2_s0",
    "s3_s0",
    "convergence_flag",
];
pub const SCAN_COLUMNS: [&str; 4] = ["d_nm", "t_min", "q", "fwhm_hz"];
pub const PANEL_COLUMNS: [&str; 4] = ["detuning_hz", "measured", "model", "flag"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: impl Into<String>, seed: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config_sha256.into(),
            seed,
        }
    }

    pub fn header_line(&self) -> String {
        format!(
            "# fibersphere {} | config_sha256={} | seed={}\n",
            self.version, self.config_sha256, self.seed
        )
    }

    /// Parses a provenance line, if `text` starts with one.
    pub fn from_header(text: &str) -> Option<Self> {
        let line = text.lines().next()?.strip_prefix("# fibersphere ")?;
        let mut parts = line.split(" | ");
        let version = parts.next()?.to_string();
        let config_sha256 = parts.next()?.strip_prefix("config_sha256=")?.to_string();
        let seed = parts.next()?.strip_prefix("seed=")?.parse().ok()?;
        Some(Self {
            version,
            config_sha256,
            seed,
        })
    }
}

/// Per-point status in spectrum files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointFlag {
    Ok,
    LowSignal,
    Indeterminate,
    NotConverged,
}

impl fmt::Display for PointFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointFlag::Ok => "ok",
            PointFlag::LowSignal => "low_signal",
            PointFlag::Indeterminate => "indeterminate",
            PointFlag::NotConverged => "not_converged",
        })
    }
}

impl std::str::FromStr for PointFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ok" => PointFlag::Ok,
            "low_signal" => PointFlag::LowSignal,
            "indeterminate" => PointFlag::Indeterminate,
            "not_converged" => PointFlag::NotConverged,
            other => return Err(Error::Format(format!("unknown flag `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumRow {
    pub detuning_hz: f64,
    pub value: Option<f64>,
    pub flag: PointFlag,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(prov: &Provenance, mut w: csv::Writer<Vec<u8>>) -> Result<String> {
    w.flush()?;
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let body = String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?;
    Ok(prov.header_line() + &body)
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(r: &mut csv::Reader<&[u8]>, want: &[&str]) -> Result<()> {
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != want {
        return Err(Error::Format(format!(
            "expected columns {want:?}, found {got:?}"
        )));
    }
    Ok(())
}

fn parse_f64(s: &str, line: u64, column: &str) -> Result<f64> {
    s.parse().map_err(|_| {
        Error::Format(format!(
            "line {line}: `{s}` in column {column} is not a number"
        ))
    })
}

fn parse_opt(s: &str, line: u64, column: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, line, column).map(Some)
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub fn sweep_csv(record: &SweepRecord, prov: &Provenance) -> Result<String> {
    let mut w = writer();
    w.write_record(SWEEP_COLUMNS)?;
    for (f, row) in record.detunings_hz.iter().zip(&record.counts) {
        let mut fields = vec![f.to_string()];
        fields.extend(row.iter().map(u64::to_string));
        w.write_record(&fields)?;
    }
    finish(prov, w)
}

/// Detuning axis and counts from a sweep CSV.
pub fn parse_sweep_csv(text: &str) -> Result<(Vec<f64>, Vec<[u64; 6]>)> {
    let mut r = reader(text);
    check_header(&mut r, &SWEEP_COLUMNS)?;
    let mut detunings = Vec::new();
    let mut counts = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 7 {
            return Err(Error::Format(format!(
                "line {line}: expected 7 fields, found {}",
                rec.len()
            )));
        }
        detunings.push(parse_f64(&rec[0], line, "detuning_hz")?);
        let mut row = [0u64; 6];
        for k in 0..6 {
            row[k] = rec[k + 1].parse().map_err(|_| {
                Error::Format(format!(
                    "line {line}: `{}` in {} is not a count",
                    &rec[k + 1],
                    SWEEP_COLUMNS[k + 1]
                ))
            })?;
        }
        counts.push(row);
    }
    Ok((detunings, counts))
}

/// JSON sidecar stored next to a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSidecar {
    pub provenance: Provenance,
    pub meta: SweepMeta,
    pub points: usize,
}

pub fn sweep_sidecar(record: &SweepRecord, prov: &Provenance) -> Result<String> {
    let s = SweepSidecar {
        provenance: prov.clone(),
        meta: record.meta.clone(),
        points: record.len(),
    };
    Ok(serde_json::to_string_pretty(&s)? + "\n")
}

/// Rebuilds a record from its CSV and sidecar texts.
pub fn parse_sweep(csv_text: &str, sidecar_text: &str) -> Result<SweepRecord> {
    let (detunings_hz, counts) = parse_sweep_csv(csv_text)?;
    let side: SweepSidecar = serde_json::from_str(sidecar_text)?;
    if side.points != detunings_hz.len() {
        return Err(Error::Format(format!(
            "sidecar lists {} points but the CSV has {}",
            side.points,
            detunings_hz.len()
        )));
    }
    let record = SweepRecord {
        detunings_hz,
        counts,
        meta: side.meta,
        normalized: None,
    };
    record.validate()?;
    Ok(record)
}

/// Default sidecar path for a sweep CSV: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

pub fn read_sweep(csv_path: &Path, sidecar: Option<&Path>) -> Result<SweepRecord> {
    let csv_text = std::fs::read_to_string(csv_path)?;
    let side_path = sidecar
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sidecar_path(csv_path));
    let side_text = std::fs::read_to_string(side_path)?;
    parse_sweep(&csv_text, &side_text)
}

pub fn spectrum_csv(rows: &[SpectrumRow], prov: &Provenance) -> Result<String> {
    let mut w = writer();
    w.write_record(SPECTRUM_COLUMNS)?;
    for r in rows {
        w.write_record([r.detuning_hz.to_string(), opt(r.value), r.flag.to_string()])?;
    }
    finish(prov, w)
}

pub fn parse_spectrum_csv(text: &str) -> Result<Vec<SpectrumRow>> {
    let mut r = reader(text);
    check_header(&mut r, &SPECTRUM_COLUMNS)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(Error::Format(format!(
                "line {line}: expected 3 fields, found {}",
                rec.len()
            )));
        }
        out.push(SpectrumRow {
            detuning_hz: parse_f64(&rec[0], line, "detuning_hz")?,
            value: parse_opt(&rec[1], line, "value")?,
            flag: rec[2].parse()?,
        });
    }
    Ok(out)
}

/// `(detuning, value)` pairs of the usable points of a spectrum.
pub fn usable_points(rows: &[SpectrumRow]) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.flag == PointFlag::Ok)
        .filter_map(|r| r.value.map(|v| (r.detuning_hz, v)))
        .collect()
}

pub fn purity_csv(spectrum: &PuritySpectrum, prov: &Provenance) -> Result<String> {
    let mut w = writer();
    w.write_record(PURITY_COLUMNS)?;
    for p in &spectrum.points {
        let bloch = p.rho.map(|r| r.bloch());
        let flag = if p.low_signal {
            PointFlag::LowSignal
        } else if !p.converged {
            PointFlag::NotConverged
        } else {
            PointFlag::Ok
        };
        w.write_record([
            p.detuning_hz.to_string(),
            opt(p.purity),
            opt(bloch.map(|b| b[0])),
            opt(bloch.map(|b| b[1])),
            opt(bloch.map(|b| b[2])),
            flag.to_string(),
        ])?;
    }
    finish(prov, w)
}

/// One row of a purity CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurityRow {
    pub detuning_hz: f64,
    pub purity: Option<f64>,
    pub bloch: Option<[f64; 3]>,
    pub flag: PointFlag,
}

pub fn parse_purity_csv(text: &str) -> Result<Vec<PurityRow>> {
    let mut r = reader(text);
    check_header(&mut r, &PURITY_COLUMNS)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 6 {
            return Err(Error::Format(format!(
                "line {line}: expected 6 fields, found {}",
                rec.len()
            )));
        }
        let s = [
            parse_opt(&rec[2], line, "s1_s0")?,
            parse_opt(&rec[3], line, "s2_s0")?,
            parse_opt(&rec[4], line, "s3_s0")?,
        ];
        out.push(PurityRow {
            detuning_hz: parse_f64(&rec[0], line, "detuning_hz")?,
            purity: parse_opt(&rec[1], line, "purity")?,
            bloch: match s {
                [Some(a), Some(b), Some(c)] => Some([a, b, c]),
                _ => None,
            },
            flag: rec[5].parse()?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub d_nm: f64,
    pub t_min: f64,
    pub q: f64,
    pub fwhm_hz: f64,
}

pub fn scan_csv(rows: &[ScanRow], prov: &Provenance) -> Result<String> {
    let mut w = writer();
    w.write_record(SCAN_COLUMNS)?;
    for r in rows {
        w.write_record([r.d_nm, r.t_min, r.q, r.fwhm_hz].map(|v| v.to_string()))?;
    }
    finish(prov, w)
}

pub fn parse_scan_csv(text: &str) -> Result<Vec<ScanRow>> {
    let mut r = reader(text);
    check_header(&mut r, &SCAN_COLUMNS)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let v: Vec<f64> = rec
            .iter()
            .zip(SCAN_COLUMNS)
            .map(|(s, c)| parse_f64(s, line, c))
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(Error::Format(format!("line {line}: expected 4 fields")));
        }
        out.push(ScanRow {
            d_nm: v[0],
            t_min: v[1],
            q: v[2],
            fwhm_hz: v[3],
        });
    }
    Ok(out)
}

/// One row of a figure panel: a measured value next to the model curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelRow {
    pub detuning_hz: f64,
    pub measured: Option<f64>,
    pub model: f64,
    pub flag: PointFlag,
}

pub fn panel_csv(rows: &[PanelRow], prov: &Provenance) -> Result<String> {
    let mut w = writer();
    w.write_record(PANEL_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.detuning_hz.to_string(),
            opt(r.measured),
            r.model.to_string(),
            r.flag.to_string(),
        ])?;
    }
    finish(prov, w)
}

/// Pretty JSON wrapped with provenance: `{"provenance": ..., "<key>": value}`.
pub fn json_with_provenance<T: Serialize>(
    key: &str,
    value: &T,
    prov: &Provenance,
) -> Result<String> {
    let mut map = serde_json::Map::new();
    map.insert("provenance".into(), serde_json::to_value(prov)?);
    map.insert(key.into(), serde_json::to_value(value)?);
    Ok(serde_json::to_string_pretty(&serde_json::Value::Object(map))? + "\n")
}

/// Writes `contents` to a temporary file in the target directory and
/// renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "path has no file name",
        ))
    })?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, contents)?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}
