//! File formats: path ensembles as CSV with JSON metadata, rough paths in a
//! binary container with a JSON header, JSON / JSONL records and CSV tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::path_spaces::{GridPath, RoughPathGrid};
use crate::tensor_algebra::GroupTensor;

const ROUGH_MAGIC: &[u8; 8] = b"RGHPATH1";

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        format_err(e)
    }
}

/// CSV reader that skips `#` comment lines.
fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

/// Write a `# key=value ...` comment line, skipped by the readers here.
pub fn write_comment(mut w: impl Write, fields: &[(&str, String)]) -> Result<()> {
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(w, "# {}", body.join(" "))?;
    Ok(())
}

/// Metadata stored next to an ensemble CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleMetadata {
    pub hurst: Vec<f64>,
    pub horizon: f64,
    pub level: u32,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Creation time, the only field that differs between reruns.
    #[serde(default)]
    pub created: Option<String>,
}

/// One row per grid time: `t, p0_x0, p0_x1, ..., p1_x0, ...`.
pub fn write_ensemble_csv(w: impl Write, paths: &[GridPath<f64>]) -> Result<()> {
    let first = paths.first().ok_or_else(|| shape("cannot write an empty ensemble"))?;
    for p in paths {
        first.check_same_grid(p)?;
        if p.dim() != first.dim() {
            return Err(shape("paths differ in dimension"));
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    for i in 0..paths.len() {
        for k in 0..first.dim() {
            header.push(format!("p{i}_x{k}"));
        }
    }
    out.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..=first.n_intervals() {
        row.clear();
        row.push(first.time(i).to_string());
        for p in paths {
            row.extend(p.value(i).iter().map(f64::to_string));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_ensemble_csv`].
pub fn read_ensemble_csv(r: impl Read, meta: &EnsembleMetadata) -> Result<Vec<GridPath<f64>>> {
    let mut rdr = csv_reader(r);
    let width = rdr.headers()?.len();
    if width != 1 + meta.n_paths * meta.dim {
        return Err(format_err(format!(
            "ensemble CSV has {width} columns, metadata implies {}",
            1 + meta.n_paths * meta.dim
        )));
    }
    let n_times = (1usize << meta.level) + 1;
    let mut values = vec![Vec::with_capacity(n_times * meta.dim); meta.n_paths];
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        for (i, v) in values.iter_mut().enumerate() {
            for k in 0..meta.dim {
                let s = &rec[1 + i * meta.dim + k];
                v.push(s.parse::<f64>().map_err(format_err)?);
            }
        }
        rows += 1;
    }
    if rows != n_times {
        return Err(format_err(format!("expected {n_times} rows, found {rows}")));
    }
    values
        .into_iter()
        .map(|v| GridPath::new(meta.dim, meta.horizon, meta.level, v))
        .collect()
}

/// `path, weight` rows of a weighted ensemble.
pub fn write_weights_csv(w: impl Write, weights: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["path", "weight"])?;
    for (i, wt) in weights.iter().enumerate() {
        out.write_record([i.to_string(), wt.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Header of the binary rough-path container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoughPathHeader {
    pub dim: usize,
    pub degree: usize,
    pub horizon: f64,
    pub level: u32,
    pub n_intervals: usize,
    pub scalar: String,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Magic, little-endian `u32` header length, JSON header, then per cell
/// the levels `1..=degree` as little-endian `f64`.
pub fn write_rough_path(
    mut w: impl Write,
    x: &RoughPathGrid<f64>,
    config_hash: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let header = RoughPathHeader {
        dim: x.dim(),
        degree: x.degree(),
        horizon: x.horizon(),
        level: x.level(),
        n_intervals: x.n_intervals(),
        scalar: "f64".into(),
        config_hash: config_hash.map(str::to_string),
        seed,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(ROUGH_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for g in x.cells() {
        for i in 1..=g.degree() {
            for v in g.level(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_rough_path`]; the cells are re-certified.
pub fn read_rough_path(mut r: impl Read) -> Result<(RoughPathHeader, RoughPathGrid<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ROUGH_MAGIC {
        return Err(format_err("not a rough-path container"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: RoughPathHeader = serde_json::from_slice(&json)?;
    if header.scalar != "f64" {
        return Err(format_err(format!("unsupported scalar type {}", header.scalar)));
    }
    let d = header.dim;
    let mut read_block = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; 8 * n];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let mut cells = Vec::with_capacity(header.n_intervals);
    for _ in 0..header.n_intervals {
        let l1 = read_block(d)?;
        let l2 = if header.degree >= 2 { read_block(d * d)? } else { Vec::new() };
        let l3 = if header.degree >= 3 { read_block(d * d * d)? } else { Vec::new() };
        cells.push(GroupTensor::from_levels(d, header.degree, l1, l2, l3)?);
    }
    let x = RoughPathGrid::from_increments(header.horizon, header.level, cells)?;
    Ok((header, x))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(r: impl Read) -> Result<Vec<T>> {
    BufReader::new(r)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Serialise flat records as a CSV table with a header row.
pub fn write_csv_rows<T: Serialize>(w: impl Write, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv_rows<T: DeserializeOwned>(r: impl Read) -> Result<Vec<T>> {
    let mut rdr = csv_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}
