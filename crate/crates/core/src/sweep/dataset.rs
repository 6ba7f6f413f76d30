//! `sweep.v1` dataset files: a header line followed by one row per
//! `(prompt, scale)` pair.
//!
//! Per-sample scores are stored in each metric's native direction, the
//! aggregate column is oriented (higher is better everywhere).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SweepError, SweepRecord};
use crate::predictor::{MetricSchema, QualityVector};

pub const DATASET_SCHEMA: &str = "sweep.v1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    metric_schema: MetricSchema,
    oriented: bool,
    n_g: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    scale: f64,
    per_sample: Vec<Vec<f64>>,
    aggregate: Vec<f64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub metric_schema: MetricSchema,
    pub n_g: usize,
    pub records: Vec<SweepRecord>,
}

/// Column-wise mean of raw samples, oriented.
pub fn oriented_mean(per_sample: &[Vec<f64>], schema: &MetricSchema) -> Vec<f64> {
    let n = per_sample.len() as f64;
    let raw_mean: Vec<f64> = (0..schema.len())
        .map(|m| per_sample.iter().map(|s| s[m]).sum::<f64>() / n)
        .collect();
    schema.orient(&raw_mean)
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * y.abs().max(1.0))
}

fn check_record(r: &SweepRecord, schema: &MetricSchema, n_g: usize) -> Result<(), String> {
    if r.per_sample.len() != n_g {
        return Err(format!("{} samples, header says {n_g}", r.per_sample.len()));
    }
    if r.per_sample.iter().any(|s| s.len() != schema.len()) || r.aggregate.len() != schema.len() {
        return Err(format!("row width differs from the {} schema metrics", schema.len()));
    }
    if !r.per_sample.iter().flatten().chain(r.aggregate.as_slice()).all(|v| v.is_finite()) {
        return Err("non-finite score".into());
    }
    if !(r.scale.is_finite() && r.scale > 0.0) {
        return Err(format!("invalid scale {}", r.scale));
    }
    Ok(())
}

/// Writes `records` in the given order. The aggregate column must already be
/// the oriented mean of the raw samples.
pub fn write_dataset(records: &[SweepRecord], schema: &MetricSchema, n_g: usize, path: impl AsRef<Path>) -> Result<(), SweepError> {
    schema.validate()?;
    let mut seen = BTreeSet::new();
    for r in records {
        check_record(r, schema, n_g).map_err(|m| SweepError::InvalidRecord(format!("{} @ {}: {m}", r.prompt_id, r.scale)))?;
        if !close(r.aggregate.as_slice(), &oriented_mean(&r.per_sample, schema)) {
            return Err(SweepError::InvalidRecord(format!(
                "{} @ {}: aggregate is not the oriented sample mean",
                r.prompt_id, r.scale
            )));
        }
        if !seen.insert((r.prompt_id.as_str(), r.scale.to_bits())) {
            return Err(SweepError::DuplicatePair {
                id: r.prompt_id.clone(),
                scale: r.scale,
            });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        schema: DATASET_SCHEMA.into(),
        metric_schema: schema.clone(),
        oriented: true,
        n_g,
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for r in records {
        write_row(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_row(w: &mut impl Write, r: &SweepRecord) -> Result<(), SweepError> {
    let row = Row {
        id: r.prompt_id.clone(),
        scale: r.scale,
        per_sample: r.per_sample.clone(),
        aggregate: r.aggregate.0.clone(),
        meta: r.provider_meta.clone(),
    };
    serde_json::to_writer(&mut *w, &row).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub(crate) fn parse_row(line: &str) -> Result<SweepRecord, serde_json::Error> {
    let row: Row = serde_json::from_str(line)?;
    Ok(SweepRecord {
        prompt_id: row.id,
        scale: row.scale,
        per_sample: row.per_sample,
        aggregate: QualityVector(row.aggregate),
        provider_meta: row.meta,
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, SweepError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let format = |line: usize, message: String| SweepError::Format { line, message };
    let first = lines.next().ok_or_else(|| format(1, "missing header".into()))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| format(1, e.to_string()))?;
    if header.schema != DATASET_SCHEMA {
        return Err(format(1, format!("unsupported schema {:?}, expected {DATASET_SCHEMA:?}", header.schema)));
    }
    header.metric_schema.validate()?;
    if header.n_g == 0 {
        return Err(format(1, "n_g must be at least 1".into()));
    }
    let schema = header.metric_schema;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut r = parse_row(&line).map_err(|e| format(line_no, e.to_string()))?;
        check_record(&r, &schema, header.n_g).map_err(|m| format(line_no, m))?;
        let oriented = oriented_mean(&r.per_sample, &schema);
        let raw = schema.orient(&oriented);
        let stored = r.aggregate.as_slice();
        let needs_orientation = oriented != raw;
        if header.oriented {
            if !close(stored, &oriented) {
                if needs_orientation && close(stored, &raw) {
                    return Err(SweepError::OrientationConflict(format!(
                        "line {line_no}: header says oriented but the aggregate is the raw mean"
                    )));
                }
                return Err(format(line_no, "aggregate is not the mean of the samples".into()));
            }
        } else {
            if !close(stored, &raw) {
                if needs_orientation && close(stored, &oriented) {
                    return Err(SweepError::OrientationConflict(format!(
                        "line {line_no}: header says raw but the aggregate is already oriented"
                    )));
                }
                return Err(format(line_no, "aggregate is not the mean of the samples".into()));
            }
            r.aggregate = QualityVector(schema.orient(stored));
        }
        if !seen.insert((r.prompt_id.clone(), r.scale.to_bits())) {
            return Err(SweepError::DuplicatePair {
                id: r.prompt_id,
                scale: r.scale,
            });
        }
        records.push(r);
    }
    Ok(Dataset {
        metric_schema: schema,
        n_g: header.n_g,
        records,
    })
}
