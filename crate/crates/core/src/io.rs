//! File formats: scenario JSON, segment JSONL, label and distance CSVs,
//! dendrogram and report JSON.
//!
//! Every float written by this module uses 17 significant digits in
//! scientific notation, so files round-trip exactly and identical inputs give
//! byte-identical outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::clustering::{ClusterAssignment, DissimilarityMatrix, Merge};
use crate::error::{Result, TopoError};
use crate::model::Scenario;
use crate::simulator::SegmentRecord;

/// Top-level keys a scenario file must carry.
pub const SCENARIO_KEYS: [&str; 10] = [
    "modes",
    "schedule",
    "excitation",
    "dynamics_f",
    "initial_states",
    "filter_gain",
    "gamma",
    "step",
    "mode_counts",
    "seed",
];

/// `{:.16e}`, the float format shared by every writer here.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Wraps a JSON formatter so that floats print with 17 significant digits.
pub struct FixedDigits<F>(pub F);

macro_rules! delegate {
    ($($name:ident),*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
            self.0.$name(w)
        })*
    };
}

impl<F: Formatter> Formatter for FixedDigits<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    delegate!(begin_array, end_array, end_array_value, begin_object, end_object, begin_object_value, end_object_value);
}

fn serialize_with<T: Serialize + ?Sized, F: Formatter>(value: &T, formatter: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits(formatter));
    value
        .serialize(&mut ser)
        .map_err(|e| TopoError::Numeric(format!("serialization failed: {e}")))?;
    Ok(buf)
}

/// Indented JSON with fixed-digit floats.
pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = serialize_with(value, PrettyFormatter::new())?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Single-line JSON with fixed-digit floats.
pub fn to_json_line<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(String::from_utf8(serialize_with(value, CompactFormatter)?).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_pretty(value)?)?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| TopoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parses a scenario document. `origin` names the source in error messages.
///
/// Syntax errors report line and column; a missing key or a malformed value
/// reports the offending field path, e.g. `schedule.switch_times[2]`.
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| TopoError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| TopoError::Schema {
        field: "<root>".into(),
        message: "expected a JSON object".into(),
    })?;
    if let Some(missing) = SCENARIO_KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return Err(TopoError::Schema {
            field: missing.to_string(),
            message: "missing required key".into(),
        });
    }
    serde_path_to_error::deserialize(value).map_err(|e| TopoError::Schema {
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&read_to_string(path)?, &path.display().to_string())
}

pub fn save_scenario(path: &Path, scenario: &Scenario) -> Result<()> {
    write_json(path, scenario)
}

/// One JSON object per line.
pub fn write_segments(path: &Path, records: &[SegmentRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for rec in records {
        writeln!(out, "{}", to_json_line(rec)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_segments(path: &Path) -> Result<Vec<SegmentRecord>> {
    let file = File::open(path).map_err(|e| TopoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| TopoError::Parse {
            path: format!("{}:{}", path.display(), n + 1),
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// A row of `labels.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub interval_index: usize,
    pub group_id: usize,
    pub label: u32,
}

/// Label rows sorted by interval index.
pub fn label_rows(assignment: &ClusterAssignment) -> Vec<LabelRow> {
    let mut rows: Vec<LabelRow> = assignment
        .groups
        .iter()
        .flat_map(|g| {
            g.distances.indices.iter().map(|&k| LabelRow {
                interval_index: k,
                group_id: g.distances.group_id,
                label: assignment.labels[&k],
            })
        })
        .collect();
    rows.sort_by_key(|r| r.interval_index);
    rows
}

pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
}

/// Interval index -> label.
pub fn label_map(rows: &[LabelRow]) -> BTreeMap<usize, u32> {
    rows.iter().map(|r| (r.interval_index, r.label)).collect()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> TopoError + '_ {
    move |e| TopoError::Parse { path: path.display().to_string(), message: e.to_string() }
}

/// Square table whose first row and column hold interval indices.
pub fn write_distances(path: &Path, d: &DissimilarityMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let header = std::iter::once(String::new()).chain(d.indices.iter().map(|k| k.to_string()));
    w.write_record(header).map_err(csv_err(path))?;
    for (i, k) in d.indices.iter().enumerate() {
        let row = std::iter::once(k.to_string())
            .chain((0..d.indices.len()).map(|j| fmt_f64(d.d[(i, j)])));
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dendrogram(path: &Path, merges: &[Merge]) -> Result<()> {
    write_json(path, merges)
}

/// Writes `distances_<group>.csv`, `dendrogram_<group>.json` and `labels.csv`.
pub fn write_clustering(dir: &Path, assignment: &ClusterAssignment) -> Result<()> {
    for g in &assignment.groups {
        let id = g.distances.group_id;
        write_distances(&dir.join(format!("distances_{id}.csv")), &g.distances)?;
        write_dendrogram(&dir.join(format!("dendrogram_{id}.json")), &g.merge_history)?;
    }
    write_labels(&dir.join("labels.csv"), &label_rows(assignment))
}
