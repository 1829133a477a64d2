//! Dataset container and file formats: line-delimited JSON records, KITTI
//! label directories, and the CSV evaluation report.

mod kitti;

pub use kitti::{canonical_to_kitti_camera, kitti_camera_to_canonical, read_kitti_labels, KittiCameraBox};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Box3D;
use crate::matching::{Detection, DifficultyAttrs, EvalLevel, EvalReport, GroundTruth, ReportEntry};
use crate::metrics::MetricKind;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}:{line}: invalid record: {message}")]
    Validation { file: String, line: usize, message: String },
    #[error("report csv: {0}")]
    Csv(String),
}

impl DataError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, DataError::Io { .. })
    }
}

/// Coordinate plane the boxes were originally expressed in. Boxes are always
/// stored in the canonical LiDAR BEV frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FramePlane {
    #[default]
    LidarXy,
    CameraXz,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    pub detections: Vec<Detection>,
    pub ground_truths: Vec<GroundTruth>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub frames: BTreeMap<String, Frame>,
    pub frame_plane: FramePlane,
}

/// Axis-aligned region in the canonical frame; objects whose center falls
/// outside are dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeFilter {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for RangeFilter {
    fn default() -> Self {
        Self {
            min: [-75.2, -75.2, -2.0],
            max: [75.2, 75.2, 4.0],
        }
    }
}

impl RangeFilter {
    pub fn contains(&self, b: &Box3D) -> bool {
        let c = [b.bev().cx(), b.bev().cy(), b.cz()];
        (0..3).all(|i| c[i] >= self.min[i] && c[i] <= self.max[i])
    }
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push_detection(&mut self, d: Detection) {
        self.frames.entry(d.frame_id.clone()).or_default().detections.push(d);
    }

    pub fn push_ground_truth(&mut self, g: GroundTruth) {
        self.frames.entry(g.frame_id.clone()).or_default().ground_truths.push(g);
    }

    /// Appends all objects of `other`, frame by frame.
    pub fn merge(&mut self, other: Dataset) {
        for (id, frame) in other.frames {
            let f = self.frames.entry(id).or_default();
            f.detections.extend(frame.detections);
            f.ground_truths.extend(frame.ground_truths);
        }
    }

    pub fn classes(&self) -> BTreeSet<String> {
        self.frames
            .values()
            .flat_map(|f| {
                f.detections
                    .iter()
                    .map(|d| d.class_label.clone())
                    .chain(f.ground_truths.iter().map(|g| g.class_label.clone()))
            })
            .collect()
    }

    pub fn ground_truth_count(&self) -> usize {
        self.frames.values().map(|f| f.ground_truths.len()).sum()
    }

    pub fn detection_count(&self) -> usize {
        self.frames.values().map(|f| f.detections.len()).sum()
    }

    pub fn has_difficulty_attrs(&self) -> bool {
        self.frames
            .values()
            .any(|f| f.ground_truths.iter().any(|g| g.attrs.is_some()))
    }

    /// Keeps only ground truths; frames keep their ids.
    pub fn ground_truths_only(mut self) -> Dataset {
        for f in self.frames.values_mut() {
            f.detections.clear();
        }
        self
    }

    pub fn detections_only(mut self) -> Dataset {
        for f in self.frames.values_mut() {
            f.ground_truths.clear();
        }
        self
    }

    pub fn retain_in_range(&mut self, filter: &RangeFilter) {
        for f in self.frames.values_mut() {
            f.detections.retain(|d| filter.contains(&d.bbox));
            f.ground_truths.retain(|g| filter.contains(&g.bbox));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl BoxRecord {
    pub fn to_box(&self) -> Result<Box3D, crate::geometry::GeometryError> {
        Box3D::from_params(self.x, self.y, self.z, self.l, self.w, self.h, self.yaw)
    }
}

impl From<&Box3D> for BoxRecord {
    fn from(b: &Box3D) -> Self {
        let bev = b.bev();
        Self {
            x: bev.cx(),
            y: bev.cy(),
            z: b.cz(),
            l: bev.length(),
            w: bev.width(),
            h: b.height(),
            yaw: bev.yaw(),
        }
    }
}

/// One line of the interchange format. Records with a score are detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub frame: String,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(rename = "box")]
    pub bbox: BoxRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<DifficultyAttrs>,
}

impl From<&Detection> for Record {
    fn from(d: &Detection) -> Self {
        Record {
            frame: d.frame_id.clone(),
            class: d.class_label.clone(),
            score: Some(d.score()),
            bbox: (&d.bbox).into(),
            difficulty: None,
        }
    }
}

impl From<&GroundTruth> for Record {
    fn from(g: &GroundTruth) -> Self {
        Record {
            frame: g.frame_id.clone(),
            class: g.class_label.clone(),
            score: None,
            bbox: (&g.bbox).into(),
            difficulty: g.attrs,
        }
    }
}

pub fn read_jsonl(path: &Path) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_jsonl_from(BufReader::new(file), &path.display().to_string())
}

/// Raw interchange records with their 1-based line numbers, in file order.
pub fn read_records_from(reader: impl BufRead, source: &str) -> Result<Vec<(usize, Record)>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| DataError::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            file: source.to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        out.push((lineno, rec));
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<(usize, Record)>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_records_from(BufReader::new(file), &path.display().to_string())
}

/// Parses interchange records from any reader. `source` names the input in
/// diagnostics.
pub fn read_jsonl_from(reader: impl BufRead, source: &str) -> Result<Dataset, DataError> {
    let mut ds = Dataset::default();
    for (lineno, rec) in read_records_from(reader, source)? {
        let invalid = |message: String| DataError::Validation {
            file: source.to_string(),
            line: lineno,
            message,
        };
        let bbox = rec.bbox.to_box().map_err(|e| invalid(e.to_string()))?;
        match rec.score {
            Some(score) => {
                let d = Detection::new(rec.frame, rec.class, bbox, score).map_err(|e| invalid(e.to_string()))?;
                ds.push_detection(d);
            }
            None => {
                let mut g = GroundTruth::new(rec.frame, rec.class, bbox);
                if let Some(a) = rec.difficulty {
                    if !(a.bbox_height_px.is_finite() && (0.0..=1.0).contains(&a.truncation) && a.occlusion <= 3) {
                        return Err(invalid(format!("difficulty attributes out of range: {a:?}")));
                    }
                    g = g.with_attrs(a);
                }
                ds.push_ground_truth(g);
            }
        }
    }
    Ok(ds)
}

/// Writes every frame in id order: ground truths first, then detections.
pub fn write_jsonl(ds: &Dataset, mut sink: impl Write) -> std::io::Result<()> {
    for frame in ds.frames.values() {
        let gts = frame.ground_truths.iter().map(Record::from);
        let dets = frame.detections.iter().map(Record::from);
        for rec in gts.chain(dets) {
            serde_json::to_writer(&mut sink, &rec)?;
            sink.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_jsonl_file(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(ds, &mut w).map_err(|e| DataError::io(path, e))?;
    w.flush().map_err(|e| DataError::io(path, e))
}

pub const REPORT_HEADER: [&str; 7] = ["class", "difficulty", "metric", "ap", "tp", "fp", "fn"];

/// Formats an optional ratio with four decimals, `NA` when absent.
pub fn fmt_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

pub(crate) fn csv_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink)
}

fn csv_err(e: csv::Error) -> DataError {
    DataError::Csv(e.to_string())
}

pub fn write_report_csv(report: &EvalReport, sink: impl Write) -> Result<(), DataError> {
    let mut w = csv_writer(sink);
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    let mut rows: Vec<&ReportEntry> = report.entries.iter().collect();
    rows.sort_by(|a, b| {
        a.class
            .cmp(&b.class)
            .then(a.difficulty.cmp(&b.difficulty))
            .then(a.metric.cmp(&b.metric))
    });
    for e in rows {
        w.write_record([
            e.class.clone(),
            e.difficulty.to_string(),
            e.metric.to_string(),
            fmt_ratio(e.ap),
            e.tp.to_string(),
            e.fp.to_string(),
            e.fn_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

/// Parses a report previously written by [`write_report_csv`]. The config
/// echo is not part of the CSV and comes back empty.
pub fn read_report_csv(source: impl Read) -> Result<EvalReport, DataError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(DataError::Csv(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut entries = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |m: String| DataError::Parse {
            file: "report".into(),
            line: i + 2,
            message: m,
        };
        let count = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s}: {e}")));
        let ap = match &rec[3] {
            "NA" => None,
            s => Some(s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")))?),
        };
        entries.push(ReportEntry {
            class: rec[0].to_string(),
            difficulty: rec[1].parse::<EvalLevel>().map_err(|e| bad(e.to_string()))?,
            metric: rec[2].parse::<MetricKind>().map_err(|e| bad(e.to_string()))?,
            ap,
            tp: count(&rec[4])?,
            fp: count(&rec[5])?,
            fn_count: count(&rec[6])?,
        });
    }
    Ok(EvalReport {
        entries,
        configs: Vec::new(),
    })
}
