//! Greedy per-frame matching, precision/recall accumulation and interpolated
//! average precision.
//!
//! Detections within a frame are visited in descending score order (stable on
//! input index for equal scores). Each one is tested against the unmatched
//! ground truth that maximizes the selection score; it is a true positive when
//! the evaluated metric reaches the configured threshold. Precision/recall is
//! accumulated over all frames after a global sort, with equal scores grouped
//! into one cutoff, so the result does not depend on frame order.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Dataset;
use crate::geometry::{bev_iou, closer_surfaces_gap, Box3D};
use crate::metrics::{metric_score, MatchStrategy, MetricConfig, MetricKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("detection score must lie in [0, 1], got {0}")]
    InvalidScore(f64),
    #[error("items from several frames passed to one match: `{0}` and `{1}`")]
    MixedFrames(String, String),
    #[error("items from several classes passed to one match: `{0}` and `{1}`")]
    MixedClasses(String, String),
    #[error("average precision is undefined without ground truth")]
    NoGroundTruth,
    #[error("unknown difficulty `{0}` (expected easy, moderate, hard or all)")]
    UnknownDifficulty(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub frame_id: String,
    pub class_label: String,
    pub bbox: Box3D,
    score: f64,
}

impl Detection {
    pub fn new(
        frame_id: impl Into<String>,
        class_label: impl Into<String>,
        bbox: Box3D,
        score: f64,
    ) -> Result<Self, MatchError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(MatchError::InvalidScore(score));
        }
        Ok(Self {
            frame_id: frame_id.into(),
            class_label: class_label.into(),
            bbox,
            score,
        })
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// KITTI-style difficulty attributes of a labelled object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyAttrs {
    pub bbox_height_px: f64,
    pub occlusion: u8,
    pub truncation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub frame_id: String,
    pub class_label: String,
    pub bbox: Box3D,
    pub attrs: Option<DifficultyAttrs>,
}

impl GroundTruth {
    pub fn new(frame_id: impl Into<String>, class_label: impl Into<String>, bbox: Box3D) -> Self {
        Self {
            frame_id: frame_id.into(),
            class_label: class_label.into(),
            bbox,
            attrs: None,
        }
    }

    pub fn with_attrs(mut self, attrs: DifficultyAttrs) -> Self {
        self.attrs = Some(attrs);
        self
    }

    /// `None` when the object carries no difficulty attributes.
    pub fn difficulty(&self) -> Option<Difficulty> {
        self.attrs.as_ref().map(kitti_difficulty)
    }
}

/// Difficulty tier of a single labelled object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

pub fn kitti_difficulty(a: &DifficultyAttrs) -> Difficulty {
    const TIERS: [(Difficulty, f64, u8, f64); 3] = [
        (Difficulty::Easy, 40.0, 0, 0.15),
        (Difficulty::Moderate, 25.0, 1, 0.30),
        (Difficulty::Hard, 25.0, 2, 0.50),
    ];
    TIERS
        .iter()
        .find(|(_, h, occ, trunc)| a.bbox_height_px >= *h && a.occlusion <= *occ && a.truncation <= *trunc)
        .map(|t| t.0)
        .unwrap_or(Difficulty::Ignored)
}

/// Evaluation level: objects of difficulty up to and including the level count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalLevel {
    Easy,
    Moderate,
    Hard,
    All,
}

impl EvalLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalLevel::Easy => "easy",
            EvalLevel::Moderate => "moderate",
            EvalLevel::Hard => "hard",
            EvalLevel::All => "all",
        }
    }

    /// Objects without attributes are always included.
    pub fn includes(&self, gt: &GroundTruth) -> bool {
        let Some(d) = gt.difficulty() else { return true };
        match self {
            EvalLevel::All => true,
            EvalLevel::Easy => d <= Difficulty::Easy,
            EvalLevel::Moderate => d <= Difficulty::Moderate,
            EvalLevel::Hard => d <= Difficulty::Hard,
        }
    }
}

impl fmt::Display for EvalLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalLevel {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(EvalLevel::Easy),
            "moderate" => Ok(EvalLevel::Moderate),
            "hard" => Ok(EvalLevel::Hard),
            "all" => Ok(EvalLevel::All),
            other => Err(MatchError::UnknownDifficulty(other.to_string())),
        }
    }
}

/// A detection/ground-truth pair retained for gap histograms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub det_index: usize,
    pub gt_index: usize,
    pub value: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// `(score, is_tp)` for every counted detection, in input order.
    pub detections: Vec<(f64, bool)>,
    /// Detections that only matched ignored objects; neither TP nor FP.
    pub ignored_detections: usize,
    pub gt_count: usize,
    pub fn_count: usize,
    pub matched_pairs: Vec<MatchedPair>,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.detections.iter().filter(|d| d.1).count()
    }

    pub fn fp_count(&self) -> usize {
        self.detections.iter().filter(|d| !d.1).count()
    }
}

fn check_homogeneous(preds: &[Detection], gts: &[GroundTruth]) -> Result<(), MatchError> {
    let mut items = preds
        .iter()
        .map(|d| (&d.frame_id, &d.class_label))
        .chain(gts.iter().map(|g| (&g.frame_id, &g.class_label)));
    if let Some((frame, class)) = items.next() {
        for (f, c) in items {
            if f != frame {
                return Err(MatchError::MixedFrames(frame.clone(), f.clone()));
            }
            if c != class {
                return Err(MatchError::MixedClasses(class.clone(), c.clone()));
            }
        }
    }
    Ok(())
}

/// Stable descending-score order of detection indices.
pub fn score_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

fn best_unmatched(values: &[f64], taken: &[bool], eligible: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (g, v) in values.iter().enumerate() {
        if taken[g] || !eligible[g] {
            continue;
        }
        match best {
            Some(b) if values[b] >= *v => {}
            _ => best = Some(g),
        }
    }
    best
}

/// Matches one frame's detections of one class with all ground truths counted.
pub fn match_frame(preds: &[Detection], gts: &[GroundTruth], cfg: &MetricConfig) -> Result<MatchResult, MatchError> {
    match_frame_at(preds, gts, cfg, EvalLevel::All)
}

/// Matches one frame at a difficulty level. Objects outside the level are
/// ignore regions: they are not counted as misses, and a detection whose only
/// qualifying match is such an object is dropped instead of counted as FP.
pub fn match_frame_at(
    preds: &[Detection],
    gts: &[GroundTruth],
    cfg: &MetricConfig,
    level: EvalLevel,
) -> Result<MatchResult, MatchError> {
    check_homogeneous(preds, gts)?;
    let included: Vec<bool> = gts.iter().map(|g| level.includes(g)).collect();
    let excluded: Vec<bool> = included.iter().map(|i| !i).collect();
    let values: Vec<Vec<f64>> = preds
        .iter()
        .map(|d| gts.iter().map(|g| metric_score(cfg, &d.bbox, &g.bbox)).collect())
        .collect();
    let selection: Vec<Vec<f64>> = match cfg.match_strategy {
        MatchStrategy::SameMetric => values.clone(),
        MatchStrategy::BevThenScore => preds
            .iter()
            .map(|d| gts.iter().map(|g| bev_iou(d.bbox.bev(), g.bbox.bev())).collect())
            .collect(),
    };
    let order = score_order(preds);

    let mut taken = vec![false; gts.len()];
    let mut outcome: Vec<Option<bool>> = vec![None; preds.len()];
    for &d in &order {
        let candidate = best_unmatched(&selection[d], &taken, &included)
            .filter(|&g| cfg.match_strategy == MatchStrategy::SameMetric || selection[d][g] > 0.0);
        match candidate {
            Some(g) if values[d][g] >= cfg.iou_threshold => {
                taken[g] = true;
                outcome[d] = Some(true);
            }
            _ => {
                let hits_ignored = (0..gts.len()).any(|g| excluded[g] && values[d][g] >= cfg.iou_threshold);
                outcome[d] = if hits_ignored { None } else { Some(false) };
            }
        }
    }

    // Second, permissive pass for gap histograms.
    let mut paired = vec![false; gts.len()];
    let mut matched_pairs = Vec::new();
    for &d in &order {
        if let Some(g) = best_unmatched(&values[d], &paired, &included) {
            if values[d][g] >= cfg.match_floor && values[d][g] > 0.0 {
                paired[g] = true;
                matched_pairs.push(MatchedPair {
                    det_index: d,
                    gt_index: g,
                    value: values[d][g],
                    gap: closer_surfaces_gap(preds[d].bbox.bev(), gts[g].bbox.bev()),
                });
            }
        }
    }

    let gt_count = included.iter().filter(|i| **i).count();
    let tp = outcome.iter().filter(|o| **o == Some(true)).count();
    Ok(MatchResult {
        detections: preds
            .iter()
            .zip(&outcome)
            .filter_map(|(p, o)| o.map(|tp| (p.score, tp)))
            .collect(),
        ignored_detections: outcome.iter().filter(|o| o.is_none()).count(),
        gt_count,
        fn_count: gt_count - tp,
        matched_pairs,
    })
}

/// One cutoff of the precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrPoint {
    pub tp: usize,
    pub fp: usize,
}

/// Precision/recall points at every distinct score cutoff, highest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrCurve {
    pub n_gt: usize,
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn from_scored(mut scored: Vec<(f64, bool)>, n_gt: usize) -> Self {
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut points = Vec::new();
        let (mut tp, mut fp) = (0usize, 0usize);
        for (i, (score, is_tp)) in scored.iter().enumerate() {
            if *is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            let last_of_group = scored
                .get(i + 1)
                .is_none_or(|next| next.0.total_cmp(score) != Ordering::Equal);
            if last_of_group {
                points.push(PrPoint { tp, fp });
            }
        }
        Self { n_gt, points }
    }

    pub fn from_matches<'a>(results: impl IntoIterator<Item = &'a MatchResult>) -> Self {
        let mut scored = Vec::new();
        let mut n_gt = 0;
        for r in results {
            scored.extend_from_slice(&r.detections);
            n_gt += r.gt_count;
        }
        Self::from_scored(scored, n_gt)
    }

    /// `(recall, precision)` pairs; recall is non-decreasing.
    pub fn recall_precision(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|p| {
                let recall = if self.n_gt == 0 {
                    0.0
                } else {
                    p.tp as f64 / self.n_gt as f64
                };
                (recall, p.tp as f64 / (p.tp + p.fp) as f64)
            })
            .collect()
    }
}

/// Interpolated average precision: the mean, over the recall positions of
/// `mode`, of the best precision achieved at recall at least that position.
pub fn average_precision(curve: &PrCurve, mode: crate::metrics::RecallMode) -> Result<f64, MatchError> {
    if curve.n_gt == 0 {
        return Err(MatchError::NoGroundTruth);
    }
    let n = curve.n_gt as u64;
    let precisions: Vec<f64> = curve
        .points
        .iter()
        .map(|p| p.tp as f64 / (p.tp + p.fp) as f64)
        .collect();
    let mut suffix_max = precisions.clone();
    for i in (0..suffix_max.len().saturating_sub(1)).rev() {
        suffix_max[i] = suffix_max[i].max(suffix_max[i + 1]);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, denom) in mode.positions() {
        // first cutoff whose recall tp/n reaches k/denom, compared exactly
        let idx = curve.points.partition_point(|p| (p.tp as u64) * denom < k * n);
        total += suffix_max.get(idx).copied().unwrap_or(0.0);
        count += 1;
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub class: String,
    pub difficulty: EvalLevel,
    pub metric: MetricKind,
    /// `None` when there is no ground truth for this class and level.
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub entries: Vec<ReportEntry>,
    pub configs: Vec<MetricConfig>,
}

impl EvalReport {
    pub fn get(&self, class: &str, level: EvalLevel, metric: MetricKind) -> Option<&ReportEntry> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.difficulty == level && e.metric == metric)
    }

    /// Sorts rows by class, then difficulty, then metric.
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| {
            a.class
                .cmp(&b.class)
                .then(a.difficulty.cmp(&b.difficulty))
                .then(a.metric.cmp(&b.metric))
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub levels: Vec<EvalLevel>,
    /// Restrict to these classes; all classes present when `None`.
    pub classes: Option<Vec<String>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            levels: vec![EvalLevel::All],
            classes: None,
        }
    }
}

/// Runs matching for one class/level/config over every frame.
pub fn match_dataset(
    dataset: &Dataset,
    class: &str,
    cfg: &MetricConfig,
    level: EvalLevel,
) -> Result<Vec<MatchResult>, MatchError> {
    let frames: Vec<_> = dataset.frames.values().collect();
    frames
        .par_iter()
        .map(|frame| {
            let preds: Vec<Detection> = frame
                .detections
                .iter()
                .filter(|d| d.class_label == class)
                .cloned()
                .collect();
            let gts: Vec<GroundTruth> = frame
                .ground_truths
                .iter()
                .filter(|g| g.class_label == class)
                .cloned()
                .collect();
            match_frame_at(&preds, &gts, cfg, level)
        })
        .collect()
}

pub fn evaluate(dataset: &Dataset, cfgs: &[MetricConfig], opts: &EvalOptions) -> Result<EvalReport, MatchError> {
    let classes: BTreeSet<String> = match &opts.classes {
        Some(c) => c.iter().cloned().collect(),
        None => dataset.classes(),
    };
    let mut entries = Vec::new();
    for class in &classes {
        for &level in &opts.levels {
            for cfg in cfgs {
                let results = match_dataset(dataset, class, cfg, level)?;
                let curve = PrCurve::from_matches(&results);
                let ap = match average_precision(&curve, cfg.recall_mode) {
                    Ok(ap) => Some(ap),
                    Err(MatchError::NoGroundTruth) => None,
                    Err(e) => return Err(e),
                };
                entries.push(ReportEntry {
                    class: class.clone(),
                    difficulty: level,
                    metric: cfg.kind,
                    ap,
                    tp: results.iter().map(MatchResult::tp_count).sum(),
                    fp: results.iter().map(MatchResult::fp_count).sum(),
                    fn_count: results.iter().map(|r| r.fn_count).sum(),
                });
            }
        }
    }
    let mut report = EvalReport {
        entries,
        configs: cfgs.to_vec(),
    };
    report.sort();
    Ok(report)
}

/// Closer-surfaces gaps of all pairs retained by the permissive matching pass.
pub fn matched_gaps(
    dataset: &Dataset,
    class: &str,
    cfg: &MetricConfig,
    level: EvalLevel,
) -> Result<Vec<f64>, MatchError> {
    Ok(match_dataset(dataset, class, cfg, level)?
        .iter()
        .flat_map(|r| r.matched_pairs.iter().map(|p| p.gap))
        .collect())
}
