//! Per-pair scores: BEV IoU, 3D IoU, and the two closer-surfaces scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bev_iou, closer_surfaces_gap, iou_3d, BevBox, Box3D};

/// Default penalty ratio for the closer-surfaces scores.
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Range of penalty ratios recommended for practical use (open interval).
pub const PRACTICAL_ALPHA_RANGE: (f64, f64) = (0.5, 1.5);
pub const DEFAULT_MATCH_FLOOR: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("alpha must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("iou threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("match floor must lie in [0, 1), got {0}")]
    InvalidMatchFloor(f64),
    #[error("unknown metric `{0}` (expected one of bev, 3d, cs-abs, cs-bev)")]
    UnknownMetric(String),
}

/// The four evaluated metrics, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    Bev,
    Iou3d,
    CsBev,
    CsAbs,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [MetricKind::Bev, MetricKind::Iou3d, MetricKind::CsBev, MetricKind::CsAbs];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Bev => "bev",
            MetricKind::Iou3d => "3d",
            MetricKind::CsBev => "cs-bev",
            MetricKind::CsAbs => "cs-abs",
        }
    }

    /// Evaluation threshold used by default for this metric: 0.7 for BEV, 3D
    /// and CS-ABS, 0.5 for CS-BEV.
    pub fn default_threshold(&self) -> f64 {
        match self {
            MetricKind::CsBev => 0.5,
            _ => 0.7,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bev" => Ok(MetricKind::Bev),
            "3d" | "iou3d" => Ok(MetricKind::Iou3d),
            "cs-bev" | "cs_bev" => Ok(MetricKind::CsBev),
            "cs-abs" | "cs_abs" => Ok(MetricKind::CsAbs),
            other => Err(MetricError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecallMode {
    R11,
    R40,
}

impl RecallMode {
    /// Recall positions at which interpolated precision is sampled, as
    /// `(numerator, denominator)` pairs.
    pub fn positions(&self) -> impl Iterator<Item = (u64, u64)> {
        let (range, denom) = match self {
            RecallMode::R11 => (0..=10u64, 10u64),
            RecallMode::R40 => (1..=40u64, 40u64),
        };
        range.map(move |k| (k, denom))
    }
}

/// How a detection picks the ground truth it is tested against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchStrategy {
    /// Candidate ground truth maximizes the evaluated metric itself.
    SameMetric,
    /// Candidate ground truth maximizes BEV IoU; the evaluated metric then
    /// decides TP/FP.
    BevThenScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub kind: MetricKind,
    pub alpha: f64,
    pub iou_threshold: f64,
    pub recall_mode: RecallMode,
    pub match_floor: f64,
    pub match_strategy: MatchStrategy,
}

impl MetricConfig {
    /// Default configuration: alpha 1, R40, floor 0.1, the metric's default
    /// threshold.
    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            alpha: DEFAULT_ALPHA,
            iou_threshold: kind.default_threshold(),
            recall_mode: RecallMode::R40,
            match_floor: DEFAULT_MATCH_FLOOR,
            match_strategy: MatchStrategy::SameMetric,
        }
    }

    /// The four metrics with their default thresholds.
    pub fn defaults() -> Vec<MetricConfig> {
        MetricKind::ALL.iter().map(|k| MetricConfig::new(*k)).collect()
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_threshold(mut self, t: f64) -> Self {
        self.iou_threshold = t;
        self
    }

    pub fn with_recall(mut self, mode: RecallMode) -> Self {
        self.recall_mode = mode;
        self
    }

    pub fn with_match_floor(mut self, floor: f64) -> Self {
        self.match_floor = floor;
        self
    }

    pub fn with_strategy(mut self, s: MatchStrategy) -> Self {
        self.match_strategy = s;
        self
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(MetricError::InvalidAlpha(self.alpha));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(MetricError::InvalidThreshold(self.iou_threshold));
        }
        if !(self.match_floor >= 0.0 && self.match_floor < 1.0) {
            return Err(MetricError::InvalidMatchFloor(self.match_floor));
        }
        Ok(())
    }

    /// Whether alpha falls within the recommended practical range.
    pub fn alpha_in_practical_range(&self) -> bool {
        self.alpha > PRACTICAL_ALPHA_RANGE.0 && self.alpha < PRACTICAL_ALPHA_RANGE.1
    }
}

/// `1 / (1 + alpha * G_cs)`.
pub fn cs_abs_score(pred: &BevBox, gt: &BevBox, alpha: f64) -> f64 {
    cs_penalty(closer_surfaces_gap(pred, gt), alpha)
}

/// BEV IoU divided by `1 + alpha * G_cs`.
pub fn cs_bev_score(pred: &BevBox, gt: &BevBox, alpha: f64) -> f64 {
    bev_iou(pred, gt) * cs_penalty(closer_surfaces_gap(pred, gt), alpha)
}

/// The multiplicative penalty `1 / (1 + alpha * gap)`.
pub fn cs_penalty(gap: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + alpha * gap)
}

pub fn metric_score(cfg: &MetricConfig, pred: &Box3D, gt: &Box3D) -> f64 {
    match cfg.kind {
        MetricKind::Bev => bev_iou(pred.bev(), gt.bev()),
        MetricKind::Iou3d => iou_3d(pred, gt),
        MetricKind::CsAbs => cs_abs_score(pred.bev(), gt.bev(), cfg.alpha),
        MetricKind::CsBev => cs_bev_score(pred.bev(), gt.bev(), cfg.alpha),
    }
}
