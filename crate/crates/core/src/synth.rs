//! Seeded synthetic scenes for desk-scale metric checks.
//!
//! Ground truths are sampled in an annulus around the sensor. Two prediction
//! behaviours are modelled on top of them, both with a systematic size error:
//! a *center-anchored* prediction keeps the ground-truth center, a
//! *vertex-anchored* one keeps the ground-truth closest vertex. Both have the
//! same BEV overlap in the noise-free case, but only the latter reproduces the
//! closer surfaces.
//!
//! Every frame draws from its own ChaCha stream (`seed`, stream = frame index),
//! so output does not depend on how frames are scheduled.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataio::{Dataset, Frame};
use crate::edgehead::{closest_vertex, place_closest_vertex};
use crate::geometry::{bev_iou, BevBox, Box3D};
use crate::matching::{Detection, GroundTruth};

/// Smallest extent produced by clamping Gaussian size samples.
pub const MIN_EXTENT: f64 = 0.1;
/// Standard deviation of the score noise added to the BEV IoU.
pub const SCORE_NOISE_SD: f64 = 0.05;

const PREDICTION_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub l: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub objects_per_frame: usize,
    pub range_annulus: (f64, f64),
    pub size_mean: Dims,
    pub size_sd: Dims,
    /// Ratio of predicted to true extents (emulated source/target size shift).
    pub scale_factor: f64,
    pub position_noise_sd: f64,
    pub heading_noise_sd: f64,
    pub class_label: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_frames: 200,
            objects_per_frame: 8,
            range_annulus: (5.0, 60.0),
            size_mean: Dims {
                l: 3.9,
                w: 1.6,
                h: 1.56,
            },
            size_sd: Dims { l: 0.2, w: 0.1, h: 0.1 },
            scale_factor: 0.8,
            position_noise_sd: 0.05,
            heading_noise_sd: 0.01,
            class_label: "Car".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let (r_min, r_max) = self.range_annulus;
        if !(r_min >= 0.0 && r_min.is_finite() && r_max.is_finite()) {
            return bad(format!(
                "annulus radii must be finite and r_min >= 0, got [{r_min}, {r_max}]"
            ));
        }
        if r_min > r_max {
            return bad(format!("r_min {r_min} exceeds r_max {r_max}"));
        }
        for (name, v) in [
            ("l", self.size_mean.l),
            ("w", self.size_mean.w),
            ("h", self.size_mean.h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("mean size {name} must be positive, got {v}"));
            }
        }
        let sds = [
            self.size_sd.l,
            self.size_sd.w,
            self.size_sd.h,
            self.position_noise_sd,
            self.heading_noise_sd,
        ];
        if sds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("standard deviations must be finite and non-negative".into());
        }
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return bad(format!("scale factor must be positive, got {}", self.scale_factor));
        }
        Ok(())
    }

    pub fn noise(&self) -> PerturbNoise {
        PerturbNoise {
            position_sd: self.position_noise_sd,
            heading_sd: self.heading_noise_sd,
            score_sd: SCORE_NOISE_SD,
        }
    }
}

/// Multipliers applied to a ground truth's BEV extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeScale {
    pub length: f64,
    pub width: f64,
}

impl SizeScale {
    pub fn uniform(s: f64) -> Self {
        Self { length: s, width: s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbNoise {
    pub position_sd: f64,
    pub heading_sd: f64,
    pub score_sd: f64,
}

impl PerturbNoise {
    pub const NONE: PerturbNoise = PerturbNoise {
        position_sd: 0.0,
        heading_sd: 0.0,
        score_sd: 0.0,
    };
}

/// Deterministic per-frame generator.
pub fn frame_rng(seed: u64, frame_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index);
    rng
}

fn gaussian(rng: &mut impl Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("validated standard deviation").sample(rng)
}

pub fn frame_id(index: usize) -> String {
    format!("{index:06}")
}

fn sample_object(cfg: &SynthConfig, frame: &str, rng: &mut impl Rng) -> GroundTruth {
    let (r_min, r_max) = cfg.range_annulus;
    // uniform over the annulus area
    let u: f64 = rng.random();
    let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
    let phi = rng.random_range(-PI..PI);
    let l = gaussian(rng, cfg.size_mean.l, cfg.size_sd.l).max(MIN_EXTENT);
    let w = gaussian(rng, cfg.size_mean.w, cfg.size_sd.w).max(MIN_EXTENT);
    let h = gaussian(rng, cfg.size_mean.h, cfg.size_sd.h).max(MIN_EXTENT);
    let yaw = -rng.random_range(-PI..PI);
    let bbox = Box3D::from_params(r * phi.cos(), r * phi.sin(), h / 2.0 - 1.7, l, w, h, yaw)
        .expect("clamped sizes and finite centers");
    GroundTruth::new(frame, cfg.class_label.clone(), bbox)
}

/// Samples ground truths only.
pub fn generate_scene(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let frames: Vec<(String, Frame)> = (0..cfg.n_frames)
        .into_par_iter()
        .map(|i| {
            let id = frame_id(i);
            let mut rng = frame_rng(cfg.seed, i as u64);
            let gts = (0..cfg.objects_per_frame)
                .map(|_| sample_object(cfg, &id, &mut rng))
                .collect();
            (
                id,
                Frame {
                    detections: Vec::new(),
                    ground_truths: gts,
                },
            )
        })
        .collect();
    Ok(Dataset {
        frames: frames.into_iter().collect(),
        ..Dataset::default()
    })
}

fn scaled(gt: &BevBox, scale: SizeScale) -> BevBox {
    BevBox::new(
        gt.cx(),
        gt.cy(),
        gt.length() * scale.length,
        gt.width() * scale.width,
        gt.yaw(),
    )
    .expect("positive scale keeps extents positive")
}

fn finish(gt: &GroundTruth, bev: BevBox, noise: &PerturbNoise, rng: &mut impl Rng) -> Detection {
    let dx = gaussian(rng, 0.0, noise.position_sd);
    let dy = gaussian(rng, 0.0, noise.position_sd);
    let dyaw = gaussian(rng, 0.0, noise.heading_sd);
    let bev = BevBox::new(
        bev.cx() + dx,
        bev.cy() + dy,
        bev.length(),
        bev.width(),
        bev.yaw() + dyaw,
    )
    .expect("finite noise keeps the box valid");
    let iou = bev_iou(&bev, gt.bbox.bev());
    let score = (iou + gaussian(rng, 0.0, noise.score_sd)).clamp(0.0, 1.0);
    Detection::new(
        gt.frame_id.clone(),
        gt.class_label.clone(),
        gt.bbox.with_bev(bev),
        score,
    )
    .expect("score clamped into [0, 1]")
}

/// Scales the extents about the ground-truth center.
pub fn perturb_center_anchored(
    gt: &GroundTruth,
    scale: SizeScale,
    noise: &PerturbNoise,
    rng: &mut impl Rng,
) -> Detection {
    finish(gt, scaled(gt.bbox.bev(), scale), noise, rng)
}

/// Scales the extents, then moves the box so its closest vertex sits on the
/// ground truth's closest vertex.
pub fn perturb_vertex_anchored(
    gt: &GroundTruth,
    scale: SizeScale,
    noise: &PerturbNoise,
    rng: &mut impl Rng,
) -> Detection {
    let bev = place_closest_vertex(&scaled(gt.bbox.bev(), scale), closest_vertex(gt.bbox.bev()));
    finish(gt, bev, noise, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchoring {
    Center,
    Vertex,
}

/// Predictions for every ground truth of `gts`. Each frame uses its own
/// stream derived from `seed`, so both anchorings draw identical noise.
pub fn perturb_dataset(
    gts: &Dataset,
    anchoring: Anchoring,
    scale: SizeScale,
    noise: &PerturbNoise,
    seed: u64,
) -> Dataset {
    let frames: Vec<(String, Frame)> = gts
        .frames
        .iter()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, (id, frame))| {
            let mut rng = frame_rng(seed ^ PREDICTION_STREAM_SALT, i as u64);
            let dets = frame
                .ground_truths
                .iter()
                .map(|g| match anchoring {
                    Anchoring::Center => perturb_center_anchored(g, scale, noise, &mut rng),
                    Anchoring::Vertex => perturb_vertex_anchored(g, scale, noise, &mut rng),
                })
                .collect();
            (
                id.clone(),
                Frame {
                    detections: dets,
                    ground_truths: Vec::new(),
                },
            )
        })
        .collect();
    Dataset {
        frames: frames.into_iter().collect(),
        frame_plane: gts.frame_plane,
    }
}

/// Ground truths plus both prediction sets for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScenario {
    pub ground_truth: Dataset,
    pub center_anchored: Dataset,
    pub vertex_anchored: Dataset,
}

pub fn generate_scenario(cfg: &SynthConfig) -> Result<SynthScenario, SynthError> {
    let ground_truth = generate_scene(cfg)?;
    let scale = SizeScale::uniform(cfg.scale_factor);
    let noise = cfg.noise();
    Ok(SynthScenario {
        center_anchored: perturb_dataset(&ground_truth, Anchoring::Center, scale, &noise, cfg.seed),
        vertex_anchored: perturb_dataset(&ground_truth, Anchoring::Vertex, scale, &noise, cfg.seed),
        ground_truth,
    })
}
