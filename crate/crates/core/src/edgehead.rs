//! Closest-vertex regression targets for a box refinement head.
//!
//! The refinement only adjusts the BEV position of the box's closest vertex
//! and its heading; z, length, width and height are carried over from the
//! anchor. Targets are computed after rotating the anchor to the ground-truth
//! heading, so that decoding (rotate, then move the closest vertex) lands the
//! refined box's closest vertex on the ground truth's.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ordered_vertices, wrap_angle, BevBox, Box3D, Point2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("smooth-l1 beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
}

/// Residuals of the closest vertex and heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeTargets {
    pub dx_cv: f64,
    pub dy_cv: f64,
    pub dtheta: f64,
}

impl EdgeTargets {
    pub fn new(dx_cv: f64, dy_cv: f64, dtheta: f64) -> Self {
        Self {
            dx_cv,
            dy_cv,
            dtheta: wrap_angle(dtheta),
        }
    }

    pub const ZERO: EdgeTargets = EdgeTargets {
        dx_cv: 0.0,
        dy_cv: 0.0,
        dtheta: 0.0,
    };
}

/// Center-based residuals used by the control-group head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterTargets {
    pub dx_c: f64,
    pub dy_c: f64,
    pub dtheta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    beta: f64,
}

impl LossConfig {
    pub fn new(beta: f64) -> Result<Self, LossError> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(LossError::InvalidBeta(beta));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

const PLACEMENT_TOL: f64 = 1e-12;

pub fn closest_vertex(b: &BevBox) -> Point2 {
    ordered_vertices(b).v1
}

/// The anchor's BEV box rotated about its own center to `yaw`.
fn rotated_anchor(anchor: &Box3D, yaw: f64) -> BevBox {
    anchor.bev().with_yaw(yaw)
}

pub fn encode_targets(anchor: &Box3D, gt: &Box3D) -> EdgeTargets {
    let gt_yaw = gt.bev().yaw();
    let cv_anchor = closest_vertex(&rotated_anchor(anchor, gt_yaw));
    let cv_gt = closest_vertex(gt.bev());
    EdgeTargets::new(
        cv_gt.x - cv_anchor.x,
        cv_gt.y - cv_anchor.y,
        gt_yaw - anchor.bev().yaw(),
    )
}

/// Residuals without the rotation step: vertex difference taken on the
/// anchor as-is. Kept for comparison only.
pub fn encode_targets_unrotated(anchor: &Box3D, gt: &Box3D) -> EdgeTargets {
    let cv_anchor = closest_vertex(anchor.bev());
    let cv_gt = closest_vertex(gt.bev());
    EdgeTargets::new(
        cv_gt.x - cv_anchor.x,
        cv_gt.y - cv_anchor.y,
        gt.bev().yaw() - anchor.bev().yaw(),
    )
}

/// Translates `b` so that its closest vertex lands on `target`.
///
/// Moving the current closest corner onto `target` can hand the "closest"
/// role to another corner; the corner that stays closest after the move is
/// the one placed. Such a corner always exists for a rectangle.
pub fn place_closest_vertex(b: &BevBox, target: Point2) -> BevBox {
    let corners = ordered_vertices(b);
    let place = |c: Point2| b.translated(target - c).expect("finite translation of a valid box");
    let tol = PLACEMENT_TOL * (1.0 + target.norm());
    [corners.v1, corners.v2, corners.v3, corners.v4]
        .into_iter()
        .map(place)
        .find(|moved| closest_vertex(moved).distance(target) <= tol)
        .unwrap_or_else(|| place(corners.v1))
}

/// Places a refined box from an anchor and predicted residuals: rotate to the
/// new heading, then move the closest vertex by `(dx_cv, dy_cv)`.
pub fn decode_box(anchor: &Box3D, residuals: &EdgeTargets) -> Box3D {
    let yaw = wrap_angle(anchor.bev().yaw() + residuals.dtheta);
    let rotated = rotated_anchor(anchor, yaw);
    let target = closest_vertex(&rotated) + Point2::new(residuals.dx_cv, residuals.dy_cv);
    anchor.with_bev(place_closest_vertex(&rotated, target))
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let ax = x.abs();
    if ax < beta {
        0.5 * x * x / beta
    } else {
        ax - 0.5 * beta
    }
}

/// Analytic derivative of [`smooth_l1`].
pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Sum of smooth-l1 terms over matching residual components.
pub fn smooth_l1_sum(pred: &[f64], target: &[f64], cfg: &LossConfig) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    pred.iter().zip(target).map(|(p, t)| smooth_l1(p - t, cfg.beta)).sum()
}

pub fn edgehead_loss(pred: &EdgeTargets, target: &EdgeTargets, cfg: &LossConfig) -> f64 {
    smooth_l1(pred.dx_cv - target.dx_cv, cfg.beta)
        + smooth_l1(pred.dy_cv - target.dy_cv, cfg.beta)
        + smooth_l1(wrap_angle(pred.dtheta - target.dtheta), cfg.beta)
}

pub fn control_group_targets(anchor: &Box3D, gt: &Box3D) -> CenterTargets {
    let (a, g) = (anchor.bev(), gt.bev());
    CenterTargets {
        dx_c: g.cx() - a.cx(),
        dy_c: g.cy() - a.cy(),
        dtheta: wrap_angle(g.yaw() - a.yaw()),
    }
}

pub fn control_group_loss(pred: &CenterTargets, target: &CenterTargets, cfg: &LossConfig) -> f64 {
    smooth_l1(pred.dx_c - target.dx_c, cfg.beta)
        + smooth_l1(pred.dy_c - target.dy_c, cfg.beta)
        + smooth_l1(wrap_angle(pred.dtheta - target.dtheta), cfg.beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn b3(x: f64, y: f64, l: f64, w: f64, yaw: f64) -> Box3D {
        Box3D::from_params(x, y, -0.8, l, w, 1.5, yaw).unwrap()
    }

    fn near(a: EdgeTargets, b: EdgeTargets) -> bool {
        (a.dx_cv - b.dx_cv).abs() < 1e-12 && (a.dy_cv - b.dy_cv).abs() < 1e-12 && (a.dtheta - b.dtheta).abs() < 1e-12
    }

    #[test]
    fn closest_vertex_examples() {
        assert_eq!(
            closest_vertex(&BevBox::new(3.0, 10.0, 4.0, 2.0, 0.0).unwrap()),
            Point2::new(1.0, 9.0)
        );
        assert_eq!(
            closest_vertex(&BevBox::new(1.0, 10.0, 4.0, 2.0, 0.0).unwrap()),
            Point2::new(-1.0, 9.0)
        );
        let origin = BevBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        assert_eq!(closest_vertex(&origin), closest_vertex(&origin));
    }

    #[test]
    fn encode_examples() {
        let a = b3(1.0, 10.0, 4.0, 2.0, 0.0);
        assert_eq!(encode_targets(&a, &a), EdgeTargets::ZERO);
        let g = b3(1.4, 10.3, 4.0, 2.0, 0.0);
        assert!(near(encode_targets(&a, &g), EdgeTargets::new(0.4, 0.3, 0.0)));
    }

    #[test]
    fn rotation_step_changes_targets() {
        let a = b3(2.0, 6.0, 4.0, 2.0, 0.0);
        let g = b3(2.0, 6.0, 4.0, 2.0, FRAC_PI_2);
        let t = encode_targets(&a, &g);
        assert!(near(t, EdgeTargets::new(0.0, 0.0, FRAC_PI_2)), "{t:?}");
        let naive = encode_targets_unrotated(&a, &g);
        assert!(near(naive, EdgeTargets::new(1.0, -1.0, FRAC_PI_2)), "{naive:?}");
        // decoding the naive residuals misses the closest vertex
        let off = decode_box(&a, &naive);
        assert!(closest_vertex(off.bev()).distance(closest_vertex(g.bev())) > 0.5);
    }

    #[test]
    fn decode_examples() {
        let a = b3(1.0, 10.0, 4.0, 2.0, 0.0);
        assert_eq!(decode_box(&a, &EdgeTargets::ZERO), a);
        let d = decode_box(&a, &EdgeTargets::new(0.4, 0.3, 0.0));
        assert!((d.bev().cx() - 1.4).abs() < 1e-12 && (d.bev().cy() - 10.3).abs() < 1e-12);
        assert_eq!(
            (d.bev().length(), d.bev().width(), d.height(), d.cz()),
            (4.0, 2.0, 1.5, -0.8)
        );
    }

    #[test]
    fn decode_inverts_encode_with_size_mismatch() {
        let a = b3(12.0, 4.0, 3.6, 1.5, 0.2);
        let g = b3(12.3, 3.8, 4.4, 1.9, 0.5);
        let d = decode_box(&a, &encode_targets(&a, &g));
        assert!((d.bev().yaw() - g.bev().yaw()).abs() < 1e-12);
        assert!(closest_vertex(d.bev()).distance(closest_vertex(g.bev())) < 1e-12);
        assert_eq!(d.bev().length(), 3.6);
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0, 1.0), 0.0);
        assert_eq!(smooth_l1(0.5, 1.0), 0.125);
        assert_eq!(smooth_l1(2.0, 1.0), 1.5);
        assert_eq!(smooth_l1(-2.0, 1.0), 1.5);
        // continuous at the transition
        assert!((smooth_l1(1.0 - 1e-12, 1.0) - smooth_l1(1.0, 1.0)).abs() < 1e-11);
        assert!(LossConfig::new(0.0).is_err());
        assert!(LossConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn loss_examples() {
        let cfg = LossConfig::default();
        let t = EdgeTargets::new(0.4, 0.3, 0.1);
        assert_eq!(edgehead_loss(&t, &t, &cfg), 0.0);
        let p = EdgeTargets::new(0.9, 0.3, 0.1);
        assert!((edgehead_loss(&p, &t, &cfg) - 0.125).abs() < 1e-12);
        let p = EdgeTargets::new(2.4, 0.8, 0.1);
        assert!((edgehead_loss(&p, &t, &cfg) - 1.625).abs() < 1e-12);
        // heading residuals wrap: ±π are the same angle
        let a = EdgeTargets::new(0.0, 0.0, std::f64::consts::PI - 0.05);
        let b = EdgeTargets::new(0.0, 0.0, -std::f64::consts::PI + 0.05);
        assert!((edgehead_loss(&a, &b, &cfg) - 0.5 * 0.1f64.powi(2)).abs() < 1e-12);
        assert_eq!(smooth_l1_sum(&[0.5, 2.0], &[0.0, 0.0], &cfg), 1.625);
    }

    #[test]
    fn control_group_examples() {
        let a = b3(1.0, 10.0, 4.0, 2.0, 0.0);
        let z = control_group_targets(&a, &a);
        assert_eq!((z.dx_c, z.dy_c, z.dtheta), (0.0, 0.0, 0.0));
        let t = control_group_targets(&a, &b3(1.4, 10.3, 4.0, 2.0, 0.0));
        assert!((t.dx_c - 0.4).abs() < 1e-12 && (t.dy_c - 0.3).abs() < 1e-12 && t.dtheta == 0.0);
        let t = control_group_targets(&a, &b3(1.0, 10.0, 4.0, 2.0, FRAC_PI_2));
        assert_eq!((t.dx_c, t.dy_c), (0.0, 0.0));
        assert!((t.dtheta - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(control_group_loss(&t, &t, &LossConfig::default()), 0.0);
    }
}
