//! Independent reference implementations used by the integration and
//! acceptance tests. The AP reference reuses the pairwise metric values,
//! which the geometry oracles check on their own.
#![allow(dead_code)]

use std::f64::consts::PI;

use closer_surfaces::geometry::{BevBox, Box3D};
use closer_surfaces::matching::{Detection, GroundTruth};
use closer_surfaces::metrics::{metric_score, MetricConfig, RecallMode};
use closer_surfaces::Dataset;
use rand::Rng;

/// Corners of a box computed from its parameters, in no particular order.
pub fn corners(b: &BevBox) -> [(f64, f64); 4] {
    let (s, c) = b.yaw().sin_cos();
    let (hl, hw) = (b.length() / 2.0, b.width() / 2.0);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| (b.cx() + u * c - v * s, b.cy() + u * s + v * c))
}

/// Membership by projecting onto the box's own axes.
pub fn inside(b: &BevBox, x: f64, y: f64) -> bool {
    let (s, c) = b.yaw().sin_cos();
    let (dx, dy) = (x - b.cx(), y - b.cy());
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    u.abs() <= b.length() / 2.0 && v.abs() <= b.width() / 2.0
}

fn aabb(b: &BevBox) -> (f64, f64, f64, f64) {
    let cs = corners(b);
    let xs = cs.map(|p| p.0);
    let ys = cs.map(|p| p.1);
    let fold = |v: [f64; 4], f: fn(f64, f64) -> f64, init: f64| v.into_iter().fold(init, f);
    (
        fold(xs, f64::min, f64::INFINITY),
        fold(xs, f64::max, f64::NEG_INFINITY),
        fold(ys, f64::min, f64::INFINITY),
        fold(ys, f64::max, f64::NEG_INFINITY),
    )
}

/// Monte-Carlo estimate of the overlap area, sampling uniformly over the
/// intersection of both bounding rectangles.
pub fn mc_intersection_area(a: &BevBox, b: &BevBox, samples: usize, rng: &mut impl Rng) -> f64 {
    let (ax0, ax1, ay0, ay1) = aabb(a);
    let (bx0, bx1, by0, by1) = aabb(b);
    let (x0, x1, y0, y1) = (ax0.max(bx0), ax1.min(bx1), ay0.max(by0), ay1.min(by1));
    if x0 >= x1 || y0 >= y1 {
        return 0.0;
    }
    let mut hits = 0usize;
    for _ in 0..samples {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        if inside(a, x, y) && inside(b, x, y) {
            hits += 1;
        }
    }
    hits as f64 / samples as f64 * (x1 - x0) * (y1 - y0)
}

/// Distance from `p` to the line through `a` and `b`, found by dense sampling
/// of the line with successive refinement around the best sample.
pub fn sampled_line_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    const N: usize = 100_000;
    let at = |t: f64| (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
    let dist = |t: f64| {
        let q = at(t);
        ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
    };
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let reach = ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt() / len + 1.0;
    let (mut lo, mut hi) = (-reach, reach);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..4 {
        let step = (hi - lo) / N as f64;
        for i in 0..=N {
            let t = lo + i as f64 * step;
            let d = dist(t);
            if d < best.0 {
                best = (d, t);
            }
        }
        lo = best.1 - 2.0 * step;
        hi = best.1 + 2.0 * step;
    }
    best.0
}

/// A box with extents in `[0.2, 1.5]` near `(cx, cy)`.
pub fn small_box(rng: &mut impl Rng, cx: f64, cy: f64) -> BevBox {
    BevBox::new(
        cx + rng.random_range(-0.5..0.5),
        cy + rng.random_range(-0.5..0.5),
        rng.random_range(0.2..1.5),
        rng.random_range(0.2..1.5),
        rng.random_range(-PI..PI),
    )
    .unwrap()
}

/// A car-sized box anywhere within 60 m.
pub fn random_box(rng: &mut impl Rng) -> BevBox {
    BevBox::new(
        rng.random_range(-60.0..60.0),
        rng.random_range(-60.0..60.0),
        rng.random_range(0.5..6.0),
        rng.random_range(0.5..3.0),
        rng.random_range(-PI..PI),
    )
    .unwrap()
}

/// `b` perturbed by a small offset, a size change in `[0.7, 1.3]` and an
/// arbitrary heading change.
pub fn perturbed(rng: &mut impl Rng, b: &BevBox) -> BevBox {
    BevBox::new(
        b.cx() + rng.random_range(-0.5..0.5),
        b.cy() + rng.random_range(-0.5..0.5),
        b.length() * rng.random_range(0.7..1.3),
        b.width() * rng.random_range(0.7..1.3),
        b.yaw() + rng.random_range(-PI..PI),
    )
    .unwrap()
}

pub fn mirror_x(b: &BevBox) -> BevBox {
    BevBox::new(-b.cx(), b.cy(), b.length(), b.width(), PI - b.yaw()).unwrap()
}

pub fn scale_box(b: &BevBox, s: f64) -> BevBox {
    BevBox::new(b.cx() * s, b.cy() * s, b.length() * s, b.width() * s, b.yaw()).unwrap()
}

/// Reference AP: plain greedy matching per frame, then precision and recall
/// at every score cutoff kept as exact fractions.
pub fn brute_force_ap(ds: &Dataset, class: &str, cfg: &MetricConfig) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0usize;
    for frame in ds.frames.values() {
        let dets: Vec<&Detection> = frame.detections.iter().filter(|d| d.class_label == class).collect();
        let gts: Vec<&GroundTruth> = frame.ground_truths.iter().filter(|g| g.class_label == class).collect();
        n_gt += gts.len();
        let mut used = vec![false; gts.len()];
        let mut order: Vec<usize> = (0..dets.len()).collect();
        // insertion sort keeps equal scores in input order
        for i in 1..order.len() {
            let mut j = i;
            while j > 0 && dets[order[j - 1]].score() < dets[order[j]].score() {
                order.swap(j - 1, j);
                j -= 1;
            }
        }
        for &d in &order {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let v = metric_score(cfg, &dets[d].bbox, &gt.bbox);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            let tp = match best {
                Some((g, v)) if v >= cfg.iou_threshold => {
                    used[g] = true;
                    true
                }
                _ => false,
            };
            scored.push((dets[d].score(), tp));
        }
    }
    if n_gt == 0 {
        return None;
    }
    // every distinct score is a cutoff: keep detections with score >= cutoff
    let mut cutoffs: Vec<f64> = scored.iter().map(|s| s.0).collect();
    cutoffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cutoffs.dedup();
    let points: Vec<(usize, usize)> = cutoffs
        .iter()
        .map(|&c| {
            let kept = scored.iter().filter(|s| s.0 >= c);
            let tp = kept.clone().filter(|s| s.1).count();
            (tp, kept.count())
        })
        .collect();
    let positions: Vec<(usize, usize)> = match cfg.recall_mode {
        RecallMode::R11 => (0..=10).map(|k| (k, 10)).collect(),
        RecallMode::R40 => (1..=40).map(|k| (k, 40)).collect(),
    };
    let mut total = 0.0;
    for &(k, denom) in &positions {
        // best precision tp/kept among cutoffs with tp/n_gt >= k/denom
        let mut best: Option<(usize, usize)> = None;
        for &(tp, kept) in &points {
            if tp * denom < k * n_gt {
                continue;
            }
            if best.is_none_or(|(btp, bkept)| tp * bkept > btp * kept) {
                best = Some((tp, kept));
            }
        }
        total += best.map_or(0.0, |(tp, kept)| tp as f64 / kept as f64);
    }
    Some(total / positions.len() as f64)
}

/// A small dataset: up to `max_frames` frames with up to `max_objects`
/// ground truths and detections each, placed close enough to overlap, with
/// scores from a coarse grid so that ties occur.
pub fn tiny_dataset(rng: &mut impl Rng, max_frames: usize, max_objects: usize) -> Dataset {
    let mut ds = Dataset::default();
    let frames = rng.random_range(1..=max_frames);
    for f in 0..frames {
        let id = format!("{f:03}");
        let n_gt = rng.random_range(0..=max_objects);
        let n_det = rng.random_range(0..=max_objects);
        let mut gt_boxes = Vec::new();
        for _ in 0..n_gt {
            let b = Box3D::from_params(
                rng.random_range(5.0..12.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..-0.6),
                rng.random_range(3.0..5.0),
                rng.random_range(1.4..2.0),
                rng.random_range(1.3..1.8),
                rng.random_range(-0.3..0.3),
            )
            .unwrap();
            gt_boxes.push(b);
            ds.push_ground_truth(GroundTruth::new(id.clone(), "Car", b));
        }
        for _ in 0..n_det {
            let bbox = if !gt_boxes.is_empty() && rng.random_bool(0.8) {
                let g = gt_boxes[rng.random_range(0..gt_boxes.len())];
                let bev = g.bev();
                let moved = BevBox::new(
                    bev.cx() + rng.random_range(-0.6..0.6),
                    bev.cy() + rng.random_range(-0.4..0.4),
                    bev.length() * rng.random_range(0.8..1.2),
                    bev.width() * rng.random_range(0.8..1.2),
                    bev.yaw() + rng.random_range(-0.2..0.2),
                )
                .unwrap();
                Box3D::new(moved, g.cz() + rng.random_range(-0.2..0.2), g.height()).unwrap()
            } else {
                Box3D::from_params(
                    rng.random_range(5.0..12.0),
                    rng.random_range(-3.0..3.0),
                    -0.8,
                    4.0,
                    1.7,
                    1.5,
                    rng.random_range(-0.3..0.3),
                )
                .unwrap()
            };
            let score = rng.random_range(1..=10) as f64 / 10.0;
            ds.push_detection(Detection::new(id.clone(), "Car", bbox, score).unwrap());
        }
        ds.frames.entry(id).or_default();
    }
    ds
}
