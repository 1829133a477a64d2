//! Oriented-rectangle geometry on the bird's-eye-view plane.
//!
//! All coordinates live in the canonical BEV frame: origin at the sensor,
//! `x` forward, `y` left, yaw measured counterclockwise from `+x`. Boxes are
//! validated on construction, so every downstream routine may assume positive
//! extents and finite fields.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distances to the origin closer than this are treated as ties when sorting
/// vertices.
pub const DISTANCE_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("degenerate edge: endpoints coincide at ({x}, {y})")]
    DegenerateEdge { x: f64, y: f64 },
    #[error("degenerate vertex set: points {0} and {1} coincide")]
    CoincidentVertices(usize, usize),
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Rotates the vector counterclockwise by `angle` radians about the origin.
    pub fn rotated(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Oriented rectangle on the BEV plane.
///
/// `length` is the extent along the heading, `width` the extent perpendicular
/// to it. The yaw is normalized to `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BevBox {
    cx: f64,
    cy: f64,
    length: f64,
    width: f64,
    yaw: f64,
}

impl BevBox {
    pub fn new(cx: f64, cy: f64, length: f64, width: f64, yaw: f64) -> Result<Self, GeometryError> {
        for (name, v) in [
            ("cx", cx),
            ("cy", cy),
            ("length", length),
            ("width", width),
            ("yaw", yaw),
        ] {
            if !v.is_finite() {
                return Err(GeometryError::InvalidBox(format!("{name} is not finite ({v})")));
            }
        }
        if length <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "length must be positive, got {length}"
            )));
        }
        if width <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "width must be positive, got {width}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            length,
            width,
            yaw: wrap_angle(yaw),
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    /// Same extents and center, new heading.
    pub fn with_yaw(&self, yaw: f64) -> BevBox {
        BevBox {
            yaw: wrap_angle(yaw),
            ..*self
        }
    }

    pub fn with_center(&self, center: Point2) -> Result<BevBox, GeometryError> {
        BevBox::new(center.x, center.y, self.length, self.width, self.yaw)
    }

    pub fn translated(&self, offset: Point2) -> Result<BevBox, GeometryError> {
        self.with_center(self.center() + offset)
    }

    /// Corners in counterclockwise order starting from the rear-right corner.
    pub fn vertices(&self) -> [Point2; 4] {
        bev_vertices(self)
    }

    /// Whether `p` lies inside or on the boundary of the rectangle.
    pub fn contains(&self, p: Point2) -> bool {
        let local = (p - self.center()).rotated(-self.yaw);
        local.x.abs() <= self.length / 2.0 && local.y.abs() <= self.width / 2.0
    }
}

/// A BEV box extended with a vertical extent. The z axis is always vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Box3D {
    bev: BevBox,
    cz: f64,
    height: f64,
}

impl Box3D {
    pub fn new(bev: BevBox, cz: f64, height: f64) -> Result<Self, GeometryError> {
        if !cz.is_finite() || !height.is_finite() {
            return Err(GeometryError::InvalidBox(format!(
                "non-finite cz ({cz}) or height ({height})"
            )));
        }
        if height <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "height must be positive, got {height}"
            )));
        }
        Ok(Self { bev, cz, height })
    }

    /// Convenience constructor from the seven box parameters.
    pub fn from_params(
        x: f64,
        y: f64,
        z: f64,
        length: f64,
        width: f64,
        height: f64,
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        Self::new(BevBox::new(x, y, length, width, yaw)?, z, height)
    }

    pub fn bev(&self) -> &BevBox {
        &self.bev
    }

    pub fn cz(&self) -> f64 {
        self.cz
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn volume(&self) -> f64 {
        self.bev.area() * self.height
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.cz - self.height / 2.0, self.cz + self.height / 2.0)
    }

    pub fn with_bev(&self, bev: BevBox) -> Box3D {
        Box3D { bev, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    a: Point2,
    b: Point2,
}

impl Edge {
    pub fn new(a: Point2, b: Point2) -> Result<Self, GeometryError> {
        if a == b {
            return Err(GeometryError::DegenerateEdge { x: a.x, y: a.y });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> Point2 {
        self.a
    }

    pub fn b(&self) -> Point2 {
        self.b
    }
}

/// The four corners sorted by the closer-surfaces rule.
///
/// `v1` is nearest the origin and `v4` farthest; of the remaining two, `v2`
/// has the smaller absolute x-coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderedVertices {
    pub v1: Point2,
    pub v2: Point2,
    pub v3: Point2,
    pub v4: Point2,
}

pub fn bev_vertices(b: &BevBox) -> [Point2; 4] {
    let hl = b.length / 2.0;
    let hw = b.width / 2.0;
    let c = b.center();
    [
        Point2::new(-hl, -hw),
        Point2::new(hl, -hw),
        Point2::new(hl, hw),
        Point2::new(-hl, hw),
    ]
    .map(|p| c + p.rotated(b.yaw))
}

// Smaller |x| first, then smaller y, then smaller x.
fn lateral_order(a: Point2, b: Point2) -> std::cmp::Ordering {
    a.x.abs()
        .total_cmp(&b.x.abs())
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
}

fn distance_order(a: Point2, b: Point2) -> std::cmp::Ordering {
    let (da, db) = (a.norm(), b.norm());
    if (da - db).abs() > DISTANCE_TIE_TOL {
        da.total_cmp(&db)
    } else {
        lateral_order(a, b)
    }
}

/// Sorts four corners into closer-surfaces order.
///
/// When several points tie for the largest distance, `v4` is the tied point
/// farthest from `v1`, which keeps `v1` and `v4` diagonal for rectangles.
pub fn sort_vertices_cs(vertices: [Point2; 4]) -> Result<OrderedVertices, GeometryError> {
    for i in 0..4 {
        for j in (i + 1)..4 {
            if vertices[i] == vertices[j] {
                return Err(GeometryError::CoincidentVertices(i, j));
            }
        }
    }
    let mut pts = vertices;
    pts.sort_by(|a, b| distance_order(*a, *b));
    let v1 = pts[0];
    let far = pts[3].norm();
    let v4_idx = (1..4)
        .filter(|&i| (far - pts[i].norm()).abs() <= DISTANCE_TIE_TOL)
        .max_by(|&i, &j| {
            pts[i]
                .distance(v1)
                .total_cmp(&pts[j].distance(v1))
                // on exact equality prefer the later (farther in sort order) point
                .then(i.cmp(&j))
        })
        .unwrap_or(3);
    let mut middle: Vec<Point2> = (1..4).filter(|&i| i != v4_idx).map(|i| pts[i]).collect();
    middle.sort_by(|a, b| lateral_order(*a, *b));
    Ok(OrderedVertices {
        v1,
        v2: middle[0],
        v3: middle[1],
        v4: pts[v4_idx],
    })
}

/// Vertices of a valid box in closer-surfaces order.
pub fn ordered_vertices(b: &BevBox) -> OrderedVertices {
    sort_vertices_cs(bev_vertices(b)).expect("valid boxes have four distinct corners")
}

/// Perpendicular distance from `p` to the infinite line through `e`.
pub fn point_to_edge_distance(p: Point2, e: &Edge) -> f64 {
    let d = e.b - e.a;
    d.cross(p - e.a).abs() / d.norm()
}

/// Shoelace area of a simple polygon (absolute value).
pub fn polygon_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let n = poly.len();
    let twice: f64 = (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum();
    twice.abs() / 2.0
}

fn clip_halfplane(poly: &[Point2], a: Point2, b: Point2) -> Vec<Point2> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    let dir = b - a;
    for i in 0..n {
        let s = poly[i];
        let e = poly[(i + 1) % n];
        let sc = dir.cross(s - a);
        let ec = dir.cross(e - a);
        let s_in = sc >= 0.0;
        let e_in = ec >= 0.0;
        if s_in != e_in {
            let denom = sc - ec;
            if denom != 0.0 {
                let t = sc / denom;
                out.push(s + (e - s) * t);
            }
        }
        if e_in {
            out.push(e);
        }
    }
    out
}

/// Clips convex polygon `subject` against convex, counterclockwise `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut result = subject.to_vec();
    for i in 0..clip.len() {
        if result.len() < 3 {
            return Vec::new();
        }
        result = clip_halfplane(&result, clip[i], clip[(i + 1) % clip.len()]);
    }
    if result.len() < 3 {
        Vec::new()
    } else {
        result
    }
}

/// Area of the intersection of two oriented rectangles (Sutherland–Hodgman).
pub fn convex_intersection_area(a: &BevBox, b: &BevBox) -> f64 {
    // cheap reject on circumscribed circles
    let ra = 0.5 * a.length.hypot(a.width);
    let rb = 0.5 * b.length.hypot(b.width);
    if a.center().distance(b.center()) > ra + rb {
        return 0.0;
    }
    let area = polygon_area(&clip_convex(&a.vertices(), &b.vertices()));
    area.min(a.area()).min(b.area())
}

pub fn bev_iou(a: &BevBox, b: &BevBox) -> f64 {
    let inter = convex_intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let (a_lo, a_hi) = a.z_range();
    let (b_lo, b_hi) = b.z_range();
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let dz = vertical_overlap(a, b);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = convex_intersection_area(&a.bev, &b.bev) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Absolute gap between the closer surfaces of a prediction and a ground truth.
///
/// Sum of the nearest-vertex displacement and the perpendicular distances of
/// the prediction's `v2`/`v3` to the lines through the ground truth's
/// `v1–v2` and `v1–v3` edges.
pub fn closer_surfaces_gap(pred: &BevBox, gt: &BevBox) -> f64 {
    let p = ordered_vertices(pred);
    let g = ordered_vertices(gt);
    let e12 = Edge { a: g.v1, b: g.v2 };
    let e13 = Edge { a: g.v1, b: g.v3 };
    p.v1.distance(g.v1) + point_to_edge_distance(p.v2, &e12) + point_to_edge_distance(p.v3, &e13)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cx: f64, cy: f64, l: f64, w: f64, yaw: f64) -> BevBox {
        BevBox::new(cx, cy, l, w, yaw).unwrap()
    }

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn close(a: Point2, b: Point2) -> bool {
        a.distance(b) < 1e-12
    }

    fn same_set(got: [Point2; 4], want: [Point2; 4]) -> bool {
        want.iter().all(|w| got.iter().any(|g| close(*g, *w)))
    }

    #[test]
    fn vertices_axis_aligned() {
        let v = bx(3.0, 10.0, 4.0, 2.0, 0.0).vertices();
        assert_eq!(v, [p(1.0, 9.0), p(5.0, 9.0), p(5.0, 11.0), p(1.0, 11.0)]);
        let v = bx(0.0, 0.0, 2.0, 2.0, 0.0).vertices();
        assert_eq!(v, [p(-1.0, -1.0), p(1.0, -1.0), p(1.0, 1.0), p(-1.0, 1.0)]);
    }

    #[test]
    fn vertices_rotated_quarter_turn() {
        let v = bx(2.0, 6.0, 4.0, 2.0, PI / 2.0).vertices();
        assert!(same_set(v, [p(3.0, 4.0), p(3.0, 8.0), p(1.0, 8.0), p(1.0, 4.0)]));
    }

    #[test]
    fn vertices_agree_with_membership() {
        let b = bx(3.0, 10.0, 4.0, 2.0, 0.3);
        for v in b.vertices() {
            // each corner is on the boundary: inside, but a nudge outward leaves
            assert!(b.contains(v + (b.center() - v) * 1e-9));
            assert!(!b.contains(v + (v - b.center()) * 1e-6));
        }
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BevBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(BevBox::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
        assert!(BevBox::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(BevBox::new(0.0, 0.0, 1.0, 1.0, f64::INFINITY).is_err());
        let b = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        assert!(Box3D::new(b, 0.0, 0.0).is_err());
    }

    #[test]
    fn yaw_normalized() {
        assert!((bx(0.0, 0.0, 1.0, 1.0, 3.0 * PI).yaw() - PI).abs() < 1e-12);
        assert_eq!(bx(0.0, 0.0, 1.0, 1.0, -PI).yaw(), PI);
        assert!((bx(0.0, 0.0, 1.0, 1.0, -0.5 * PI - 2.0 * PI).yaw() + 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn sort_examples() {
        let o = sort_vertices_cs([p(1.0, 9.0), p(5.0, 9.0), p(5.0, 11.0), p(1.0, 11.0)]).unwrap();
        assert_eq!(
            (o.v1, o.v2, o.v3, o.v4),
            (p(1.0, 9.0), p(1.0, 11.0), p(5.0, 9.0), p(5.0, 11.0))
        );
        let o = sort_vertices_cs([p(1.0, 4.0), p(3.0, 4.0), p(1.0, 8.0), p(3.0, 8.0)]).unwrap();
        assert_eq!(
            (o.v1, o.v2, o.v3, o.v4),
            (p(1.0, 4.0), p(1.0, 8.0), p(3.0, 4.0), p(3.0, 8.0))
        );
    }

    #[test]
    fn sort_is_input_order_independent() {
        let pts = [p(1.0, 9.0), p(5.0, 9.0), p(5.0, 11.0), p(1.0, 11.0)];
        let want = sort_vertices_cs(pts).unwrap();
        for rot in 0..4 {
            let mut q = pts;
            q.rotate_left(rot);
            assert_eq!(sort_vertices_cs(q).unwrap(), want);
            q.reverse();
            assert_eq!(sort_vertices_cs(q).unwrap(), want);
        }
    }

    #[test]
    fn sort_symmetric_square_is_deterministic() {
        let sq = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let o = ordered_vertices(&sq);
        assert_eq!(o, ordered_vertices(&sq));
        assert_eq!(o.v1, p(-1.0, -1.0));
        assert_eq!(o.v4, p(1.0, 1.0));
        assert_eq!(o.v2, p(1.0, -1.0));
        assert_eq!(o.v3, p(-1.0, 1.0));
    }

    #[test]
    fn sort_keeps_diagonal_under_ties() {
        // origin on the box's lateral symmetry axis: pairs of corners tie
        let o = ordered_vertices(&bx(0.0, 5.0, 4.0, 2.0, 0.0));
        assert_eq!(o.v1, p(-2.0, 4.0));
        assert_eq!(o.v4, p(2.0, 6.0));
    }

    #[test]
    fn sort_rejects_coincident() {
        let err = sort_vertices_cs([p(1.0, 1.0), p(2.0, 1.0), p(1.0, 1.0), p(0.0, 3.0)]);
        assert_eq!(err, Err(GeometryError::CoincidentVertices(0, 2)));
    }

    #[test]
    fn edge_distance_examples() {
        let e = Edge::new(p(1.0, 9.0), p(5.0, 9.0)).unwrap();
        assert!((point_to_edge_distance(p(5.0, 9.5), &e) - 0.5).abs() < 1e-15);
        assert_eq!(point_to_edge_distance(p(17.0, 9.0), &e), 0.0);
        let e = Edge::new(p(-1.0, 0.0), p(1.0, 0.0)).unwrap();
        assert_eq!(point_to_edge_distance(p(0.0, 1.0), &e), 1.0);
        // infinite line, not segment
        assert_eq!(point_to_edge_distance(p(10.0, 1.0), &e), 1.0);
        assert!(matches!(
            Edge::new(p(2.0, 2.0), p(2.0, 2.0)),
            Err(GeometryError::DegenerateEdge { .. })
        ));
    }

    #[test]
    fn intersection_examples() {
        let sq = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        assert!((convex_intersection_area(&sq, &sq) - 1.0).abs() < 1e-12);
        let rot = sq.with_yaw(PI / 4.0);
        let octagon = 2.0 * (2f64.sqrt() - 1.0);
        assert!((convex_intersection_area(&sq, &rot) - octagon).abs() < 1e-12);
        assert!((convex_intersection_area(&rot, &sq) - octagon).abs() < 1e-12);
        let far = bx(5.0, 0.0, 1.0, 1.0, 0.0);
        assert_eq!(convex_intersection_area(&sq, &far), 0.0);
        // touching along an edge
        let adj = bx(1.0, 0.0, 1.0, 1.0, 0.0);
        assert!(convex_intersection_area(&sq, &adj).abs() < 1e-12);
    }

    #[test]
    fn iou_examples() {
        let a = bx(3.0, 10.0, 4.0, 2.0, 0.0);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        let b = bx(3.0, 10.5, 4.0, 2.0, 0.0);
        assert!((bev_iou(&a, &b) - 0.6).abs() < 1e-12);
        let sq = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        assert!((bev_iou(&sq, &sq.with_yaw(PI / 4.0)) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        // containment
        let inner = bx(3.0, 10.0, 2.0, 1.0, 0.0);
        assert!((bev_iou(&a, &inner) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn iou_3d_examples() {
        let cube = Box3D::from_params(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!((iou_3d(&cube, &cube) - 1.0).abs() < 1e-12);
        let up = Box3D::from_params(0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!((iou_3d(&cube, &up) - 1.0 / 3.0).abs() < 1e-12);
        let away = Box3D::from_params(0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(iou_3d(&cube, &away), 0.0);
    }

    #[test]
    fn gap_examples() {
        let gt = bx(3.0, 10.0, 4.0, 2.0, 0.0);
        assert_eq!(closer_surfaces_gap(&gt, &gt), 0.0);
        let shifted = bx(3.0, 10.5, 4.0, 2.0, 0.0);
        assert!((closer_surfaces_gap(&shifted, &gt) - 1.0).abs() < 1e-12);
        let shrunk = bx(3.0, 9.75, 4.0, 1.5, 0.0);
        assert!(closer_surfaces_gap(&shrunk, &gt).abs() < 1e-12);
        let centered = bx(3.0, 10.25, 4.0, 1.5, 0.0);
        assert!((closer_surfaces_gap(&centered, &gt) - 1.0).abs() < 1e-12);
    }
}
