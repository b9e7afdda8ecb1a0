//! Bird's-eye-view box primitives, frame transforms and the occlusion test.
//!
//! All occlusion reasoning happens in the ground plane. Height only matters
//! for 3D IoU (see [`crate::labeling`]) and as a node feature.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use crate::math;

const TWO_PI: f64 = 2.0 * PI;

/// Wraps an angle into `(-π, π]`. Angles already in range are returned
/// unchanged, bit for bit.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a - TWO_PI * math::floor((a + PI) / TWO_PI);
    if w <= -PI {
        w += TWO_PI;
    }
    if w > PI {
        w -= TWO_PI;
    }
    w
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("box {id}: {what} must be {rule}, got {value}")]
    InvalidDimension {
        id: VehicleId,
        what: &'static str,
        rule: &'static str,
        value: f64,
    },
    #[error("box {id}: non-finite {what}")]
    NonFinite { id: VehicleId, what: &'static str },
    #[error("unknown vehicle class {0:?}")]
    UnknownClass(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ORIGIN: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    #[inline]
    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    #[inline]
    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        math::hypot(self.x, self.y)
    }
}

/// Planar pose: position plus heading in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }
}

/// Opaque vehicle identifier. Ordering is lexicographic on the string form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VehicleId(pub String);

impl VehicleId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VehicleId {
    fn from(s: &str) -> Self {
        VehicleId(String::from(s))
    }
}

impl From<String> for VehicleId {
    fn from(s: String) -> Self {
        VehicleId(s)
    }
}

impl From<u64> for VehicleId {
    fn from(n: u64) -> Self {
        use core::fmt::Write;
        let mut s = String::new();
        let _ = write!(s, "{n}");
        VehicleId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum VehicleClass {
    #[default]
    Car,
    Truck,
    Bus,
    Trailer,
    ConstructionVehicle,
    Other,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 6] = [
        VehicleClass::Car,
        VehicleClass::Truck,
        VehicleClass::Bus,
        VehicleClass::Trailer,
        VehicleClass::ConstructionVehicle,
        VehicleClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Car => "car",
            VehicleClass::Truck => "truck",
            VehicleClass::Bus => "bus",
            VehicleClass::Trailer => "trailer",
            VehicleClass::ConstructionVehicle => "construction_vehicle",
            VehicleClass::Other => "other",
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VehicleClass {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VehicleClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| GeometryError::UnknownClass(String::from(s)))
    }
}

/// A vehicle's 3D box: center, size and yaw about the vertical axis.
///
/// `length` runs along the yaw direction, `width` across it. `height` may be
/// zero when it is not known yet (trajectory data before height regression).
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub width: f64,
    pub length: f64,
    pub height: f64,
    pub yaw: f64,
}

impl OrientedBox {
    /// Builds a box and checks its invariants. Yaw is wrapped.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<VehicleId>,
        class: VehicleClass,
        center: [f64; 3],
        width: f64,
        length: f64,
        height: f64,
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        let b = OrientedBox {
            id: id.into(),
            class,
            cx: center[0],
            cy: center[1],
            cz: center[2],
            width,
            length,
            height,
            yaw: wrap_angle(yaw),
        };
        b.validate()?;
        Ok(b)
    }

    /// Planar box with zero height, for tests and BEV-only callers.
    pub fn bev(id: impl Into<VehicleId>, cx: f64, cy: f64, width: f64, length: f64, yaw: f64) -> Self {
        OrientedBox {
            id: id.into(),
            class: VehicleClass::Car,
            cx,
            cy,
            cz: 0.0,
            width,
            length,
            height: 0.0,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            ("cx", self.cx),
            ("cy", self.cy),
            ("cz", self.cz),
            ("yaw", self.yaw),
            ("width", self.width),
            ("length", self.length),
            ("height", self.height),
        ];
        for (what, v) in fields {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite {
                    id: self.id.clone(),
                    what,
                });
            }
        }
        for (what, v) in [("width", self.width), ("length", self.length)] {
            if v <= 0.0 {
                return Err(GeometryError::InvalidDimension {
                    id: self.id.clone(),
                    what,
                    rule: "> 0",
                    value: v,
                });
            }
        }
        if self.height < 0.0 {
            return Err(GeometryError::InvalidDimension {
                id: self.id.clone(),
                what: "height",
                rule: ">= 0",
                value: self.height,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self) -> Vec2 {
        Vec2::new(self.cx, self.cy)
    }

    /// Planar distance of the center from the origin.
    #[inline]
    pub fn planar_distance(&self) -> f64 {
        math::hypot(self.cx, self.cy)
    }

    /// Maps a world point into the box frame (x along length, y along width),
    /// given the sine and cosine of the yaw.
    #[inline]
    fn to_local_with(&self, p: Vec2, s: f64, c: f64) -> Vec2 {
        let d = p.sub(self.center());
        Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    pub fn area_bev(&self) -> f64 {
        self.width * self.length
    }

    pub fn volume(&self) -> f64 {
        self.width * self.length * self.height
    }
}

/// Closed planar segment. Zero length is allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub ax: f64,
    pub ay: f64,
    pub bx: f64,
    pub by: f64,
}

impl Segment2 {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Segment2 {
            ax: a.x,
            ay: a.y,
            bx: b.x,
            by: b.y,
        }
    }

    #[inline]
    pub fn a(&self) -> Vec2 {
        Vec2::new(self.ax, self.ay)
    }

    #[inline]
    pub fn b(&self) -> Vec2 {
        Vec2::new(self.bx, self.by)
    }
}

/// Footprint corners, counter-clockwise, starting at front-left.
pub fn box_corners_bev(b: &OrientedBox) -> [Vec2; 4] {
    let (s, c) = math::sin_cos(b.yaw);
    let hl = 0.5 * b.length;
    let hw = 0.5 * b.width;
    let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    local.map(|(lx, ly)| Vec2::new(b.cx + c * lx - s * ly, b.cy + s * lx + c * ly))
}

/// True iff the closed segment touches the closed footprint of `b`.
///
/// Liang-Barsky clipping in the box frame. Boundary contact counts, and a
/// segment lying entirely inside the box intersects it.
pub fn segment_intersects_box_bev(seg: &Segment2, b: &OrientedBox) -> bool {
    // Cheap reject: segment clear of the circumscribed circle.
    let radius_sq = 0.25 * (b.length * b.length + b.width * b.width);
    if point_segment_distance_sq(b.center(), seg) > radius_sq * (1.0 + 1e-9) + 1e-12 {
        return false;
    }
    let (s, c) = math::sin_cos(b.yaw);
    let p0 = b.to_local_with(seg.a(), s, c);
    let p1 = b.to_local_with(seg.b(), s, c);
    let d = p1.sub(p0);
    let hl = 0.5 * b.length;
    let hw = 0.5 * b.width;

    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    // Each pair (p, q) encodes one half-plane constraint p * t <= q.
    let constraints = [
        (-d.x, p0.x + hl),
        (d.x, hl - p0.x),
        (-d.y, p0.y + hw),
        (d.y, hw - p0.y),
    ];
    for (p, q) in constraints {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
            continue;
        }
        let r = q / p;
        if p < 0.0 {
            t0 = t0.max(r);
        } else {
            t1 = t1.min(r);
        }
        if t0 > t1 {
            return false;
        }
    }
    true
}

fn point_segment_distance_sq(p: Vec2, seg: &Segment2) -> f64 {
    let a = seg.a();
    let ab = seg.b().sub(a);
    let ap = p.sub(a);
    let len_sq = ab.dot(ab);
    let t = if len_sq > 0.0 {
        (ap.dot(ab) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = ap.sub(ab.scale(t));
    q.dot(q)
}

/// Rigid transform of a world-frame box into the ego frame: ego at the
/// origin facing +x. `cz` and dimensions are untouched.
pub fn transform_to_ego(b: &OrientedBox, ego: &Pose2) -> OrientedBox {
    let (s, c) = math::sin_cos(ego.heading);
    let dx = b.cx - ego.x;
    let dy = b.cy - ego.y;
    OrientedBox {
        cx: c * dx + s * dy,
        cy: -s * dx + c * dy,
        yaw: wrap_angle(b.yaw - ego.heading),
        ..b.clone()
    }
}

/// Inverse of [`transform_to_ego`].
pub fn transform_to_world(b: &OrientedBox, ego: &Pose2) -> OrientedBox {
    let (s, c) = math::sin_cos(ego.heading);
    OrientedBox {
        cx: ego.x + c * b.cx - s * b.cy,
        cy: ego.y + s * b.cx + c * b.cy,
        yaw: wrap_angle(b.yaw + ego.heading),
        ..b.clone()
    }
}

/// Square detection range check on an ego-frame box, boundary inclusive.
/// Height is ignored.
#[inline]
pub fn in_detection_range(b: &OrientedBox, half_extent: f64) -> bool {
    b.cx.abs() <= half_extent && b.cy.abs() <= half_extent
}

/// Ids of the boxes in `others` whose footprint the sight line from
/// `origin` to the target's center crosses.
///
/// Sorted by planar center distance from `origin`, ties broken by id. The
/// target itself is skipped if it appears in `others`.
pub fn find_occluders(origin: Vec2, target: &OrientedBox, others: &[OrientedBox]) -> Vec<VehicleId> {
    occluder_indices(origin, target, others)
        .into_iter()
        .map(|i| others[i].id.clone())
        .collect()
}

/// Index form of [`find_occluders`], in the same order.
pub fn occluder_indices(origin: Vec2, target: &OrientedBox, others: &[OrientedBox]) -> Vec<usize> {
    let sight = Segment2::new(origin, target.center());
    let mut hits: Vec<(f64, usize)> = others
        .iter()
        .enumerate()
        .filter(|(_, o)| o.id != target.id && segment_intersects_box_bev(&sight, o))
        .map(|(i, o)| (o.center().sub(origin).norm(), i))
        .collect();
    hits.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| others[a.1].id.cmp(&others[b.1].id))
    });
    hits.into_iter().map(|(_, i)| i).collect()
}

/// Separating-axis overlap test of two footprints (touching counts).
pub fn boxes_overlap_bev(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = box_corners_bev(a);
    let cb = box_corners_bev(b);
    let axes = [
        ca[0].sub(ca[1]),
        ca[1].sub(ca[2]),
        cb[0].sub(cb[1]),
        cb[1].sub(cb[2]),
    ];
    axes.iter().all(|&axis| {
        let (amin, amax) = project(&ca, axis);
        let (bmin, bmax) = project(&cb, axis);
        amax >= bmin && bmax >= amin
    })
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let p = c.dot(axis);
        (lo.min(p), hi.max(p))
    })
}

/// Clips a polygon against a convex counter-clockwise polygon
/// (Sutherland-Hodgman). Both inputs must be counter-clockwise.
pub fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut output: Vec<Vec2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = b.sub(a);
        let inside = |p: Vec2| edge.cross(p.sub(a)) >= 0.0;
        let input = core::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.push(line_intersection(prev, cur, a, b)),
                (false, true) => {
                    output.push(line_intersection(prev, cur, a, b));
                    output.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    output
}

// Intersection of segment pq with the infinite line through ab.
fn line_intersection(p: Vec2, q: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let edge = b.sub(a);
    let dp = edge.cross(p.sub(a));
    let dq = edge.cross(q.sub(a));
    let denom = dp - dq;
    if denom == 0.0 {
        return p;
    }
    let t = dp / denom;
    p.add(q.sub(p).scale(t))
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let twice: f64 = (0..poly.len())
        .map(|i| poly[i].cross(poly[(i + 1) % poly.len()]))
        .sum();
    0.5 * twice
}

/// Footprint overlap area of two boxes.
pub fn bev_intersection_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let pa = box_corners_bev(a);
    let pb = box_corners_bev(b);
    polygon_area(&clip_convex(&pa, &pb)).max(0.0)
}

/// Heading of a direction vector, in `(-π, π]`.
pub fn heading_of(v: Vec2) -> f64 {
    wrap_angle(math::atan2(v.y, v.x))
}

pub(crate) fn cmp_distance_then_id(a: (f64, &VehicleId), b: (f64, &VehicleId)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}
