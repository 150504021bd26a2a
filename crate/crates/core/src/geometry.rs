//! LiDAR-to-camera geometry: rigid transform, pinhole projection, plane
//! population with z-buffering, densification, and box-derived class masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::VOID;

/// Points at or below this camera-frame depth (meters) are behind the camera.
pub const DEPTH_EPSILON: f64 = 1e-6;
/// Default densification radius in pixels.
pub const DEFAULT_DILATION: usize = 2;

pub const BACKGROUND: u8 = 0;
pub const VEHICLE: u8 = 1;
pub const HUMAN: u8 = 2;

pub type Point3 = [f64; 3];

/// Camera extrinsics (relative to the LiDAR frame) and intrinsics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SensorRig {
    /// Roll, pitch, yaw in radians.
    pub euler: [f64; 3],
    /// Camera position in the LiDAR frame, meters.
    pub camera_pos: [f64; 3],
    /// Horizontal and vertical focal lengths, pixels.
    pub focal: [f64; 2],
    /// Image `(width, height)` in pixels.
    pub resolution: (usize, usize),
}

impl SensorRig {
    pub fn new(euler: [f64; 3], camera_pos: [f64; 3], focal: [f64; 2], resolution: (usize, usize)) -> Result<Self> {
        let rig = SensorRig {
            euler,
            camera_pos,
            focal,
            resolution,
        };
        rig.validate()?;
        Ok(rig)
    }

    /// A forward-looking camera for a LiDAR frame with x forward, y left and
    /// z up: camera z is LiDAR x, camera x is -y, camera y is -z.
    pub fn forward_facing(camera_pos: [f64; 3], focal: f64, resolution: (usize, usize)) -> Self {
        let quarter = core::f64::consts::FRAC_PI_2;
        SensorRig {
            euler: [-quarter, 0.0, -quarter],
            camera_pos,
            focal: [focal, focal],
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [fx, fy] = self.focal;
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::config("focal lengths must be positive and finite"));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::config("resolution must be positive"));
        }
        if !self.euler.iter().chain(&self.camera_pos).all(|v| v.is_finite()) {
            return Err(Error::config("euler angles and camera position must be finite"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.resolution.0
    }

    pub fn height(&self) -> usize {
        self.resolution.1
    }

    /// `r · p · y` with roll about x, pitch about y and yaw about z.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let [roll, pitch, yaw] = self.euler;
        let (sr, cr) = libm::sincos(roll);
        let (sp, cp) = libm::sincos(pitch);
        let (sy, cy) = libm::sincos(yaw);
        let r = [[1.0, 0.0, 0.0], [0.0, cr, sr], [0.0, -sr, cr]];
        let p = [[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]];
        let y = [[cy, sy, 0.0], [-sy, cy, 0.0], [0.0, 0.0, 1.0]];
        mat_mul(&mat_mul(&r, &p), &y)
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mat_vec(m: &[[f64; 3]; 3], v: Point3) -> Point3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("point coordinates must be finite"));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A projected point. `behind` marks depths at or below [`DEPTH_EPSILON`];
/// `u` and `v` are then meaningless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub behind: bool,
}

impl Projection {
    /// `(column, row)` of the pixel this projection falls into, if in view.
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let inside = !self.behind && self.u >= 0.0 && self.v >= 0.0 && self.u < width as f64 && self.v < height as f64;
        inside.then_some((self.u as usize, self.v as usize))
    }
}

/// Maps LiDAR-frame points into the camera frame.
pub fn transform_to_camera(points: &PointCloud, rig: &SensorRig) -> PointCloud {
    let rot = rig.rotation();
    let c = rig.camera_pos;
    PointCloud {
        points: points
            .points
            .iter()
            .map(|p| mat_vec(&rot, [p[0] - c[0], p[1] - c[1], p[2] - c[2]]))
            .collect(),
    }
}

/// Pinhole projection of camera-frame points with the principal point at
/// the image center.
pub fn project_to_image(points: &PointCloud, rig: &SensorRig) -> Vec<Projection> {
    let [fx, fy] = rig.focal;
    let (cx, cy) = (rig.width() as f64 / 2.0, rig.height() as f64 / 2.0);
    points
        .points
        .iter()
        .map(|&[x, y, z]| {
            if z <= DEPTH_EPSILON {
                Projection {
                    u: f64::NAN,
                    v: f64::NAN,
                    depth: z,
                    behind: true,
                }
            } else {
                Projection {
                    u: fx * (x / z) + cx,
                    v: fy * (y / z) + cy,
                    depth: z,
                    behind: false,
                }
            }
        })
        .collect()
}

/// Three camera-plane grids of projected coordinates plus occupancy, all
/// row-major `[row][column]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneStack {
    pub width: usize,
    pub height: usize,
    pub xy: Vec<f64>,
    pub yz: Vec<f64>,
    pub xz: Vec<f64>,
    pub occupied: Vec<bool>,
}

impl PlaneStack {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        PlaneStack {
            width,
            height,
            xy: vec![0.0; n],
            yz: vec![0.0; n],
            xz: vec![0.0; n],
            occupied: vec![false; n],
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// The three grids in `xy, yz, xz` order.
    pub fn planes(&self) -> [&[f64]; 3] {
        [&self.xy, &self.yz, &self.xz]
    }

    fn write(&mut self, idx: usize, p: Point3) {
        self.xy[idx] = p[0];
        self.yz[idx] = p[1];
        self.xz[idx] = p[2];
        self.occupied[idx] = true;
    }

    /// Mirrors every grid left-to-right.
    pub fn flip_horizontal(&mut self) {
        let w = self.width;
        for grid in [&mut self.xy, &mut self.yz, &mut self.xz] {
            grid.chunks_mut(w).for_each(<[f64]>::reverse);
        }
        self.occupied.chunks_mut(w).for_each(<[bool]>::reverse);
    }
}

/// Transforms, projects and filters a LiDAR cloud, then writes each kept
/// point's camera-frame `(x, y, z)` into the `xy`, `yz` and `xz` grids.
///
/// Several points on one pixel: the smallest depth wins; equal depths keep
/// the earlier point.
pub fn filter_and_populate(cloud: &PointCloud, rig: &SensorRig) -> PlaneStack {
    let camera = transform_to_camera(cloud, rig);
    let projected = project_to_image(&camera, rig);
    let (w, h) = rig.resolution;
    let mut planes = PlaneStack::empty(w, h);
    for (p, proj) in camera.points.iter().zip(&projected) {
        let Some((u, v)) = proj.pixel(w, h) else {
            continue;
        };
        let idx = v * w + u;
        if !planes.occupied[idx] || proj.depth < planes.xz[idx] {
            planes.write(idx, *p);
        }
    }
    planes
}

/// Fills each empty pixel within Chebyshev distance `radius` of an
/// occupied pixel with the values of its nearest (Euclidean) occupied
/// pixel; ties go to the smaller depth, then to row-major order.
pub fn densify(planes: &PlaneStack, radius: usize) -> PlaneStack {
    let mut out = planes.clone();
    if radius == 0 {
        return out;
    }
    let (w, h) = (planes.width as isize, planes.height as isize);
    let r = radius as isize;
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            if planes.occupied[idx] {
                continue;
            }
            let mut best: Option<(isize, f64, usize)> = None;
            for sy in (y - r).max(0)..=(y + r).min(h - 1) {
                for sx in (x - r).max(0)..=(x + r).min(w - 1) {
                    let src = (sy * w + sx) as usize;
                    if !planes.occupied[src] {
                        continue;
                    }
                    let d2 = (sy - y) * (sy - y) + (sx - x) * (sx - x);
                    let cand = (d2, planes.xz[src], src);
                    let better = match best {
                        None => true,
                        Some((bd, bz, _)) => d2 < bd || (d2 == bd && cand.1 < bz),
                    };
                    if better {
                        best = Some(cand);
                    }
                }
            }
            if let Some((_, _, src)) = best {
                out.write(idx, [planes.xy[src], planes.yz[src], planes.xz[src]]);
            }
        }
    }
    out
}

/// Labelled object classes. Pedestrians and cyclists are both humans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BoxClass {
    Vehicle,
    #[cfg_attr(feature = "serde", serde(alias = "pedestrian", alias = "cyclist"))]
    Human,
}

impl BoxClass {
    pub fn code(self) -> u8 {
        match self {
            BoxClass::Vehicle => VEHICLE,
            BoxClass::Human => HUMAN,
        }
    }
}

/// Upright 3-D box in the LiDAR frame, rotated by `heading` about z.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Box3D {
    pub center: Point3,
    /// Length (along heading), width, height.
    pub extents: [f64; 3],
    pub heading: f64,
    pub class: BoxClass,
}

impl Box3D {
    pub fn new(center: Point3, extents: [f64; 3], heading: f64, class: BoxClass) -> Result<Self> {
        if !extents.iter().all(|&e| e > 0.0 && e.is_finite()) {
            return Err(Error::config("box extents must be positive"));
        }
        Ok(Box3D {
            center,
            extents,
            heading,
            class,
        })
    }

    /// Point-in-oriented-box test (boundary inclusive).
    pub fn contains(&self, p: Point3) -> bool {
        let (s, c) = libm::sincos(self.heading);
        let (dx, dy, dz) = (p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]);
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let [l, w, h] = self.extents;
        libm::fabs(lx) <= l / 2.0 && libm::fabs(ly) <= w / 2.0 && libm::fabs(dz) <= h / 2.0
    }

    pub fn corners(&self) -> [Point3; 8] {
        let (s, c) = libm::sincos(self.heading);
        let [l, w, h] = self.extents;
        let mut out = [[0.0; 3]; 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let lx = if i & 1 == 0 { -l / 2.0 } else { l / 2.0 };
            let ly = if i & 2 == 0 { -w / 2.0 } else { w / 2.0 };
            let lz = if i & 4 == 0 { -h / 2.0 } else { h / 2.0 };
            *corner = [
                self.center[0] + c * lx - s * ly,
                self.center[1] + s * lx + c * ly,
                self.center[2] + lz,
            ];
        }
        out
    }

    /// Image-plane convex hull of the projected corners, or `None` when any
    /// corner is behind the camera.
    pub fn footprint(&self, rig: &SensorRig) -> Option<Vec<[f64; 2]>> {
        let corners = PointCloud {
            points: self.corners().to_vec(),
        };
        let projected = project_to_image(&transform_to_camera(&corners, rig), rig);
        if projected.iter().any(|p| p.behind) {
            return None;
        }
        Some(convex_hull(projected.iter().map(|p| [p.u, p.v]).collect()))
    }
}

/// Counter-clockwise hull (monotone chain), collinear points dropped.
pub fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: &mut dyn Iterator<Item = &[f64; 2]> = if pass == 0 {
            &mut pts.iter()
        } else {
            &mut pts.iter().rev()
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Whether `q` lies inside or on a counter-clockwise convex polygon.
pub fn polygon_contains(hull: &[[f64; 2]], q: [f64; 2]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]) >= 0.0
    })
}

/// Per-pixel class codes: [`BACKGROUND`], [`VEHICLE`], [`HUMAN`] or
/// [`VOID`](crate::graph::VOID).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u8>,
}

impl ClassMask {
    pub fn filled(width: usize, height: usize, code: u8) -> Self {
        ClassMask {
            width,
            height,
            codes: vec![code; width * height],
        }
    }

    pub fn new(width: usize, height: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != width * height {
            return Err(Error::shape("class_mask", &[height, width], &[codes.len()]));
        }
        if let Some(bad) = codes.iter().find(|&&c| !is_mask_code(c)) {
            return Err(Error::config(alloc::format!("invalid mask code {bad}")));
        }
        Ok(ClassMask { width, height, codes })
    }

    pub fn count(&self, code: u8) -> usize {
        self.codes.iter().filter(|&&c| c == code).count()
    }

    pub fn flip_horizontal(&mut self) {
        self.codes.chunks_mut(self.width).for_each(<[u8]>::reverse);
    }
}

pub fn is_mask_code(code: u8) -> bool {
    matches!(code, BACKGROUND | VEHICLE | HUMAN | VOID)
}

/// Rasterizes box labels: pixels hit by a LiDAR point inside a box take
/// the box class (human over vehicle on collisions); the rest of each box's
/// projected footprint is void; everything else is background.
pub fn boxes_to_mask(cloud: &PointCloud, boxes: &[Box3D], rig: &SensorRig) -> ClassMask {
    let (w, h) = rig.resolution;
    let mut mask = ClassMask::filled(w, h, BACKGROUND);
    if boxes.is_empty() {
        return mask;
    }
    for b in boxes {
        let Some(hull) = b.footprint(rig) else {
            continue;
        };
        let (lo_u, hi_u, lo_v, hi_v) = hull.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |acc, p| (acc.0.min(p[0]), acc.1.max(p[0]), acc.2.min(p[1]), acc.3.max(p[1])),
        );
        let clamp = |v: f64, n: usize| -> usize { (v.max(0.0) as usize).min(n) };
        for row in clamp(libm::floor(lo_v), h)..clamp(libm::ceil(hi_v) + 1.0, h) {
            for col in clamp(libm::floor(lo_u), w)..clamp(libm::ceil(hi_u) + 1.0, w) {
                if polygon_contains(&hull, [col as f64 + 0.5, row as f64 + 0.5]) {
                    mask.codes[row * w + col] = VOID;
                }
            }
        }
    }
    let camera = transform_to_camera(cloud, rig);
    let projected = project_to_image(&camera, rig);
    for (p, proj) in cloud.points.iter().zip(&projected) {
        let Some((u, v)) = proj.pixel(w, h) else {
            continue;
        };
        let Some(class) = boxes.iter().filter(|b| b.contains(*p)).map(|b| b.class).max() else {
            continue;
        };
        let cell = &mut mask.codes[v * w + u];
        if *cell != HUMAN {
            *cell = class.code();
        }
    }
    mask
}
