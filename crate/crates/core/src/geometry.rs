//! Oriented 3D boxes, their IoU, and IoU-based ID/FP labeling of detections.
//!
//! Box footprints are clipped against each other with Sutherland-Hodgman
//! (both footprints are convex) and measured with the shoelace formula.
//! Vertical extent is `[z - h/2, z + h/2]`, i.e. `center` is the box centroid.

use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::features::{csv_err, Label};

/// IoU thresholds for vehicles, pedestrians and cyclists.
pub const DEFAULT_IOU_THRESHOLDS: [f64; 3] = [0.7, 0.5, 0.5];

/// A 7-DOF box: centroid (m), length/width/height (m) and yaw (rad) about +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Result<Self> {
        if center.iter().chain(size.iter()).any(|v| !v.is_finite()) || !yaw.is_finite() {
            return Err(Error::invalid("box fields must be finite"));
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid(format!("degenerate box size {size:?}")));
        }
        Ok(Self {
            center,
            size,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    /// `[length, width, height]`.
    pub fn size(&self) -> [f64; 3] {
        self.size
    }

    /// Yaw in `(-π, π]`.
    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn footprint_area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    pub fn z_range(&self) -> (f64, f64) {
        let half = 0.5 * self.size[2];
        (self.center[2] - half, self.center[2] + half)
    }

    /// Footprint corners, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.size[0], 0.5 * self.size[1]);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y])
    }

    /// Whether a point lies inside the box (boundary inclusive).
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let (z0, z1) = self.z_range();
        lx.abs() <= 0.5 * self.size[0] && ly.abs() <= 0.5 * self.size[1] && p[2] >= z0 && p[2] <= z1
    }

    /// Same box translated by `offset` and rotated by `angle` about the z axis through the origin.
    pub fn transformed(&self, angle: f64, offset: [f64; 3]) -> Self {
        let (s, c) = angle.sin_cos();
        let [x, y, z] = self.center;
        Self {
            center: [c * x - s * y + offset[0], s * x + c * y + offset[1], z + offset[2]],
            size: self.size,
            yaw: normalize_yaw(self.yaw + angle),
        }
    }

    /// Radius of the footprint's circumscribed circle.
    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.size[0].hypot(self.size[1])
    }
}

/// Maps an angle into `(-π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub class_id: usize,
    confidence: f64,
}

impl Detection {
    pub fn new(bbox: Box3D, class_id: usize, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            class_id,
            confidence,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: Box3D,
    pub class_id: usize,
}

fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Clips `subject` to the left half-plane of the directed edge `a -> b`.
fn clip_halfplane(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let n = subject.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let s = subject[i];
        let e = subject[(i + 1) % n];
        let sd = cross(a, b, s);
        let ed = cross(a, b, e);
        let (s_in, e_in) = (sd >= 0.0, ed >= 0.0);
        if s_in != e_in {
            let t = sd / (sd - ed);
            out.push([s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]);
        }
        if e_in {
            out.push(e);
        }
    }
    out
}

/// Intersection of two convex counter-clockwise polygons.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut poly = subject.to_vec();
    for i in 0..clip.len() {
        if poly.len() < 3 {
            return Vec::new();
        }
        poly = clip_halfplane(&poly, clip[i], clip[(i + 1) % clip.len()]);
    }
    if poly.len() < 3 {
        Vec::new()
    } else {
        poly
    }
}

/// Unsigned shoelace area.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Area of the intersection of the two footprints.
pub fn footprint_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let dx = a.center[0] - b.center[0];
    let dy = a.center[1] - b.center[1];
    if dx.hypot(dy) > a.half_diagonal() + b.half_diagonal() {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&a.footprint(), &b.footprint()));
    inter.min(a.footprint_area()).min(b.footprint_area())
}

/// Bird's-eye-view IoU of the yaw-rotated footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = footprint_intersection(a, b);
    let union = a.footprint_area() + b.footprint_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: footprint intersection times vertical overlap over union volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = footprint_intersection(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Labels each prediction ID iff its best IoU-3D against same-class ground
/// truths reaches that class's threshold, otherwise FP.
pub fn label_detections(preds: &[Detection], gts: &[GroundTruth], thresholds: &[f64]) -> Result<Vec<Label>> {
    preds
        .iter()
        .map(|p| {
            let threshold = *thresholds
                .get(p.class_id)
                .ok_or_else(|| Error::invalid(format!("no IoU threshold for class {}", p.class_id)))?;
            let best = gts
                .iter()
                .filter(|g| g.class_id == p.class_id)
                .map(|g| iou_3d(&p.bbox, &g.bbox))
                .fold(0.0_f64, f64::max);
            Ok(if !gts.is_empty() && best >= threshold {
                Label::Id
            } else {
                Label::Fp
            })
        })
        .collect()
}

/// Predictions and ground truths of one scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub preds: Vec<Detection>,
    pub gts: Vec<GroundTruth>,
}

pub const SCENE_HEADER: [&str; 10] = ["kind", "class_id", "x", "y", "z", "l", "w", "h", "yaw", "confidence"];

/// Writes a scene as CSV (`kind,class_id,x,y,z,l,w,h,yaw,confidence`).
/// Ground-truth rows carry confidence 1.
pub fn write_scene_csv<W: Write>(w: W, scene: &Scene) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SCENE_HEADER).map_err(csv_err)?;
    let row = |kind: &str, b: &Box3D, class_id: usize, conf: f64| {
        let [x, y, z] = b.center();
        let [l, wd, h] = b.size();
        vec![
            kind.to_string(),
            class_id.to_string(),
            x.to_string(),
            y.to_string(),
            z.to_string(),
            l.to_string(),
            wd.to_string(),
            h.to_string(),
            b.yaw().to_string(),
            conf.to_string(),
        ]
    };
    for g in &scene.gts {
        out.write_record(row("gt", &g.bbox, g.class_id, 1.0)).map_err(csv_err)?;
    }
    for p in &scene.preds {
        out.write_record(row("pred", &p.bbox, p.class_id, p.confidence()))
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scene_csv<R: Read>(r: R) -> Result<Scene> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().map(str::trim).ne(SCENE_HEADER.iter().copied()) {
        return Err(Error::format(
            "scene csv",
            format!("header must be {}", SCENE_HEADER.join(",")),
        ));
    }
    let mut scene = Scene::default();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let num = |j: usize| -> Result<f64> {
            row[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::format("scene csv", format!("row {i} column {}: {e}", SCENE_HEADER[j])))
        };
        let class_id = row[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::format("scene csv", format!("row {i} class_id: {e}")))?;
        let bbox = Box3D::new([num(2)?, num(3)?, num(4)?], [num(5)?, num(6)?, num(7)?], num(8)?)?;
        match row[0].trim() {
            "gt" => scene.gts.push(GroundTruth { bbox, class_id }),
            "pred" => scene.preds.push(Detection::new(bbox, class_id, num(9)?)?),
            other => return Err(Error::format("scene csv", format!("row {i}: unknown kind {other:?}"))),
        }
    }
    Ok(scene)
}
