//! Articulated cabinets: parts, joints and handles.
//!
//! World frame: `+x` points from the camera toward the cabinet, `+y` to the
//! cabinet's right as seen from the camera, `+z` up. A cabinet body occupies
//! `x ∈ [front_x, front_x + depth]`, `y ∈ [-w/2, w/2]`, `z ∈ [0, h]`; parts
//! are flush with the front plane `x = front_x` and open toward `-x`.

mod generate;
mod io;

pub use generate::{generate_cabinet, GenerateError, GenerationConstraints, KindMix, Layout};
pub use io::{load_scene, parse_scene, save_scene, scene_to_string, SceneError, SCENE_FORMAT};

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::Cuboid;

/// Thickness of door and drawer front panels (m), behind the front plane.
pub const PANEL_THICKNESS: f64 = 0.02;
/// Maximum number of parts per cabinet.
pub const MAX_PARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartKind {
    Door,
    Drawer,
}

impl PartKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PartKind::Door => "door",
            PartKind::Drawer => "drawer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Posture {
    Horizontal,
    Vertical,
}

impl Posture {
    /// Rotation taking the handle frame (x: protrusion, y: length,
    /// z: thickness) to the world frame for a closed part.
    pub fn rotation(self) -> UnitQuaternion<f64> {
        match self {
            Posture::Horizontal => UnitQuaternion::identity(),
            Posture::Vertical => UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handle {
    pub center: Point3<f64>,
    pub posture: Posture,
    /// Extent along the posture axis.
    pub length: f64,
    /// Extent along the other in-plane axis.
    pub thickness: f64,
    /// Protrusion along `-x` from the part's front face.
    pub depth: f64,
    pub color: [u8; 3],
}

impl Handle {
    /// Handle cuboid for the closed part.
    pub fn cuboid(&self) -> Cuboid {
        Cuboid::new(
            self.center,
            self.posture.rotation(),
            Vector3::new(self.depth, self.length, self.thickness),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    /// A point on the hinge line (revolute) or the closed anchor (prismatic).
    pub origin: Point3<f64>,
    /// `[0, max]`: radians for revolute, meters for prismatic.
    pub limit: [f64; 2],
    pub value: f64,
}

impl Joint {
    pub fn max(&self) -> f64 {
        self.limit[1]
    }

    /// Rigid displacement of the moving body at the current value.
    pub fn transform(&self) -> Isometry3<f64> {
        self.transform_at(self.value)
    }

    pub fn transform_at(&self, value: f64) -> Isometry3<f64> {
        match self.kind {
            JointKind::Prismatic => Translation3::from(self.axis * value).into(),
            JointKind::Revolute => {
                let rot = UnitQuaternion::from_axis_angle(&Unit::new_normalize(self.axis), value);
                let o = self.origin.coords;
                Translation3::from(o) * rot * Translation3::from(-o)
            }
        }
    }
}

/// Axis-aligned rectangle on the cabinet front plane: lower-left corner
/// `(y, z)` plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceRect {
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub h: f64,
}

impl FaceRect {
    pub fn center(&self) -> (f64, f64) {
        (self.y + self.w / 2.0, self.z + self.h / 2.0)
    }

    pub fn overlaps(&self, o: &FaceRect) -> bool {
        self.y < o.y + o.w && o.y < self.y + self.w && self.z < o.z + o.h && o.z < self.z + self.h
    }

    pub fn contains_rect(&self, o: &FaceRect, tol: f64) -> bool {
        o.y >= self.y - tol
            && o.z >= self.z - tol
            && o.y + o.w <= self.y + self.w + tol
            && o.z + o.h <= self.z + self.h + tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub id: usize,
    pub kind: PartKind,
    pub joint: Joint,
    pub handle: Handle,
    pub face_rect: FaceRect,
    /// Reference position used for spatial language (closed handle center).
    pub anchor: Point3<f64>,
}

impl Part {
    /// Handle cuboid at the current joint value.
    pub fn handle_cuboid(&self) -> Cuboid {
        self.handle.cuboid().transformed(&self.joint.transform())
    }

    pub fn handle_cuboid_at(&self, value: f64) -> Cuboid {
        self.handle.cuboid().transformed(&self.joint.transform_at(value))
    }

    /// Front panel (door leaf or drawer box) at the current joint value.
    pub fn body_cuboid(&self, front_x: f64) -> Cuboid {
        let r = &self.face_rect;
        let depth = match self.kind {
            PartKind::Door => PANEL_THICKNESS,
            PartKind::Drawer => self.joint.max().max(PANEL_THICKNESS),
        };
        Cuboid::aabb(
            Point3::new(front_x, r.y, r.z),
            Point3::new(front_x + depth, r.y + r.w, r.z + r.h),
        )
        .transformed(&self.joint.transform())
    }

    /// Opening ratio: `θ / 180°` for doors, `δ / drawer length` for drawers.
    pub fn open_ratio(&self) -> f64 {
        open_ratio(self.kind, self.joint.value, self.joint.max())
    }

    pub fn drawer_length(&self) -> Option<f64> {
        (self.kind == PartKind::Drawer).then(|| self.joint.max())
    }

    /// Distance from the hinge axis to the closed handle center (doors).
    pub fn hinge_radius(&self) -> Option<f64> {
        (self.kind == PartKind::Door).then(|| {
            let a = self.joint.axis.normalize();
            let v = self.handle.center - self.joint.origin;
            (v - a * v.dot(&a)).norm()
        })
    }
}

/// Open ratio of a part of `kind` at joint `value` with limit `max`.
pub fn open_ratio(kind: PartKind, value: f64, max: f64) -> f64 {
    match kind {
        PartKind::Door => value.to_degrees() / 180.0,
        PartKind::Drawer => {
            if max > 0.0 {
                value / max
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cabinet {
    pub id: u64,
    /// `(width, height, depth)` in meters.
    pub body_dims: [f64; 3],
    pub front_x: f64,
    pub parts: Vec<Part>,
    pub split: Split,
}

impl Cabinet {
    pub fn width(&self) -> f64 {
        self.body_dims[0]
    }

    pub fn height(&self) -> f64 {
        self.body_dims[1]
    }

    pub fn depth(&self) -> f64 {
        self.body_dims[2]
    }

    pub fn front_rect(&self) -> FaceRect {
        FaceRect { y: -self.width() / 2.0, z: 0.0, w: self.width(), h: self.height() }
    }

    pub fn body_cuboid(&self) -> Cuboid {
        Cuboid::aabb(
            Point3::new(self.front_x, -self.width() / 2.0, 0.0),
            Point3::new(self.front_x + self.depth(), self.width() / 2.0, self.height()),
        )
    }

    pub fn part(&self, id: usize) -> Option<&Part> {
        self.parts.iter().find(|p| p.id == id)
    }

    pub fn part_mut(&mut self, id: usize) -> Option<&mut Part> {
        self.parts.iter_mut().find(|p| p.id == id)
    }

    pub fn count(&self, kind: PartKind) -> usize {
        self.parts.iter().filter(|p| p.kind == kind).count()
    }

    /// Front-face center of the body.
    pub fn front_center(&self) -> Point3<f64> {
        Point3::new(self.front_x, 0.0, self.height() / 2.0)
    }

    /// Copy with every joint at zero.
    pub fn closed(&self) -> Cabinet {
        let mut c = self.clone();
        for p in &mut c.parts {
            p.joint.value = 0.0;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    PartCount(usize),
    BodyDims,
    DuplicatePartId(usize),
    KindJointMismatch { part: usize },
    BadJointAxis { part: usize },
    BadJointLimit { part: usize },
    JointOutOfRange { part: usize, value: f64 },
    HandleDims { part: usize },
    HandleBehindFace { part: usize },
    HandleOutsideFace { part: usize },
    FaceOutsideBody { part: usize },
    FaceOverlap { a: usize, b: usize },
}

const TOL: f64 = 1e-9;

/// Checks every structural invariant; an empty list means the cabinet is
/// well formed.
pub fn validate_cabinet(c: &Cabinet) -> Vec<Violation> {
    let mut out = Vec::new();
    if c.parts.is_empty() || c.parts.len() > MAX_PARTS {
        out.push(Violation::PartCount(c.parts.len()));
    }
    if c.body_dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        out.push(Violation::BodyDims);
    }
    let front = c.front_rect();
    for (i, p) in c.parts.iter().enumerate() {
        if c.parts[..i].iter().any(|q| q.id == p.id) {
            out.push(Violation::DuplicatePartId(p.id));
        }
        let j = &p.joint;
        let want = match p.kind {
            PartKind::Door => JointKind::Revolute,
            PartKind::Drawer => JointKind::Prismatic,
        };
        if j.kind != want {
            out.push(Violation::KindJointMismatch { part: p.id });
        }
        let axis_ok = match j.kind {
            JointKind::Revolute => (j.axis.z.abs() - 1.0).abs() < 1e-9 && j.axis.xy().norm() < 1e-9,
            JointKind::Prismatic => (j.axis + Vector3::x()).norm() < 1e-9,
        };
        if !axis_ok {
            out.push(Violation::BadJointAxis { part: p.id });
        }
        if j.limit[0] != 0.0 || !(j.limit[1] > 0.0) {
            out.push(Violation::BadJointLimit { part: p.id });
        }
        if !(j.value >= j.limit[0] && j.value <= j.limit[1]) {
            out.push(Violation::JointOutOfRange { part: p.id, value: j.value });
        }
        let h = &p.handle;
        if !(h.length > h.thickness && h.thickness > 0.0 && h.depth > 0.0) {
            out.push(Violation::HandleDims { part: p.id });
        }
        // closed-state handle must sit on or in front of the front plane
        if h.center.x + h.depth / 2.0 > c.front_x + TOL {
            out.push(Violation::HandleBehindFace { part: p.id });
        }
        let (hw, hh) = match h.posture {
            Posture::Horizontal => (h.length, h.thickness),
            Posture::Vertical => (h.thickness, h.length),
        };
        let hrect = FaceRect { y: h.center.y - hw / 2.0, z: h.center.z - hh / 2.0, w: hw, h: hh };
        if !p.face_rect.contains_rect(&hrect, TOL) {
            out.push(Violation::HandleOutsideFace { part: p.id });
        }
        if !front.contains_rect(&p.face_rect, TOL) {
            out.push(Violation::FaceOutsideBody { part: p.id });
        }
        for q in &c.parts[..i] {
            if p.face_rect.overlaps(&q.face_rect) {
                out.push(Violation::FaceOverlap { a: q.id, b: p.id });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    pub(crate) fn drawer_at(id: usize, y: f64, z: f64) -> Part {
        let face = FaceRect { y: y - 0.15, z: z - 0.08, w: 0.3, h: 0.16 };
        let center = Point3::new(-0.015, y, z);
        Part {
            id,
            kind: PartKind::Drawer,
            joint: Joint {
                kind: JointKind::Prismatic,
                axis: -Vector3::x(),
                origin: center,
                limit: [0.0, 0.4],
                value: 0.0,
            },
            handle: Handle {
                center,
                posture: Posture::Horizontal,
                length: 0.1,
                thickness: 0.02,
                depth: 0.03,
                color: [200, 200, 200],
            },
            face_rect: face,
            anchor: center,
        }
    }

    fn two_drawers() -> Cabinet {
        Cabinet {
            id: 0,
            body_dims: [0.4, 0.5, 0.45],
            front_x: 0.0,
            parts: vec![drawer_at(0, 0.0, 0.12), drawer_at(1, 0.0, 0.32)],
            split: Split::Train,
        }
    }

    #[test]
    fn well_formed_has_no_violations() {
        assert_eq!(validate_cabinet(&two_drawers()), vec![]);
    }

    #[test]
    fn joint_over_limit_is_reported() {
        let mut c = two_drawers();
        c.parts[0].joint.value = 0.41;
        assert!(matches!(
            validate_cabinet(&c).as_slice(),
            [Violation::JointOutOfRange { part: 0, .. }]
        ));
    }

    #[test]
    fn overlapping_faces_are_reported() {
        let mut c = two_drawers();
        c.parts[1] = drawer_at(1, 0.05, 0.2);
        assert_eq!(validate_cabinet(&c), vec![Violation::FaceOverlap { a: 0, b: 1 }]);
    }

    #[test]
    fn drawer_transform_slides_toward_camera() {
        let mut p = drawer_at(0, 0.0, 0.1);
        p.joint.value = 0.1;
        let c = p.handle_cuboid().center();
        assert!((c.x - (-0.115)).abs() < 1e-12);
        assert!((p.open_ratio() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn door_swings_toward_camera() {
        // left hinge at y = -0.2, axis +z
        let j = Joint {
            kind: JointKind::Revolute,
            axis: Vector3::z(),
            origin: Point3::new(0.0, -0.2, 0.3),
            limit: [0.0, PI],
            value: 0.3,
        };
        let p = j.transform() * Point3::new(0.0, 0.2, 0.3);
        assert!(p.x < 0.0);
        assert!(((p - j.origin).norm() - 0.4).abs() < 1e-12);
        assert!((open_ratio(PartKind::Door, 40f64.to_radians(), PI) - 40.0 / 180.0).abs() < 1e-12);
    }
}
