//! Kinematic hand models.
//!
//! Hand frame: `+x` is the approach direction (palm normal), finger rows run
//! along `y` and fingers close across `z`. Geometry comes from the bundled
//! `data/hands.json` (`opend-hand/1`).

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HAND_FORMAT: &str = "opend-hand/1";
const BUNDLED: &str = include_str!("../data/hands.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandKind {
    Franka,
    Allegro,
    Shadow,
    Skeleton,
}

impl HandKind {
    pub const ALL: [HandKind; 4] = [HandKind::Franka, HandKind::Allegro, HandKind::Shadow, HandKind::Skeleton];

    pub fn as_str(self) -> &'static str {
        match self {
            HandKind::Franka => "franka",
            HandKind::Allegro => "allegro",
            HandKind::Shadow => "shadow",
            HandKind::Skeleton => "skeleton",
        }
    }
}

impl fmt::Display for HandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HandKind {
    type Err = HandError;
    fn from_str(s: &str) -> Result<Self, HandError> {
        HandKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| HandError::Spec(format!("unknown hand `{s}`")))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HandError {
    #[error("joint {index} value {value} outside [{lo}, {hi}]")]
    JointOutOfRange { index: usize, value: f64, lo: f64, hi: f64 },
    #[error("joint vector length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("hand spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandJointKind {
    Prismatic,
    Revolute,
    D6,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandJoint {
    pub name: String,
    pub kind: HandJointKind,
    /// Unit axis for 1-DOF joints.
    pub axis: Vector3<f64>,
    /// One `[lo, hi]` per DOF.
    pub limits: Vec<[f64; 2]>,
    /// Value the grasp search drives a 1-DOF joint toward, if it curls.
    pub curl_to: Option<f64>,
    /// Translation along local `x` after the joint.
    pub link: f64,
    /// Index of the joint's first DOF in the state vector.
    pub offset: usize,
}

impl HandJoint {
    pub fn dof(&self) -> usize {
        self.limits.len()
    }

    fn motion(&self, q: &[f64]) -> Isometry3<f64> {
        match self.kind {
            HandJointKind::Prismatic => Isometry3::from_parts(Translation3::from(self.axis * q[0]), UnitQuaternion::identity()),
            HandJointKind::Revolute => Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&Unit::new_normalize(self.axis), q[0])),
            // y spin then z spin, x locked
            HandJointKind::D6 => {
                let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), q[0]);
                let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q[1]);
                Isometry3::from_parts(Translation3::identity(), ry * rz)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finger {
    pub name: String,
    pub base: Isometry3<f64>,
    /// Indices into [`HandModel::joints`], root first.
    pub joints: Vec<usize>,
    pub tip: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub kind: HandKind,
    pub joints: Vec<HandJoint>,
    pub fingers: Vec<Finger>,
    pub palm_frame: Isometry3<f64>,
    pub dof: usize,
    /// Open rest configuration.
    pub rest: Vec<f64>,
    /// Fingertips at `d = 0` and identity pose, as listed in the spec file.
    pub zero_fingertips: Vec<Point3<f64>>,
    /// Fingertip distance at `d = 0` for parallel grippers.
    pub base_gap: f64,
}

/// Pose and joint vector. `r` is kept raw so callers can hand in
/// unnormalized rotations; [`clamp_state`] fixes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub p: Point3<f64>,
    pub r: Quaternion<f64>,
    pub d: Vec<f64>,
}

impl HandState {
    pub fn new(p: Point3<f64>, r: UnitQuaternion<f64>, d: Vec<f64>) -> Self {
        HandState { p, r: r.into_inner(), d }
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(self.r)
    }

    pub fn pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.p.coords), self.rotation())
    }
}

/// Link frames (palm first, then each joint's outgoing frame finger by
/// finger) and world fingertips.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub frames: Vec<Isometry3<f64>>,
    pub fingertips: Vec<Point3<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    format: String,
    hands: Vec<SpecHand>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecHand {
    kind: HandKind,
    #[serde(default)]
    base_gap: f64,
    fingers: Vec<SpecFinger>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFinger {
    name: String,
    base: SpecPose,
    joints: Vec<SpecJoint>,
    tip: [f64; 3],
    zero_fingertip: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecPose {
    xyz: [f64; 3],
    rpy: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecJoint {
    name: String,
    #[serde(rename = "type")]
    kind: HandJointKind,
    #[serde(default)]
    axis: Option<[f64; 3]>,
    limits: Vec<[f64; 2]>,
    rest: Vec<f64>,
    #[serde(default)]
    curl_to: Option<f64>,
    link: f64,
}

/// Parses an `opend-hand/1` document.
pub fn parse_hand_specs(text: &str) -> Result<Vec<HandModel>, HandError> {
    let file: SpecFile = serde_json::from_str(text).map_err(|e| HandError::Spec(e.to_string()))?;
    if file.format != HAND_FORMAT {
        return Err(HandError::Spec(format!("format `{}`, expected `{HAND_FORMAT}`", file.format)));
    }
    file.hands.into_iter().map(build_model).collect()
}

fn build_model(h: SpecHand) -> Result<HandModel, HandError> {
    let mut joints = Vec::new();
    let mut fingers = Vec::new();
    let mut rest = Vec::new();
    let mut zero_fingertips = Vec::new();
    for f in h.fingers {
        let mut idx = Vec::new();
        for j in f.joints {
            let want = if j.kind == HandJointKind::D6 { 2 } else { 1 };
            if j.limits.len() != want || j.rest.len() != want {
                return Err(HandError::Spec(format!("joint `{}` needs {want} limits and rest values", j.name)));
            }
            if j.limits.iter().any(|[lo, hi]| !(lo <= hi)) {
                return Err(HandError::Spec(format!("joint `{}` has inverted limits", j.name)));
            }
            let axis = match (j.kind, j.axis) {
                (HandJointKind::D6, _) => Vector3::zeros(),
                (_, Some(a)) => Vector3::from(a).try_normalize(1e-12).ok_or_else(|| HandError::Spec(format!("joint `{}` has zero axis", j.name)))?,
                (_, None) => return Err(HandError::Spec(format!("joint `{}` needs an axis", j.name))),
            };
            idx.push(joints.len());
            joints.push(HandJoint { name: j.name, kind: j.kind, axis, limits: j.limits, curl_to: j.curl_to, link: j.link, offset: rest.len() });
            rest.extend(j.rest);
        }
        let [x, y, z] = f.base.xyz;
        let [rr, rp, ry] = f.base.rpy;
        fingers.push(Finger {
            name: f.name,
            base: Isometry3::from_parts(Translation3::new(x, y, z), UnitQuaternion::from_euler_angles(rr, rp, ry)),
            joints: idx,
            tip: Vector3::from(f.tip),
        });
        zero_fingertips.push(Point3::from(f.zero_fingertip));
    }
    let dof = rest.len();
    Ok(HandModel { kind: h.kind, joints, fingers, palm_frame: Isometry3::identity(), dof, rest, zero_fingertips, base_gap: h.base_gap })
}

fn bundled() -> &'static [HandModel] {
    static MODELS: OnceLock<Vec<HandModel>> = OnceLock::new();
    MODELS.get_or_init(|| parse_hand_specs(BUNDLED).expect("bundled hand spec is valid"))
}

/// Model of `kind` from the bundled spec file.
pub fn hand_spec(kind: HandKind) -> HandModel {
    bundled().iter().find(|m| m.kind == kind).cloned().expect("every hand kind is bundled")
}

impl HandModel {
    pub fn limits(&self) -> Vec<[f64; 2]> {
        self.joints.iter().flat_map(|j| j.limits.iter().copied()).collect()
    }

    pub fn count(&self, kind: HandJointKind) -> usize {
        self.joints.iter().filter(|j| j.kind == kind).count()
    }

    /// Furthest fingertip along the approach axis in the open rest pose.
    pub fn max_reach(&self) -> f64 {
        let s = HandState::new(Point3::origin(), UnitQuaternion::identity(), self.rest.clone());
        forward_kinematics(self, &s).expect("rest pose is valid").fingertips.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest fingertip separation a parallel gripper can open to.
    pub fn max_gap(&self) -> f64 {
        self.base_gap + self.joints.iter().filter(|j| j.kind == HandJointKind::Prismatic).map(|j| j.limits[0][1]).sum::<f64>()
    }

    pub fn validate(&self, d: &[f64]) -> Result<(), HandError> {
        if d.len() != self.dof {
            return Err(HandError::LengthMismatch { expected: self.dof, got: d.len() });
        }
        for (index, (&value, [lo, hi])) in d.iter().zip(self.limits()).enumerate() {
            if !(value >= lo - 1e-12 && value <= hi + 1e-12) {
                return Err(HandError::JointOutOfRange { index, value, lo, hi });
            }
        }
        Ok(())
    }
}

/// Fingertips and link frames in the world frame.
pub fn forward_kinematics(m: &HandModel, s: &HandState) -> Result<Kinematics, HandError> {
    m.validate(&s.d)?;
    Ok(fk_unchecked(m, &s.pose(), &s.d))
}

pub(crate) fn fk_unchecked(m: &HandModel, pose: &Isometry3<f64>, d: &[f64]) -> Kinematics {
    let palm = pose * m.palm_frame;
    let mut frames = vec![palm];
    let mut fingertips = Vec::with_capacity(m.fingers.len());
    for f in &m.fingers {
        let mut t = palm * f.base;
        for &ji in &f.joints {
            let j = &m.joints[ji];
            t = t * j.motion(&d[j.offset..j.offset + j.dof()]) * Translation3::new(j.link, 0.0, 0.0);
            frames.push(t);
        }
        fingertips.push(t * Point3::from(f.tip));
    }
    Kinematics { frames, fingertips }
}

/// Element-wise `(1 - s) a + s b` with `s` clamped to `[0, 1]`.
pub fn interpolate_joints(a: &[f64], b: &[f64], s: f64) -> Result<Vec<f64>, HandError> {
    if a.len() != b.len() {
        return Err(HandError::LengthMismatch { expected: a.len(), got: b.len() });
    }
    let s = s.clamp(0.0, 1.0);
    Ok(a.iter().zip(b).map(|(x, y)| if s == 1.0 { *y } else { x + (y - x) * s }).collect())
}

/// Joints clamped to their limits, rotation renormalized. An empty or
/// wrong-length joint vector is replaced by the rest pose.
pub fn clamp_state(m: &HandModel, s: &HandState) -> HandState {
    let d = if s.d.len() == m.dof {
        s.d.iter().zip(m.limits()).map(|(v, [lo, hi])| if v.is_nan() { lo } else { v.clamp(lo, hi) }).collect()
    } else {
        m.rest.clone()
    };
    let r = if s.r.norm() > 1e-12 && s.r.coords.iter().all(|c| c.is_finite()) { s.r.normalize() } else { Quaternion::identity() };
    let p = if s.p.coords.iter().all(|c| c.is_finite()) { s.p } else { Point3::origin() };
    HandState { p, r, d }
}
