//! Curl-search grasp planning on a simplified cuboid handle.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::HandleEstimate;
use crate::geom::{angle_between, Cuboid};
use crate::hands::{fk_unchecked, HandKind, HandModel, HandState};
use crate::scene::{Handle, Posture};

pub const DEFAULT_MU: f64 = 0.5;
/// Fingertip-to-surface distance that counts as contact.
pub const CONTACT_TOL: f64 = 1e-3;
/// Clearance between the extended fingertips and the mounting surface.
pub const PREGRASP_CLEARANCE: f64 = 0.01;
pub const CURL_STEP: f64 = 0.05;
pub const BISECT_ITERS: usize = 20;
pub const ROLL_OFFSETS_DEG: [f64; 3] = [0.0, 15.0, -15.0];

#[derive(Debug, Error, PartialEq)]
#[error("no grasp found for {hand} on handle at {center}")]
pub struct NoGrasp {
    pub hand: HandKind,
    pub center: Point3<f64>,
}

/// Center, posture and `(depth, length, thickness)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandleCuboid {
    pub center: Point3<f64>,
    pub posture: Posture,
    pub dims: [f64; 3],
}

impl HandleCuboid {
    pub fn new(center: Point3<f64>, posture: Posture, depth: f64, length: f64, thickness: f64) -> Self {
        HandleCuboid { center, posture, dims: [depth, length, thickness] }
    }

    pub fn depth(&self) -> f64 {
        self.dims[0]
    }

    pub fn length(&self) -> f64 {
        self.dims[1]
    }

    pub fn thickness(&self) -> f64 {
        self.dims[2]
    }

    pub fn frame(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.center.coords), self.posture.rotation())
    }

    pub fn cuboid(&self) -> Cuboid {
        Cuboid::new(self.center, self.posture.rotation(), Vector3::from(self.dims))
    }

    fn local_cuboid(&self) -> Cuboid {
        Cuboid::new(Point3::origin(), UnitQuaternion::identity(), Vector3::from(self.dims))
    }
}

impl From<&Handle> for HandleCuboid {
    fn from(h: &Handle) -> Self {
        HandleCuboid::new(h.center, h.posture, h.depth, h.length, h.thickness)
    }
}

impl From<&HandleEstimate> for HandleCuboid {
    fn from(h: &HandleEstimate) -> Self {
        HandleCuboid::new(h.center, h.posture, h.depth, h.length, h.thickness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub finger: usize,
    pub point: Point3<f64>,
    /// Outward surface normal.
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspPlan {
    pub pregrasp: HandState,
    pub final_joints: Vec<f64>,
    /// Curl parameter each finger stopped at.
    pub curls: Vec<f64>,
    pub contacts: Vec<Contact>,
    pub closure_quality: f64,
    pub roll_offset_deg: f64,
    pub length_offset: f64,
}

/// Palm-to-center distance: the fully extended fingers end
/// [`PREGRASP_CLEARANCE`] short of the surface the handle is mounted on.
pub fn standoff(h: &HandleCuboid, m: &HandModel) -> f64 {
    m.max_reach() + PREGRASP_CLEARANCE - h.depth() / 2.0
}

/// Hand pose relative to the handle frame for a search candidate.
fn local_pregrasp(h: &HandleCuboid, m: &HandModel, roll_deg: f64, offset: f64) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(-standoff(h, m), offset, 0.0),
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), roll_deg.to_radians()),
    )
}

fn state_at(pose: Isometry3<f64>, d: Vec<f64>) -> HandState {
    HandState::new(Point3::from(pose.translation.vector), pose.rotation, d)
}

/// Hand in front of the handle, palm facing `+x`, wrist rolled with the
/// handle posture, joints open.
pub fn pregrasp_pose(h: &HandleCuboid, m: &HandModel) -> HandState {
    state_at(h.frame() * local_pregrasp(h, m, 0.0, 0.0), m.rest.clone())
}

/// Sets finger `f`'s curling joints to `gamma` of the way from rest to their
/// curl targets.
pub fn set_curl(m: &HandModel, d: &mut [f64], f: usize, gamma: f64) {
    for &ji in &m.fingers[f].joints {
        let j = &m.joints[ji];
        if let Some(to) = j.curl_to {
            let from = m.rest[j.offset];
            d[j.offset] = from + (to - from) * gamma.clamp(0.0, 1.0);
        }
    }
}

/// Curl parameter of finger `f` in `d` (mean over its curling joints).
pub fn curl_of(m: &HandModel, d: &[f64], f: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for &ji in &m.fingers[f].joints {
        let j = &m.joints[ji];
        if let Some(to) = j.curl_to {
            let from = m.rest[j.offset];
            if (to - from).abs() > 1e-15 {
                sum += (d[j.offset] - from) / (to - from);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Whether moving a fingertip from `a` to `b` ends inside or passes
/// through `c`.
pub(crate) fn sweep_hits(c: &Cuboid, a: &Point3<f64>, b: &Point3<f64>) -> bool {
    if c.signed_distance(b) <= 0.0 {
        return true;
    }
    matches!(c.ray_hit(a, &(b - a)), Some(t) if t <= 1.0)
}

/// Curl of finger `f` at first contact with `c`, or 1 if it never touches.
/// `None` if the fingertip already penetrates at `gamma = 0`.
fn curl_until_contact(m: &HandModel, pose: &Isometry3<f64>, c: &Cuboid, f: usize) -> Option<f64> {
    let tip = |g: f64| {
        let mut d = m.rest.clone();
        set_curl(m, &mut d, f, g);
        fk_unchecked(m, pose, &d).fingertips[f]
    };
    let start = tip(0.0);
    let sd0 = c.signed_distance(&start);
    // the pregrasp itself must be collision-free
    if sd0 < -1e-12 {
        return None;
    }
    if sd0 <= CONTACT_TOL {
        return Some(0.0);
    }
    let steps = (1.0 / CURL_STEP).round() as usize;
    let mut prev = (0.0, start);
    for k in 1..=steps {
        let g = (k as f64 * CURL_STEP).min(1.0);
        let p = tip(g);
        if sweep_hits(c, &prev.1, &p) {
            let (mut lo, mut hi) = (prev.0, g);
            for _ in 0..BISECT_ITERS {
                let mid = 0.5 * (lo + hi);
                if sweep_hits(c, &prev.1, &tip(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(if c.signed_distance(&tip(hi)) >= -CONTACT_TOL { hi } else { lo });
        }
        prev = (g, p);
    }
    Some(1.0)
}

fn tan_cone(mu: f64) -> f64 {
    mu.max(0.0).atan()
}

/// Closure predicate: at least two fingertips within [`CONTACT_TOL`] of the
/// surface on opposing faces, with the line between them inside both
/// friction cones. Parallel grippers must close across the thickness.
pub fn closure_test(m: &HandModel, s: &HandState, h: &HandleCuboid, mu: f64) -> (bool, Vec<Contact>) {
    let (q, contacts) = closure_on(m, &s.pose(), &s.d, &h.cuboid(), mu);
    (q.is_some(), contacts)
}

/// Best closure quality (if any) and the contacts.
pub(crate) fn closure_on(m: &HandModel, pose: &Isometry3<f64>, d: &[f64], c: &Cuboid, mu: f64) -> (Option<f64>, Vec<Contact>) {
    let tips = fk_unchecked(m, pose, d).fingertips;
    let mut contacts = Vec::new();
    let mut faces = Vec::new();
    for (finger, p) in tips.iter().enumerate() {
        let q = c.query(p);
        if q.distance.abs() <= CONTACT_TOL {
            contacts.push(Contact { finger, point: q.point, normal: q.normal });
            faces.push(q.face);
        }
    }
    let cone = tan_cone(mu);
    let mut best: Option<f64> = None;
    for i in 0..contacts.len() {
        for j in i + 1..contacts.len() {
            let (a, b) = (&contacts[i], &contacts[j]);
            if m.kind == HandKind::Franka && (faces[i] / 2 != 2 || faces[j] / 2 != 2) {
                continue;
            }
            if angle_between(&a.normal, &-b.normal) > cone {
                continue;
            }
            let l = b.point - a.point;
            if l.norm() < 1e-9 {
                continue;
            }
            let worst = angle_between(&l, &-a.normal).max(angle_between(&-l, &-b.normal));
            if worst <= cone {
                let quality = if cone > 0.0 { 1.0 - worst / cone } else { 1.0 };
                best = Some(best.map_or(quality, |b: f64| b.max(quality)));
            }
        }
    }
    (best, contacts)
}

/// Curls every finger until contact, then checks closure; retries over
/// wrist roll `{0, +15, -15}` deg and length offsets `{0, +L/4, -L/4}` in
/// that order.
pub fn search_grasp(m: &HandModel, h: &HandleCuboid, mu: f64) -> Result<GraspPlan, NoGrasp> {
    let local = h.local_cuboid();
    let frame = h.frame();
    for roll in ROLL_OFFSETS_DEG {
        for offset in [0.0, h.length() / 4.0, -h.length() / 4.0] {
            let lp = local_pregrasp(h, m, roll, offset);
            let mut d = m.rest.clone();
            let mut curls = Vec::with_capacity(m.fingers.len());
            let mut blocked = false;
            for f in 0..m.fingers.len() {
                match curl_until_contact(m, &lp, &local, f) {
                    Some(g) => {
                        set_curl(m, &mut d, f, g);
                        curls.push(g);
                    }
                    None => {
                        blocked = true;
                        break;
                    }
                }
            }
            if blocked {
                continue;
            }
            let (quality, contacts) = closure_on(m, &lp, &d, &local, mu);
            let Some(closure_quality) = quality else { continue };
            let contacts = contacts
                .into_iter()
                .map(|c| Contact { finger: c.finger, point: frame * c.point, normal: frame.rotation * c.normal })
                .collect();
            let pregrasp = state_at(frame * lp, m.rest.clone());
            return Ok(GraspPlan { pregrasp, final_joints: d, curls, contacts, closure_quality, roll_offset_deg: roll, length_offset: offset });
        }
    }
    Err(NoGrasp { hand: m.kind, center: h.center })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hands::hand_spec;

    fn canonical() -> HandleCuboid {
        HandleCuboid::new(Point3::origin(), Posture::Horizontal, 0.03, 0.10, 0.02)
    }

    #[test]
    fn pregrasp_construction() {
        let m = hand_spec(HandKind::Franka);
        let h = canonical();
        let s = pregrasp_pose(&h, &m);
        assert!((s.p - Point3::new(-standoff(&h, &m), 0.0, 0.0)).norm() < 1e-15);
        assert!(s.rotation().angle() < 1e-15);
        assert_eq!(s.d, m.rest);
        let v = HandleCuboid { posture: Posture::Vertical, ..h };
        let sv = pregrasp_pose(&v, &m);
        assert_eq!(sv.p, s.p);
        assert!((sv.rotation().angle() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((sv.rotation().axis().unwrap().into_inner() - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn franka_gap_band() {
        let m = hand_spec(HandKind::Franka);
        let plan = search_grasp(&m, &canonical(), DEFAULT_MU).unwrap();
        let gap = plan.final_joints[0] + plan.final_joints[1];
        assert!((0.02 - 2e-3..=0.02 + 1e-12).contains(&gap), "{gap}");
        assert_eq!(plan.roll_offset_deg, 0.0);
    }

    #[test]
    fn franka_too_thick() {
        let m = hand_spec(HandKind::Franka);
        let h = HandleCuboid::new(Point3::origin(), Posture::Horizontal, 0.03, 0.15, 0.12);
        assert!(search_grasp(&m, &h, DEFAULT_MU).is_err());
    }

    #[test]
    fn dexterous_hands_oppose_thumb() {
        for k in [HandKind::Allegro, HandKind::Shadow, HandKind::Skeleton] {
            let m = hand_spec(k);
            for posture in [Posture::Horizontal, Posture::Vertical] {
                let h = HandleCuboid { posture, ..canonical() };
                let plan = search_grasp(&m, &h, DEFAULT_MU).unwrap_or_else(|e| panic!("{e}"));
                let thumb = m.fingers.iter().position(|f| f.name == "thumb").unwrap();
                assert!(plan.contacts.iter().any(|c| c.finger == thumb));
                assert!(plan.contacts.iter().filter(|c| c.finger != thumb).count() >= 1);
                let mut s = plan.pregrasp.clone();
                s.d = plan.final_joints.clone();
                assert!(closure_test(&m, &s, &h, DEFAULT_MU).0);
            }
        }
    }

    #[test]
    fn closure_negative_cases() {
        let m = hand_spec(HandKind::Franka);
        let h = canonical();
        let mut s = pregrasp_pose(&h, &m);
        // fingertips 5 mm off both faces
        s.d = vec![0.015, 0.015];
        assert!(!closure_test(&m, &s, &h, DEFAULT_MU).0);
        s.d = vec![0.01, 0.01];
        let (ok, contacts) = closure_test(&m, &s, &h, DEFAULT_MU);
        assert!(ok && contacts.len() == 2);
        // shifted up: one tip on the top face, the other buried mid-handle
        let mut up = s.clone();
        up.p.z += 0.01;
        assert!(!closure_test(&m, &up, &h, DEFAULT_MU).0);
    }

    #[test]
    fn same_face_is_not_closure() {
        let a = hand_spec(HandKind::Allegro);
        let h = canonical();
        let mut s = pregrasp_pose(&h, &a);
        // lift the hand so only the upper finger row can lie on the top face
        s.p.z = 0.01 - 0.022;
        let s = HandState { d: vec![0.0; a.dof], ..s };
        let (ok, contacts) = closure_test(&a, &s, &h, DEFAULT_MU);
        assert!(contacts.iter().all(|c| c.normal.z > 0.99));
        assert!(!ok);
    }

    #[test]
    fn monotone_curl_distance() {
        let h = canonical();
        let c = h.cuboid();
        for k in HandKind::ALL {
            let m = hand_spec(k);
            let pose = pregrasp_pose(&h, &m).pose();
            let plan = search_grasp(&m, &h, DEFAULT_MU).unwrap();
            for f in 0..m.fingers.len() {
                let stop = plan.curls[f];
                let mut last = f64::INFINITY;
                let mut g = 0.0;
                while g <= stop {
                    let mut d = m.rest.clone();
                    set_curl(&m, &mut d, f, g);
                    let sd = c.signed_distance(&fk_unchecked(&m, &pose, &d).fingertips[f]);
                    if stop < 1.0 {
                        assert!(sd <= last + 1e-12, "{k} finger {f} gamma {g}");
                    }
                    last = sd;
                    g += 0.01;
                }
            }
        }
    }

    #[test]
    fn franka_thickness_sweep_matches_gap_oracle() {
        let m = hand_spec(HandKind::Franka);
        for i in 0..100 {
            let t = 0.005 + i as f64 * 0.001;
            let h = HandleCuboid::new(Point3::new(0.1, 0.2, 0.9), Posture::Horizontal, 0.03, 0.12, t);
            // a gap in [0, max_gap] can match the thickness iff t <= max_gap
            let feasible = (0..=800).any(|k| (k as f64 * 1e-4 - t).abs() <= 5e-5 && k as f64 * 1e-4 <= m.max_gap() + 1e-12);
            assert_eq!(search_grasp(&m, &h, DEFAULT_MU).is_ok(), feasible, "t = {t}");
        }
    }

    proptest::proptest! {
        #[test]
        fn translation_equivariance(k in 0usize..4, dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64, vertical: bool, t in 0.01..0.03f64) {
            let m = hand_spec(HandKind::ALL[k]);
            let posture = if vertical { Posture::Vertical } else { Posture::Horizontal };
            let a = HandleCuboid::new(Point3::new(-0.02, 0.1, 0.6), posture, 0.03, 0.1, t);
            let b = HandleCuboid { center: a.center + Vector3::new(dx, dy, dz), ..a };
            let (pa, pb) = (search_grasp(&m, &a, DEFAULT_MU), search_grasp(&m, &b, DEFAULT_MU));
            proptest::prop_assert_eq!(pa.is_ok(), pb.is_ok());
            if let (Ok(pa), Ok(pb)) = (pa, pb) {
                proptest::prop_assert!((pb.pregrasp.p - pa.pregrasp.p - Vector3::new(dx, dy, dz)).norm() < 1e-9);
                proptest::prop_assert_eq!(&pa.final_joints, &pb.final_joints);
                let mut s = pb.pregrasp.clone();
                s.d = pb.final_joints.clone();
                proptest::prop_assert!(closure_test(&m, &s, &b, DEFAULT_MU).0);
            }
        }
    }

    #[test]
    fn deterministic() {
        let m = hand_spec(HandKind::Shadow);
        assert_eq!(search_grasp(&m, &canonical(), 0.5), search_grasp(&m, &canonical(), 0.5));
    }
}
