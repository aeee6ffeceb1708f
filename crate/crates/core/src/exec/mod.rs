//! Quasi-static world stepping, the multi-step planner and the task checker.

pub(crate) mod episode;
pub(crate) mod log;

pub use episode::{initial_hand, run_episode, run_episode_logged, run_grasp_episode, EpisodeSetup};
pub use log::{read_log, scene_hash, write_log, DatasetRef, LogError, LogHeader, LogLine, StepRecord, TrajectoryLog, TRAJ_FORMAT};

use nalgebra::{Isometry3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::angle_between;
use crate::grasp::{closure_on, sweep_hits, CONTACT_TOL};
use crate::hands::{clamp_state, fk_unchecked, HandModel, HandState};
use crate::scene::{Cabinet, JointKind};

/// Success needs the target's open ratio strictly above this.
pub const SUCCESS_RATIO: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecConfig {
    pub rate_hz: f64,
    /// m/s along the straight approach line.
    pub approach_speed: f64,
    pub approach_budget: usize,
    pub close_steps: usize,
    pub close_budget: usize,
    pub pull_steps: usize,
    /// m/s along `-x`.
    pub pull_speed: f64,
    /// Maximum grip-to-handle distance before the grasp is lost (m).
    pub detach_distance: f64,
    /// Maximum grip-axis misalignment before the grasp is lost (deg).
    pub detach_angle_deg: f64,
    pub mu: f64,
    /// Extra curl past planned contact commanded while closing.
    pub squeeze: f64,
    /// Start distance of the hand in front of the cabinet (m).
    pub start_offset: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            rate_hz: 60.0,
            approach_speed: 0.5,
            approach_budget: 600,
            close_steps: 60,
            close_budget: 120,
            pull_steps: 600,
            pull_speed: 0.1,
            detach_distance: 0.02,
            detach_angle_deg: 30.0,
            mu: crate::grasp::DEFAULT_MU,
            squeeze: 0.25,
            start_offset: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Observe,
    Locate,
    Approach,
    Close,
    Pull,
    Teleop,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Observe => "observe",
            Phase::Locate => "locate",
            Phase::Approach => "approach",
            Phase::Close => "close",
            Phase::Pull => "pull",
            Phase::Teleop => "teleop",
            Phase::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Failure {
    None,
    NoDetection,
    NoMatch,
    NoGrasp,
    Detached,
    WrongPart,
    Timeout,
}

impl Failure {
    pub const ALL: [Failure; 7] =
        [Failure::None, Failure::NoDetection, Failure::NoMatch, Failure::NoGrasp, Failure::Detached, Failure::WrongPart, Failure::Timeout];

    pub fn as_str(self) -> &'static str {
        match self {
            Failure::None => "None",
            Failure::NoDetection => "NoDetection",
            Failure::NoMatch => "NoMatch",
            Failure::NoGrasp => "NoGrasp",
            Failure::Detached => "Detached",
            Failure::WrongPart => "WrongPart",
            Failure::Timeout => "Timeout",
        }
    }
}

/// Hand attached to a part; `grip` maps hand frame to handle frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub part: usize,
    pub grip: Isometry3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub cabinet: Cabinet,
    pub hand: HandState,
    pub attachment: Option<Attachment>,
    pub t: usize,
    /// Set once a grasp is lost; never cleared.
    pub detached: bool,
    pub ever_attached: bool,
}

impl WorldState {
    pub fn new(cabinet: Cabinet, hand: HandState) -> Self {
        WorldState { cabinet, hand, attachment: None, t: 0, detached: false, ever_attached: false }
    }

    pub fn joint_values(&self) -> Vec<f64> {
        self.cabinet.parts.iter().map(|p| p.joint.value).collect()
    }

    pub fn attached_part(&self) -> Option<usize> {
        self.attachment.map(|a| a.part)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMark {
    pub t: usize,
    pub phase: Phase,
    pub hand: HandState,
    pub joints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub open_ratio: f64,
    pub target_part: Option<usize>,
    pub opened_part: Option<usize>,
    pub failure: Failure,
    pub steps: usize,
    pub trace: Vec<PhaseMark>,
}

/// Grip point and handle-length axis implied by the hand pose.
fn expected_handle(hand: &Isometry3<f64>, a: &Attachment) -> (Vector3<f64>, Vector3<f64>) {
    let e = hand * a.grip;
    (e.translation.vector, e.rotation * Vector3::y())
}

/// Whether the attached handle is still within the detach tolerances of
/// where the hand holds it. True when nothing is attached.
pub fn grasp_maintained(w: &WorldState, cfg: &ExecConfig) -> bool {
    let Some(a) = w.attachment else { return true };
    let Some(part) = w.cabinet.part(a.part) else { return false };
    let actual = part.handle_cuboid();
    let (grip_point, grip_axis) = expected_handle(&w.hand.pose(), &a);
    let dist = (actual.center().coords - grip_point).norm();
    let angle = angle_between(&grip_axis, &actual.axis(1));
    dist <= cfg.detach_distance && angle <= cfg.detach_angle_deg.to_radians()
}

/// Finger joints of `cmd` limited so no fingertip passes into a handle it
/// was outside of.
fn stop_fingers_on_contact(m: &HandModel, w: &WorldState, cmd: &mut HandState) {
    if cmd.d == w.hand.d {
        return;
    }
    let pose = cmd.pose();
    let cuboids: Vec<_> = w.cabinet.parts.iter().map(|p| p.handle_cuboid()).collect();
    for f in 0..m.fingers.len() {
        let idx: Vec<usize> = m.fingers[f]
            .joints
            .iter()
            .flat_map(|&ji| {
                let j = &m.joints[ji];
                j.offset..j.offset + j.dof()
            })
            .collect();
        if idx.iter().all(|&i| cmd.d[i] == w.hand.d[i]) {
            continue;
        }
        let blend = |s: f64| {
            let mut d = cmd.d.clone();
            for &i in &idx {
                d[i] = w.hand.d[i] + (cmd.d[i] - w.hand.d[i]) * s;
            }
            d
        };
        let tip = |s: f64| fk_unchecked(m, &pose, &blend(s)).fingertips[f];
        let start = tip(0.0);
        let end = tip(1.0);
        let mut stop: f64 = 1.0;
        for c in &cuboids {
            let sd0 = c.signed_distance(&start);
            if sd0 < -CONTACT_TOL {
                // already buried; nothing sensible to enforce
                continue;
            }
            if sd0 <= 0.0 {
                // touching: hold the finger if the motion goes any deeper
                let deeper = (1..=8).any(|k| c.signed_distance(&tip(k as f64 / 8.0)) < sd0 - 1e-12);
                if deeper {
                    stop = 0.0;
                }
                continue;
            }
            if !sweep_hits(c, &start, &end) {
                continue;
            }
            let (mut lo, mut hi) = (0.0, stop);
            for _ in 0..crate::grasp::BISECT_ITERS {
                let mid = 0.5 * (lo + hi);
                if sweep_hits(c, &start, &tip(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            stop = if c.signed_distance(&tip(hi)) >= -CONTACT_TOL { hi } else { lo };
        }
        if stop < 1.0 {
            let d = blend(stop);
            for &i in &idx {
                cmd.d[i] = d[i];
            }
        }
    }
}

/// Advances the world by one step with the hand commanded to `cmd`.
pub fn step_world(w: &WorldState, m: &HandModel, cmd: &HandState, cfg: &ExecConfig) -> WorldState {
    let mut cmd = clamp_state(m, cmd);
    stop_fingers_on_contact(m, w, &mut cmd);
    let mut next = w.clone();
    next.t += 1;
    if let Some(a) = w.attachment {
        let (before, _) = expected_handle(&w.hand.pose(), &a);
        let (after, _) = expected_handle(&cmd.pose(), &a);
        let delta = after - before;
        if let Some(part) = next.cabinet.part_mut(a.part) {
            let j = &part.joint;
            let dv = match j.kind {
                JointKind::Prismatic => delta.dot(&j.axis.normalize()),
                JointKind::Revolute => {
                    let axis = j.axis.normalize();
                    let c = part.handle_cuboid().center();
                    let v = c - j.origin;
                    let radial = v - axis * v.dot(&axis);
                    let r = radial.norm();
                    if r > 1e-9 {
                        delta.dot(&axis.cross(&radial).normalize()) / r
                    } else {
                        0.0
                    }
                }
            };
            part.joint.value = (part.joint.value + dv).clamp(j.limit[0], j.limit[1]);
        }
    }
    next.hand = cmd;
    if next.attachment.is_some() && !grasp_maintained(&next, cfg) {
        next.attachment = None;
        next.detached = true;
    }
    next
}

/// Attaches to the handle with the best closure, if any qualifies.
pub fn try_attach(w: &mut WorldState, m: &HandModel, mu: f64) -> Option<usize> {
    if w.attachment.is_some() {
        return w.attached_part();
    }
    let pose = w.hand.pose();
    let mut best: Option<(usize, f64)> = None;
    for p in &w.cabinet.parts {
        if let (Some(q), _) = closure_on(m, &pose, &w.hand.d, &p.handle_cuboid(), mu) {
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((p.id, q));
            }
        }
    }
    let (part, _) = best?;
    let handle = w.cabinet.part(part)?.handle_cuboid().pose;
    w.attachment = Some(Attachment { part, grip: pose.inverse() * handle });
    w.ever_attached = true;
    Some(part)
}

/// `(success, target open ratio)`: the target must be open strictly more
/// than 20%, and no other part may be open past that while it is not.
pub fn check_success(c: &Cabinet, target: usize) -> (bool, f64) {
    let Some(t) = c.part(target) else { return (false, 0.0) };
    let ratio = t.open_ratio();
    let target_ok = ratio > SUCCESS_RATIO;
    let other_open = c.parts.iter().any(|p| p.id != target && p.open_ratio() > SUCCESS_RATIO);
    (target_ok && !(other_open && !target_ok), ratio)
}

/// Part opened the furthest, if any moved.
pub fn opened_part(c: &Cabinet) -> Option<usize> {
    c.parts
        .iter()
        .filter(|p| p.open_ratio() > 0.0)
        .max_by(|a, b| a.open_ratio().total_cmp(&b.open_ratio()).then(b.id.cmp(&a.id)))
        .map(|p| p.id)
}

/// Final verdict. `abort` carries failures decided before any motion
/// could open something (no box, no plan, budget exhausted).
pub fn finish(w: &WorldState, target: Option<usize>, abort: Option<Failure>, trace: Vec<PhaseMark>) -> EpisodeResult {
    let (success, open_ratio) = target.map_or((false, 0.0), |t| check_success(&w.cabinet, t));
    let wrong = w.cabinet.parts.iter().any(|p| Some(p.id) != target && p.open_ratio() > SUCCESS_RATIO);
    let failure = if success {
        Failure::None
    } else if let Some(f) = abort {
        f
    } else if wrong {
        Failure::WrongPart
    } else if w.detached {
        Failure::Detached
    } else if !w.ever_attached {
        Failure::NoGrasp
    } else {
        Failure::Timeout
    };
    EpisodeResult { success, open_ratio, target_part: target, opened_part: opened_part(&w.cabinet), failure, steps: w.t, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grasp::{search_grasp, HandleCuboid};
    use crate::hands::{hand_spec, HandKind};
    use crate::scene::{generate_cabinet, GenerationConstraints, PartKind};
    use nalgebra::UnitQuaternion;

    fn cabinet(kind: PartKind) -> Cabinet {
        generate_cabinet(11, &GenerationConstraints::canonical_single(kind)).unwrap()
    }

    fn attached_world(kind: PartKind) -> (WorldState, HandModel) {
        let c = cabinet(kind);
        let m = hand_spec(HandKind::Franka);
        let plan = search_grasp(&m, &HandleCuboid::from(&c.parts[0].handle), 0.5).unwrap();
        let mut s = plan.pregrasp.clone();
        s.d = plan.final_joints.clone();
        let mut w = WorldState::new(c, s);
        assert_eq!(try_attach(&mut w, &m, 0.5), Some(0));
        (w, m)
    }

    fn moved(s: &HandState, d: Vector3<f64>) -> HandState {
        HandState { p: s.p + d, ..s.clone() }
    }

    #[test]
    fn checker_boundaries() {
        let mut c = cabinet(PartKind::Door);
        c.parts[0].joint.value = 36f64.to_radians();
        assert_eq!(check_success(&c, 0), (false, 0.2));
        c.parts[0].joint.value = 40f64.to_radians();
        let (ok, r) = check_success(&c, 0);
        assert!(ok && (r - 0.2222).abs() < 1e-4);
        let mut d = cabinet(PartKind::Drawer);
        d.parts[0].joint.limit[1] = 0.4;
        d.parts[0].joint.value = 0.05;
        assert_eq!(check_success(&d, 0), (false, 0.125));
    }

    #[test]
    fn wrong_part_fails() {
        let mut c = generate_cabinet(5, &GenerationConstraints::exact(2, 0)).unwrap();
        let max = c.parts[1].joint.max();
        c.parts[1].joint.value = 0.5 * max;
        assert_eq!(check_success(&c, 0), (false, 0.0));
        let w = WorldState::new(c, initial_hand(&cabinet(PartKind::Drawer), &hand_spec(HandKind::Franka), &ExecConfig::default()));
        let r = finish(&w, Some(0), None, vec![]);
        assert_eq!(r.failure, Failure::WrongPart);
        assert_eq!(r.opened_part, Some(1));
    }

    #[test]
    fn drawer_follows_hand() {
        let cfg = ExecConfig::default();
        let (w, m) = attached_world(PartKind::Drawer);
        let n = step_world(&w, &m, &moved(&w.hand, Vector3::new(-0.01, 0.0, 0.0)), &cfg);
        assert!((n.cabinet.parts[0].joint.value - 0.01).abs() < 1e-12);
        assert!(n.attachment.is_some());
        let mut cur = n;
        for _ in 0..200 {
            cur = step_world(&cur, &m, &moved(&cur.hand, Vector3::new(-0.005, 0.0, 0.0)), &cfg);
            let j = &cur.cabinet.parts[0].joint;
            assert!(j.value >= 0.0 && j.value <= j.max());
        }
    }

    #[test]
    fn unattached_hand_leaves_joints() {
        let cfg = ExecConfig::default();
        let c = cabinet(PartKind::Drawer);
        let m = hand_spec(HandKind::Franka);
        let w = WorldState::new(c, initial_hand(&cabinet(PartKind::Drawer), &m, &cfg));
        let n = step_world(&w, &m, &moved(&w.hand, Vector3::new(-0.2, 0.1, 0.0)), &cfg);
        assert_eq!(n.joint_values(), w.joint_values());
    }

    #[test]
    fn door_tangent_projection() {
        let cfg = ExecConfig::default();
        let (w, m) = attached_world(PartKind::Door);
        let p = &w.cabinet.parts[0];
        let radial = p.handle.center - p.joint.origin;
        let radial = Vector3::new(radial.x, radial.y, 0.0).normalize();
        // radial motion is orthogonal to the arc
        let n = step_world(&w, &m, &moved(&w.hand, radial * 0.001), &cfg);
        assert!(n.cabinet.parts[0].joint.value.abs() < 1e-12);
    }

    /// Deviation between the arc point and the straight-pull hand point at
    /// door angle `theta` for hinge radius `r`.
    fn arc_deviation(r: f64, theta: f64) -> f64 {
        let s = r * (1.0 / theta.cos() + theta.tan()).ln();
        ((s - r * theta.sin()).powi(2) + (r * (1.0 - theta.cos())).powi(2)).sqrt()
    }

    #[test]
    fn door_detach_angle_matches_closed_form() {
        let cfg = ExecConfig { pull_speed: 0.01, ..ExecConfig::default() };
        let (mut w, m) = attached_world(PartKind::Door);
        // move the hinge so that the radius is exactly 0.4 m
        let r = 0.4;
        let part = &mut w.cabinet.parts[0];
        let side = (part.joint.origin.y - part.handle.center.y).signum();
        part.joint.origin.y = part.handle.center.y + side * r;
        part.joint.origin.x = part.handle.center.x;
        let hinge_r = w.cabinet.parts[0].hinge_radius().unwrap();
        assert!((hinge_r - r).abs() < 1e-12);
        let mut theta_detach = None;
        for _ in 0..200_000 {
            let next = step_world(&w, &m, &moved(&w.hand, Vector3::new(-cfg.pull_speed / cfg.rate_hz, 0.0, 0.0)), &cfg);
            if next.attachment.is_none() {
                theta_detach = Some(next.cabinet.parts[0].joint.value);
                break;
            }
            w = next;
        }
        let got = theta_detach.expect("door grasp must eventually detach");
        // closed-form crossing by bisection
        let (mut lo, mut hi) = (0.0, 1.5);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if arc_deviation(r, mid) > cfg.detach_distance {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((got - hi).abs() < 2e-3, "stepped {got} closed form {hi}");
        assert!((hi.to_degrees() - 18.0).abs() < 2.0);
    }

    #[test]
    fn wrist_twist_detaches() {
        let cfg = ExecConfig::default();
        let (w, m) = attached_world(PartKind::Drawer);
        let mut cmd = w.hand.clone();
        cmd.r = (UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 40f64.to_radians()) * w.hand.rotation()).into_inner();
        let n = step_world(&w, &m, &cmd, &cfg);
        assert!(n.attachment.is_none() && n.detached);
    }

    #[test]
    fn fingers_stop_at_contact() {
        let cfg = ExecConfig::default();
        let c = cabinet(PartKind::Drawer);
        let m = hand_spec(HandKind::Franka);
        let h = HandleCuboid::from(&c.parts[0].handle);
        let pre = crate::grasp::pregrasp_pose(&h, &m);
        let w = WorldState::new(c, pre.clone());
        let n = step_world(&w, &m, &HandState { d: vec![0.0, 0.0], ..pre }, &cfg);
        let gap = n.hand.d[0] + n.hand.d[1];
        assert!(gap <= h.thickness() + 1e-9 && gap >= h.thickness() - 2e-3, "{gap}");
    }
}
