use nalgebra::{Point3, UnitQuaternion, Vector3};

use super::log::{DatasetRef, LogHeader, StepRecord, TrajectoryLog, TRAJ_FORMAT};
use super::{finish, scene_hash, step_world, try_attach, EpisodeResult, ExecConfig, Failure, Phase, PhaseMark, WorldState};
use crate::camera::{place_camera, recover_cuboid, refine_bbox, render, REFINE_MARGIN};
use crate::detect::{DetectError, Detector, SceneView};
use crate::grasp::{search_grasp, set_curl, GraspPlan, HandleCuboid};
use crate::hands::{interpolate_joints, HandModel, HandState};
use crate::instruct::{describe_parts, ground_instruction};
use crate::rng::derive;
use crate::scene::Cabinet;

/// Depth assumed for a handle whose mounting surface is not visible.
const FALLBACK_HANDLE_DEPTH: f64 = 0.03;

/// Everything an agent episode depends on.
pub struct EpisodeSetup<'a> {
    pub cabinet: &'a Cabinet,
    pub instruction: &'a str,
    pub hand: &'a HandModel,
    pub detector: &'a dyn Detector,
    pub cfg: &'a ExecConfig,
    pub seed: u64,
    pub dataset: Option<DatasetRef>,
}

/// Open hand `start_offset` in front of the cabinet face center.
pub fn initial_hand(c: &Cabinet, m: &HandModel, cfg: &ExecConfig) -> HandState {
    HandState::new(Point3::new(c.front_x - cfg.start_offset, 0.0, c.height() / 2.0), UnitQuaternion::identity(), m.rest.clone())
}

/// Steps the world, optionally attempts attachment, and records the step.
pub(crate) struct Recorder<'a> {
    pub m: &'a HandModel,
    pub cfg: &'a ExecConfig,
    pub log: TrajectoryLog,
    pub trace: Vec<PhaseMark>,
}

impl<'a> Recorder<'a> {
    pub fn new(m: &'a HandModel, cfg: &'a ExecConfig, header: LogHeader) -> Self {
        Recorder { m, cfg, log: TrajectoryLog::new(header), trace: Vec::new() }
    }

    pub fn step(&mut self, w: &WorldState, cmd: HandState, phase: Phase, attach: bool) -> WorldState {
        let n = apply_step(w, self.m, &cmd, attach, self.cfg);
        self.record(&n, cmd, phase, attach);
        n
    }

    pub fn record(&mut self, n: &WorldState, cmd: HandState, phase: Phase, attach: bool) {
        record_step(&mut self.log, &mut self.trace, n, cmd, phase, attach);
    }

    pub fn finish(mut self, w: &WorldState, abort: Option<Failure>) -> (EpisodeResult, TrajectoryLog) {
        let r = close_log(&mut self.log, std::mem::take(&mut self.trace), w, abort);
        (r, self.log)
    }
}

/// Appends a step and opens a new phase mark when the phase changes.
pub(crate) fn record_step(log: &mut TrajectoryLog, trace: &mut Vec<PhaseMark>, n: &WorldState, cmd: HandState, phase: Phase, attach: bool) {
    if log.steps.last().is_none_or(|s| s.phase != phase) {
        trace.push(PhaseMark { t: n.t, phase, hand: n.hand.clone(), joints: n.joint_values() });
    }
    log.steps.push(StepRecord { t: n.t, phase, cmd, hand: n.hand.clone(), joints: n.joint_values(), attached: n.attached_part(), try_attach: attach });
}

/// Classifies the final world and stores the verdict in the log.
pub(crate) fn close_log(log: &mut TrajectoryLog, trace: Vec<PhaseMark>, w: &WorldState, abort: Option<Failure>) -> EpisodeResult {
    let r = finish(w, log.header.target_part, abort, trace);
    log.abort = abort;
    log.result = Some(r.clone());
    r
}

/// The single stepping path shared by agents, teleop and replay.
pub(crate) fn apply_step(w: &WorldState, m: &HandModel, cmd: &HandState, attach: bool, cfg: &ExecConfig) -> WorldState {
    let mut n = step_world(w, m, cmd, cfg);
    if attach {
        try_attach(&mut n, m, cfg.mu);
    }
    n
}

fn detect_failure(e: &DetectError) -> Failure {
    match e {
        DetectError::NoMatch(_) | DetectError::InvalidLayout(_) => Failure::NoMatch,
        _ => Failure::NoDetection,
    }
}

/// Joint target for closing: each finger curled `squeeze` past its planned
/// contact; the world stops fingertips at the real surface.
pub(crate) fn squeeze_target(m: &HandModel, plan: &GraspPlan, squeeze: f64) -> Vec<f64> {
    let mut d = plan.final_joints.clone();
    for (f, g) in plan.curls.iter().enumerate() {
        set_curl(m, &mut d, f, (g + squeeze).min(1.0));
    }
    d
}

/// Close then pull; shared by agent and ground-truth episodes.
fn close_and_pull(rec: &mut Recorder<'_>, mut w: WorldState, plan: &GraspPlan) -> (WorldState, Option<Failure>) {
    let (m, cfg) = (rec.m, rec.cfg);
    if cfg.close_steps > cfg.close_budget {
        return (w, Some(Failure::Timeout));
    }
    let target = squeeze_target(m, plan, cfg.squeeze);
    let steps = cfg.close_steps.max(1);
    let pose = plan.pregrasp.clone();
    for k in 1..=steps {
        let d = interpolate_joints(&m.rest, &target, k as f64 / steps as f64).expect("plan has the model's dof");
        w = rec.step(&w, HandState { d, ..pose.clone() }, Phase::Close, k == steps);
    }
    let Some(part) = w.attached_part() else { return (w, None) };
    let dx = cfg.pull_speed / cfg.rate_hz;
    for _ in 0..cfg.pull_steps {
        let cmd = HandState { p: w.hand.p - Vector3::x() * dx, ..w.hand.clone() };
        w = rec.step(&w, cmd, Phase::Pull, false);
        if w.attachment.is_none() {
            break;
        }
        let j = &w.cabinet.part(part).expect("attached part exists").joint;
        if j.value >= j.max() {
            break;
        }
    }
    (w, None)
}

/// Full planner run: observe, locate, approach, close, pull, check.
pub fn run_episode(c: &Cabinet, instruction: &str, hand: &HandModel, detector: &dyn Detector, cfg: &ExecConfig, seed: u64) -> EpisodeResult {
    run_episode_logged(&EpisodeSetup { cabinet: c, instruction, hand, detector, cfg, seed, dataset: None }).0
}

pub fn run_episode_logged(s: &EpisodeSetup<'_>) -> (EpisodeResult, TrajectoryLog) {
    let (m, cfg) = (s.hand, s.cfg);
    let closed = s.cabinet.closed();
    let target = ground_instruction(s.instruction, &closed).ok();
    let start = initial_hand(&closed, m, cfg);
    let header = LogHeader {
        format: TRAJ_FORMAT.into(),
        mode: "agent".into(),
        dataset: s.dataset,
        scene_hash: scene_hash(&closed),
        cabinet_id: closed.id,
        instruction: s.instruction.into(),
        target_part: target,
        hand: m.kind,
        detector: s.detector.name(),
        seed: s.seed,
        config: cfg.clone(),
        start: start.clone(),
    };
    let mut rec = Recorder::new(m, cfg, header);
    let mut w = WorldState::new(closed.clone(), start.clone());

    let pose = place_camera(&closed, derive(s.seed, "camera", 0));
    let obs = render(&pose, &closed, derive(s.seed, "recolor", 0));
    let view = SceneView { cabinet: &closed, obs: &obs };
    let bbox = match s.detector.locate(&view, s.instruction, derive(s.seed, "detector", 0)) {
        Ok(b) => b,
        Err(e) => return rec.finish(&w, Some(detect_failure(&e))),
    };
    let Ok(est) = recover_cuboid(&refine_bbox(&bbox, &obs, REFINE_MARGIN), &obs, FALLBACK_HANDLE_DEPTH) else { return rec.finish(&w, Some(Failure::NoDetection)) };
    let Ok(plan) = search_grasp(m, &HandleCuboid::from(&est), cfg.mu) else { return rec.finish(&w, Some(Failure::NoGrasp)) };

    let goal = plan.pregrasp.clone();
    let per_step = cfg.approach_speed / cfg.rate_hz;
    let n = ((goal.p - start.p).norm() / per_step).ceil().max(1.0) as usize;
    if n > cfg.approach_budget {
        for _ in 0..cfg.approach_budget {
            let k = w.t + 1;
            w = rec.step(&w, approach_cmd(&start, &goal, k as f64 / n as f64), Phase::Approach, false);
        }
        return rec.finish(&w, Some(Failure::Timeout));
    }
    for k in 1..=n {
        w = rec.step(&w, approach_cmd(&start, &goal, k as f64 / n as f64), Phase::Approach, false);
    }
    let (w, abort) = close_and_pull(&mut rec, w, &plan);
    rec.finish(&w, abort)
}

fn approach_cmd(a: &HandState, b: &HandState, s: f64) -> HandState {
    let p = a.p + (b.p - a.p) * s;
    let r = a.rotation().slerp(&b.rotation(), s);
    HandState::new(if s >= 1.0 { b.p } else { p }, r, b.d.clone())
}

/// Grasp-and-pull with the hand placed at the pregrasp computed from the
/// ground-truth handle (no detection, no approach).
pub fn run_grasp_episode(c: &Cabinet, part: usize, hand: &HandModel, cfg: &ExecConfig, dataset: Option<DatasetRef>) -> (EpisodeResult, TrajectoryLog) {
    let closed = c.closed();
    let instruction = describe_parts(&closed)
        .ok()
        .and_then(|v| v.into_iter().find(|i| i.part_id == part))
        .map(|i| i.text)
        .unwrap_or_default();
    let handle = closed.part(part).map(|p| HandleCuboid::from(&p.handle));
    let plan = handle.as_ref().and_then(|h| search_grasp(hand, h, cfg.mu).ok());
    let start = plan.as_ref().map_or_else(|| initial_hand(&closed, hand, cfg), |p| p.pregrasp.clone());
    let header = LogHeader {
        format: TRAJ_FORMAT.into(),
        mode: "grasp".into(),
        dataset,
        scene_hash: scene_hash(&closed),
        cabinet_id: closed.id,
        instruction,
        target_part: closed.part(part).map(|p| p.id),
        hand: hand.kind,
        detector: "ground-truth".into(),
        seed: 0,
        config: cfg.clone(),
        start: start.clone(),
    };
    let mut rec = Recorder::new(hand, cfg, header);
    let w = WorldState::new(closed, start);
    let Some(plan) = plan else { return rec.finish(&w, Some(Failure::NoGrasp)) };
    let (w, abort) = close_and_pull(&mut rec, w, &plan);
    rec.finish(&w, abort)
}
