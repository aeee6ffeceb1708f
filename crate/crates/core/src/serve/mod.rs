//! Live episode sessions for teleoperation and external agents, and
//! deterministic replay of trajectory logs.

mod net;
mod replay;

pub use net::{bind_addr, handle_connection, serve, ServeConfig, DEFAULT_BIND, BIND_ENV};
pub use replay::{replay, replay_file, replay_on, ReplayError};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::bench::Dataset;
use crate::camera::{place_camera, render, CameraPose};
use crate::exec::episode::{apply_step, close_log, initial_hand, record_step, squeeze_target};
use crate::exec::{scene_hash, DatasetRef, ExecConfig, Failure, LogHeader, Phase, PhaseMark, TrajectoryLog, WorldState, TRAJ_FORMAT};
use crate::grasp::{search_grasp, set_curl, HandleCuboid};
use crate::hands::{hand_spec, interpolate_joints, HandKind, HandModel, HandState};
use crate::instruct::describe_parts;
use crate::rng::derive;
use crate::scene::Split;

pub const SERVE_PROTOCOL: &str = "opend-serve/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Reset {
        split: Split,
        /// Cabinet index within the split.
        index: usize,
        hand: HandKind,
        seed: u64,
        /// Target part; drawn from the seed when absent.
        #[serde(default)]
        part: Option<usize>,
    },
    Act {
        /// World-frame translation (m).
        #[serde(default)]
        dp: [f64; 3],
        /// World-frame axis-angle rotation (rad).
        #[serde(default)]
        dr: [f64; 3],
        /// Closing fraction toward the planned grasp; `<= 0` is open.
        #[serde(default)]
        grip: Option<f64>,
        /// Explicit joint vector; overrides `grip`.
        #[serde(default)]
        d: Option<Vec<f64>>,
    },
    Finish {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub t: usize,
    pub hand: HandState,
    /// Cabinet joint values by part id.
    pub joints: Vec<f64>,
    /// Target open ratio.
    pub open_ratio: f64,
    pub attached: Option<usize>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Obs {
        session: u64,
        instruction: String,
        target_part: usize,
        width: usize,
        height: usize,
        /// Base64 PNG, RGB8.
        rgb: String,
        /// Base64 row-major little-endian `f32` ray depth.
        depth: String,
        camera: CameraPose,
        state: StateMessage,
    },
    State(StateMessage),
    Result {
        success: bool,
        open_ratio: f64,
        failure: Failure,
        steps: usize,
        /// The episode's trajectory log in JSON lines.
        log: String,
    },
    Error {
        code: String,
        msg: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    OutOfOrder,
    BadMessage,
    BadArgument,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::OutOfOrder => "OUT_OF_ORDER",
            ErrorCode::BadMessage => "BAD_MESSAGE",
            ErrorCode::BadArgument => "BAD_ARGUMENT",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub msg: String,
}

impl ProtocolError {
    fn new(code: ErrorCode, msg: impl Into<String>) -> Self {
        ProtocolError { code, msg: msg.into() }
    }

    pub fn to_message(&self) -> ServerMessage {
        ServerMessage::Error { code: self.code.as_str().into(), msg: self.msg.clone() }
    }
}

struct Episode {
    model: HandModel,
    world: WorldState,
    log: TrajectoryLog,
    trace: Vec<PhaseMark>,
    target: usize,
    grip_target: Vec<f64>,
}

/// One connection's state machine. Exactly one episode is live between a
/// `reset` and its `finish`.
pub struct Session<'a> {
    pub id: u64,
    ds: &'a Dataset,
    cfg: ExecConfig,
    episode: Option<Episode>,
    /// Logs of finished episodes, oldest first.
    pub finished: Vec<TrajectoryLog>,
}

impl<'a> Session<'a> {
    pub fn new(id: u64, ds: &'a Dataset, cfg: ExecConfig) -> Self {
        Session { id, ds, cfg, episode: None, finished: Vec::new() }
    }

    /// Parses one message body and answers it. Errors end the session.
    pub fn handle_text(&mut self, text: &str) -> Result<ServerMessage, ProtocolError> {
        let msg: ClientMessage = serde_json::from_str(text.trim()).map_err(|e| ProtocolError::new(ErrorCode::BadMessage, e.to_string()))?;
        self.handle(msg)
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<ServerMessage, ProtocolError> {
        match msg {
            ClientMessage::Reset { split, index, hand, seed, part } => self.reset(split, index, hand, seed, part),
            ClientMessage::Act { dp, dr, grip, d } => self.act(dp, dr, grip, d),
            ClientMessage::Finish {} => self.finish(),
        }
    }

    fn reset(&mut self, split: Split, index: usize, hand: HandKind, seed: u64, part: Option<usize>) -> Result<ServerMessage, ProtocolError> {
        if self.episode.is_some() {
            return Err(ProtocolError::new(ErrorCode::OutOfOrder, "reset while an episode is live; send finish first"));
        }
        let bad = |m: String| ProtocolError::new(ErrorCode::BadArgument, m);
        let (global, cabinet) = self
            .ds
            .cabinets
            .iter()
            .enumerate()
            .filter(|(_, c)| c.split == split)
            .nth(index)
            .ok_or_else(|| bad(format!("no {} cabinet {index}", split.as_str())))?;
        let closed = cabinet.closed();
        let target = match part {
            Some(p) if closed.part(p).is_some() => p,
            Some(p) => return Err(bad(format!("cabinet has no part {p}"))),
            None => closed.parts[(derive(seed, "target", 0) % closed.parts.len() as u64) as usize].id,
        };
        let instruction = describe_parts(&closed)
            .map_err(|e| bad(e.to_string()))?
            .into_iter()
            .find(|i| i.part_id == target)
            .map(|i| i.text)
            .unwrap_or_default();
        let model = hand_spec(hand);
        let start = initial_hand(&closed, &model, &self.cfg);
        let handle = HandleCuboid::from(&closed.part(target).expect("target exists").handle);
        let grip_target = match search_grasp(&model, &handle, self.cfg.mu) {
            Ok(plan) => squeeze_target(&model, &plan, self.cfg.squeeze),
            Err(_) => {
                let mut d = model.rest.clone();
                for f in 0..model.fingers.len() {
                    set_curl(&model, &mut d, f, 1.0);
                }
                d
            }
        };
        let header = LogHeader {
            format: TRAJ_FORMAT.into(),
            mode: "teleop".into(),
            dataset: Some(DatasetRef { seed: self.ds.master_seed, split, index: global }),
            scene_hash: scene_hash(&closed),
            cabinet_id: closed.id,
            instruction: instruction.clone(),
            target_part: Some(target),
            hand,
            detector: "human".into(),
            seed,
            config: self.cfg.clone(),
            start: start.clone(),
        };
        let pose = place_camera(&closed, derive(seed, "camera", 0));
        let obs = render(&pose, &closed, derive(seed, "recolor", 0));
        let ep = Episode { model, world: WorldState::new(closed, start), log: TrajectoryLog::new(header), trace: Vec::new(), target, grip_target };
        let state = state_of(&ep, Phase::Teleop);
        self.episode = Some(ep);
        Ok(ServerMessage::Obs {
            session: self.id,
            instruction,
            target_part: target,
            width: obs.width(),
            height: obs.width(),
            rgb: B64.encode(obs.png()),
            depth: B64.encode(obs.depth_bytes()),
            camera: obs.camera,
            state,
        })
    }

    fn act(&mut self, dp: [f64; 3], dr: [f64; 3], grip: Option<f64>, d: Option<Vec<f64>>) -> Result<ServerMessage, ProtocolError> {
        let cfg = &self.cfg;
        let ep = self.episode.as_mut().ok_or_else(|| ProtocolError::new(ErrorCode::OutOfOrder, "act before reset"))?;
        let bad = |m: &str| ProtocolError::new(ErrorCode::BadArgument, m);
        if dp.iter().chain(&dr).any(|x| !x.is_finite()) || grip.is_some_and(|g| !g.is_finite()) {
            return Err(bad("non-finite number"));
        }
        let joints = match (d, grip) {
            (Some(d), _) if d.len() != ep.model.dof => return Err(bad(&format!("d needs {} values", ep.model.dof))),
            (Some(d), _) if d.iter().any(|x| !x.is_finite()) => return Err(bad("non-finite number")),
            (Some(d), _) => d,
            (None, Some(g)) => interpolate_joints(&ep.model.rest, &ep.grip_target, g.clamp(0.0, 1.0)).expect("grip target has the model's dof"),
            (None, None) => ep.world.hand.d.clone(),
        };
        let cur = &ep.world.hand;
        let rot = UnitQuaternion::from_scaled_axis(Vector3::from(dr)) * cur.rotation();
        let cmd = HandState::new(cur.p + Vector3::from(dp), rot, joints);
        let next = apply_step(&ep.world, &ep.model, &cmd, true, cfg);
        record_step(&mut ep.log, &mut ep.trace, &next, cmd, Phase::Teleop, true);
        ep.world = next;
        Ok(ServerMessage::State(state_of(ep, Phase::Teleop)))
    }

    fn finish(&mut self) -> Result<ServerMessage, ProtocolError> {
        let mut ep = self.episode.take().ok_or_else(|| ProtocolError::new(ErrorCode::OutOfOrder, "finish before reset"))?;
        let r = close_log(&mut ep.log, std::mem::take(&mut ep.trace), &ep.world, None);
        let log = ep.log.to_jsonl();
        self.finished.push(ep.log);
        Ok(ServerMessage::Result { success: r.success, open_ratio: r.open_ratio, failure: r.failure, steps: r.steps, log })
    }
}

fn state_of(ep: &Episode, phase: Phase) -> StateMessage {
    let ratio = ep.world.cabinet.part(ep.target).map_or(0.0, |p| p.open_ratio());
    StateMessage { t: ep.world.t, hand: ep.world.hand.clone(), joints: ep.world.joint_values(), open_ratio: ratio, attached: ep.world.attached_part(), phase }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{build_dataset_with, DatasetConfig, Quotas, SplitQuota};

    pub(crate) fn tiny() -> Dataset {
        let cfg = DatasetConfig {
            quotas: Quotas { train: SplitQuota { cabinets: 1, drawers: 1, doors: 0 }, test: SplitQuota { cabinets: 2, drawers: 2, doors: 1 } },
            ..DatasetConfig::default()
        };
        build_dataset_with(5, &cfg).unwrap()
    }

    fn reset(hand: &str) -> String {
        format!(r#"{{"type":"reset","split":"test","index":0,"hand":"{hand}","seed":3}}"#)
    }

    #[test]
    fn noop_episode_is_a_clean_failure() {
        let ds = tiny();
        let mut s = Session::new(1, &ds, ExecConfig::default());
        assert!(matches!(s.handle_text(&reset("franka")).unwrap(), ServerMessage::Obs { width: 256, .. }));
        for _ in 0..5 {
            assert!(matches!(s.handle_text(r#"{"type":"act"}"#).unwrap(), ServerMessage::State(_)));
        }
        match s.handle_text(r#"{"type":"finish"}"#).unwrap() {
            ServerMessage::Result { success, open_ratio, failure, steps, .. } => {
                assert!(!success);
                assert_eq!(open_ratio, 0.0);
                assert_ne!(failure, Failure::Timeout);
                assert_eq!(steps, 5);
            }
            m => panic!("{m:?}"),
        }
    }

    #[test]
    fn ordering_and_argument_errors() {
        let ds = tiny();
        let mut s = Session::new(1, &ds, ExecConfig::default());
        assert_eq!(s.handle_text(r#"{"type":"act"}"#).unwrap_err().code, ErrorCode::OutOfOrder);
        assert_eq!(s.handle_text(r#"{"type":"finish"}"#).unwrap_err().code, ErrorCode::OutOfOrder);
        assert_eq!(s.handle_text("{nope").unwrap_err().code, ErrorCode::BadMessage);
        assert_eq!(s.handle_text(r#"{"type":"reset","split":"test","index":9,"hand":"franka","seed":0}"#).unwrap_err().code, ErrorCode::BadArgument);
        s.handle_text(&reset("shadow")).unwrap();
        assert_eq!(s.handle_text(&reset("shadow")).unwrap_err().code, ErrorCode::OutOfOrder);
        assert_eq!(s.handle_text(r#"{"type":"act","d":[0.0]}"#).unwrap_err().code, ErrorCode::BadArgument);
    }

    #[test]
    fn grip_closes_toward_plan() {
        let ds = tiny();
        let mut s = Session::new(1, &ds, ExecConfig::default());
        s.handle_text(&reset("allegro")).unwrap();
        let ServerMessage::State(a) = s.handle_text(r#"{"type":"act","grip":0.5}"#).unwrap() else { panic!() };
        let m = hand_spec(HandKind::Allegro);
        assert_ne!(a.hand.d, m.rest);
    }
}
