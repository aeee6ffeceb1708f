use std::path::Path;

use thiserror::Error;

use crate::bench::Dataset;
use crate::exec::episode::{apply_step, close_log, record_step};
use crate::exec::{read_log, scene_hash, EpisodeResult, LogError, TrajectoryLog, WorldState};
use crate::hands::hand_spec;
use crate::scene::Cabinet;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("log corrupt: {0}")]
    LogCorrupt(#[from] LogError),
    #[error("scene mismatch: {0}")]
    SceneMismatch(String),
    #[error("replay diverged from the log at step {t}")]
    Diverged { t: usize },
}

/// Re-executes a log's commands against its dataset cabinet and checks
/// that every step and the final verdict come out identical.
pub fn replay(log: &TrajectoryLog, ds: &Dataset) -> Result<EpisodeResult, ReplayError> {
    let r = log.header.dataset.ok_or_else(|| ReplayError::SceneMismatch("log names no dataset cabinet".into()))?;
    if r.seed != ds.master_seed {
        return Err(ReplayError::SceneMismatch(format!("log dataset seed {} but dataset seed {}", r.seed, ds.master_seed)));
    }
    let c = ds.cabinets.get(r.index).ok_or_else(|| ReplayError::SceneMismatch(format!("dataset has no cabinet {}", r.index)))?;
    replay_on(log, c)
}

pub fn replay_file(path: &Path, ds: &Dataset) -> Result<EpisodeResult, ReplayError> {
    replay(&read_log(path)?, ds)
}

/// Replay against an explicit cabinet.
pub fn replay_on(log: &TrajectoryLog, cabinet: &Cabinet) -> Result<EpisodeResult, ReplayError> {
    let closed = cabinet.closed();
    let h = &log.header;
    if scene_hash(&closed) != h.scene_hash {
        return Err(ReplayError::SceneMismatch("scene hash differs from the log header".into()));
    }
    let m = hand_spec(h.hand);
    let mut out = TrajectoryLog::new(h.clone());
    let mut trace = Vec::new();
    let mut w = WorldState::new(closed, h.start.clone());
    for s in &log.steps {
        let n = apply_step(&w, &m, &s.cmd, s.try_attach, &h.config);
        record_step(&mut out, &mut trace, &n, s.cmd.clone(), s.phase, s.try_attach);
        if out.steps.last() != Some(s) {
            return Err(ReplayError::Diverged { t: s.t });
        }
        w = n;
    }
    let r = close_log(&mut out, trace, &w, log.abort);
    if log.result.as_ref() != Some(&r) {
        return Err(ReplayError::Diverged { t: w.t });
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{NoiseConfig, OracleDetector};
    use crate::exec::{run_episode_logged, EpisodeSetup, ExecConfig};
    use crate::hands::HandKind;
    use crate::serve::tests::tiny;

    fn golden(ds: &Dataset) -> TrajectoryLog {
        let e = ds.instructions.iter().find(|i| i.split == crate::scene::Split::Test).unwrap();
        let m = hand_spec(HandKind::Franka);
        let det = OracleDetector { noise: NoiseConfig::zero() };
        let cfg = ExecConfig::default();
        let setup = EpisodeSetup {
            cabinet: &ds.cabinets[e.cabinet],
            instruction: &e.text,
            hand: &m,
            detector: &det,
            cfg: &cfg,
            seed: 9,
            dataset: Some(crate::exec::DatasetRef { seed: ds.master_seed, split: e.split, index: e.cabinet }),
        };
        run_episode_logged(&setup).1
    }

    #[test]
    fn golden_log_replays_identically() {
        let ds = tiny();
        let log = golden(&ds);
        assert_eq!(replay(&log, &ds).unwrap(), log.result.clone().unwrap());
        let reparsed = TrajectoryLog::parse(&log.to_jsonl()).unwrap();
        assert_eq!(replay(&reparsed, &ds).unwrap(), log.result.unwrap());
    }

    #[test]
    fn truncated_and_mismatched_logs() {
        let ds = tiny();
        let log = golden(&ds);
        let text = log.to_jsonl();
        let cut: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(TrajectoryLog::parse(&cut).map_err(ReplayError::from), Err(ReplayError::LogCorrupt(_))));
        let mut other = log.clone();
        other.header.dataset.as_mut().unwrap().seed += 1;
        assert!(matches!(replay(&other, &ds), Err(ReplayError::SceneMismatch(_))));
        let mut tampered = log.clone();
        if let Some(s) = tampered.steps.get_mut(3) {
            s.cmd.p.x += 0.01;
            assert!(matches!(replay(&tampered, &ds), Err(ReplayError::Diverged { .. })));
        }
    }
}
