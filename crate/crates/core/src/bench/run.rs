use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, MetricsTable, ReportFormat};
use crate::detect::Detector;
use crate::exec::{run_episode_logged, run_grasp_episode, write_log, DatasetRef, EpisodeResult, EpisodeSetup, ExecConfig, Failure, TrajectoryLog};
use crate::hands::{hand_spec, HandKind, HandModel};
use crate::rng::derive;
use crate::scene::{PartKind, Split};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub hands: Vec<HandKind>,
    /// Restrict to one split; `None` runs every instruction.
    pub split: Option<Split>,
    /// Worker threads; results do not depend on this.
    pub jobs: usize,
    /// Only the first `n` instructions of the selection.
    pub limit: Option<usize>,
    pub exec: ExecConfig,
    /// Directory for per-episode trajectory logs.
    pub log_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { hands: vec![HandKind::Franka], split: Some(Split::Test), jobs: 1, limit: None, exec: ExecConfig::default(), log_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Index into [`Dataset::instructions`].
    pub instruction: usize,
    pub hand: HandKind,
    pub cabinet: usize,
    pub part: usize,
    pub kind: PartKind,
    pub split: Split,
    pub success: bool,
    pub open_ratio: f64,
    pub failure: Failure,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub detector: String,
    pub dataset_hash: String,
    pub outcomes: Vec<EpisodeOutcome>,
    pub table: MetricsTable,
}

impl BenchRun {
    /// Writes `run.json`, `metrics.csv` and `metrics.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("run.json"), serde_json::to_string_pretty(self).expect("run serializes") + "\n")?;
        fs::write(dir.join("metrics.csv"), self.table.report(ReportFormat::Csv))?;
        fs::write(dir.join("metrics.txt"), self.table.report(ReportFormat::Text))
    }

    pub fn load(dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(dir.join("run.json"))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

fn log_name(hand: HandKind, instruction: usize) -> String {
    format!("{}_{instruction:04}.traj.jsonl", hand.as_str())
}

struct Work {
    instruction: usize,
    hand: usize,
}

fn work_items(ds: &Dataset, cfg: &BenchConfig) -> Vec<Work> {
    let selected: Vec<usize> = ds.instructions_in(cfg.split).map(|(i, _)| i).take(cfg.limit.unwrap_or(usize::MAX)).collect();
    selected.iter().flat_map(|&i| (0..cfg.hands.len()).map(move |h| Work { instruction: i, hand: h })).collect()
}

fn execute<F>(ds: &Dataset, cfg: &BenchConfig, detector: &str, episode: F) -> io::Result<BenchRun>
where
    F: Fn(&Work, &HandModel, u64, DatasetRef) -> (EpisodeResult, TrajectoryLog) + Sync,
{
    if let Some(dir) = &cfg.log_dir {
        fs::create_dir_all(dir)?;
    }
    let models: Vec<HandModel> = cfg.hands.iter().map(|k| hand_spec(*k)).collect();
    let items = work_items(ds, cfg);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs.max(1)).build().map_err(io::Error::other)?;
    let results: Vec<io::Result<EpisodeOutcome>> = pool.install(|| {
        items
            .par_iter()
            .map(|w| {
                let e = &ds.instructions[w.instruction];
                let seed = derive(ds.master_seed, "episode", w.instruction as u64);
                let dref = DatasetRef { seed: ds.master_seed, split: e.split, index: e.cabinet };
                let (res, log) = episode(w, &models[w.hand], seed, dref);
                if let Some(dir) = &cfg.log_dir {
                    write_log(&dir.join(log_name(cfg.hands[w.hand], w.instruction)), &log)?;
                }
                Ok(EpisodeOutcome {
                    instruction: w.instruction,
                    hand: cfg.hands[w.hand],
                    cabinet: e.cabinet,
                    part: e.part,
                    kind: e.kind,
                    split: e.split,
                    success: res.success,
                    open_ratio: res.open_ratio,
                    failure: res.failure,
                    steps: res.steps,
                    seed,
                })
            })
            .collect()
    });
    let outcomes = results.into_iter().collect::<io::Result<Vec<_>>>()?;
    let table = MetricsTable::from_records(outcomes.iter().map(|o| (o.hand.as_str(), detector, o.split, o.kind, o.success, o.open_ratio, o.failure)));
    Ok(BenchRun { detector: detector.into(), dataset_hash: ds.hash(), outcomes, table })
}

/// One planner episode per selected `(instruction, hand)`.
pub fn run_benchmark(ds: &Dataset, detector: &dyn Detector, cfg: &BenchConfig) -> io::Result<BenchRun> {
    let name = detector.name();
    execute(ds, cfg, &name, |w, m, seed, dref| {
        let e = &ds.instructions[w.instruction];
        let setup = EpisodeSetup {
            cabinet: &ds.cabinets[e.cabinet],
            instruction: &e.text,
            hand: m,
            detector,
            cfg: &cfg.exec,
            seed,
            dataset: Some(dref),
        };
        run_episode_logged(&setup)
    })
}

/// Grasp-and-pull from the ground-truth pregrasp; no detection.
pub fn grasp_eval(ds: &Dataset, cfg: &BenchConfig) -> io::Result<BenchRun> {
    execute(ds, cfg, "ground-truth", |w, m, _, dref| {
        let e = &ds.instructions[w.instruction];
        run_grasp_episode(&ds.cabinets[e.cabinet], e.part, m, &cfg.exec, Some(dref))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{build_dataset_with, DatasetConfig, Quotas, SplitQuota};
    use crate::detect::{MissDetector, NoiseConfig, OracleDetector};

    fn small() -> Dataset {
        let cfg = DatasetConfig {
            quotas: Quotas { train: SplitQuota { cabinets: 1, drawers: 1, doors: 0 }, test: SplitQuota { cabinets: 5, drawers: 6, doors: 4 } },
            ..DatasetConfig::default()
        };
        build_dataset_with(11, &cfg).unwrap()
    }

    #[test]
    fn smoke_subset_counts_episodes() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let cfg = BenchConfig { limit: Some(10), log_dir: Some(dir.path().into()), ..BenchConfig::default() };
        let run = run_benchmark(&ds, &OracleDetector { noise: NoiseConfig::zero() }, &cfg).unwrap();
        assert_eq!(run.outcomes.len(), 10);
        assert_eq!(run.table.row("franka", "oracle", Split::Test, super::super::metrics::KindKey::Overall).unwrap().episodes, 10);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 10);
    }

    #[test]
    fn miss_detector_fails_everything() {
        let ds = small();
        let run = run_benchmark(&ds, &MissDetector, &BenchConfig::default()).unwrap();
        assert!(run.outcomes.iter().all(|o| !o.success && o.failure == Failure::NoDetection));
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let ds = small();
        let det = OracleDetector { noise: NoiseConfig::zero() };
        let base = BenchConfig { hands: vec![HandKind::Franka, HandKind::Shadow], ..BenchConfig::default() };
        let a = run_benchmark(&ds, &det, &base).unwrap();
        let b = run_benchmark(&ds, &det, &BenchConfig { jobs: 4, ..base }).unwrap();
        assert_eq!(a, b);
    }
}
