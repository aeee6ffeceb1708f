//! Dataset construction, batch evaluation and metric tables.

mod metrics;
mod run;

pub use metrics::{format_rate, KindKey, MetricsRow, MetricsTable, ReportFormat, CSV_COLUMNS};
pub use run::{grasp_eval, run_benchmark, BenchConfig, BenchRun, EpisodeOutcome};

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::{place_camera, project_bbox, render};
use crate::exec::log::hex;
use crate::instruct::describe_parts;
use crate::rng::{self, derive};
use crate::scene::{generate_cabinet, parse_scene, scene_to_string, Cabinet, GenerateError, GenerationConstraints, PartKind, SceneError, Split};

pub const DATASET_FORMAT: &str = "opend-dataset/1";
/// Upper bound on parts per dataset cabinet.
pub const MAX_PARTS_PER_CABINET: usize = 6;
/// Default jittered renders per training cabinet for image dumps.
pub const DEFAULT_RENDERS_PER_CABINET: usize = 12;
/// Fresh seeds tried per cabinet before giving up.
const CABINET_ATTEMPTS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitQuota {
    pub cabinets: usize,
    pub drawers: usize,
    pub doors: usize,
}

impl SplitQuota {
    pub fn parts(&self) -> usize {
        self.drawers + self.doors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quotas {
    pub train: SplitQuota,
    pub test: SplitQuota,
}

impl Quotas {
    /// 174 cabinets holding 167 drawers and 205 doors.
    pub const STANDARD: Quotas = Quotas {
        train: SplitQuota { cabinets: 135, drawers: 138, doors: 145 },
        test: SplitQuota { cabinets: 39, drawers: 29, doors: 60 },
    };

    pub fn get(&self, s: Split) -> SplitQuota {
        match s {
            Split::Train => self.train,
            Split::Test => self.test,
        }
    }
}

impl Default for Quotas {
    fn default() -> Self {
        Quotas::STANDARD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub quotas: Quotas,
    pub max_parts_per_cabinet: usize,
    /// Generator settings other than kind counts and split.
    pub generator: GenerationConstraints,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { quotas: Quotas::STANDARD, max_parts_per_cabinet: MAX_PARTS_PER_CABINET, generator: GenerationConstraints::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionEntry {
    pub split: Split,
    /// Index into [`Dataset::cabinets`].
    pub cabinet: usize,
    pub part: usize,
    pub kind: PartKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub master_seed: u64,
    pub cabinets: Vec<Cabinet>,
    pub instructions: Vec<InstructionEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub cabinets: usize,
    pub drawers: usize,
    pub doors: usize,
    pub parts: usize,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("quota infeasible: {0}")]
    Quota(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("dataset index: {0}")]
    Index(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Tallies for one split, or both with `None`.
impl Dataset {
    pub fn counts(&self, split: Option<Split>) -> Counts {
        let cabs: Vec<&Cabinet> = self.cabinets.iter().filter(|c| split.is_none_or(|s| c.split == s)).collect();
        let drawers = cabs.iter().map(|c| c.count(PartKind::Drawer)).sum();
        let doors = cabs.iter().map(|c| c.count(PartKind::Door)).sum();
        Counts { cabinets: cabs.len(), drawers, doors, parts: drawers + doors }
    }

    /// SHA-256 over every scene file and instruction, in order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.master_seed.to_le_bytes());
        for c in &self.cabinets {
            h.update(scene_to_string(c).as_bytes());
        }
        for i in &self.instructions {
            h.update(format!("{}\t{}\t{}\t{}\n", i.split.as_str(), i.cabinet, i.part, i.text).as_bytes());
        }
        hex(&h.finalize())
    }

    pub fn instructions_in(&self, split: Option<Split>) -> impl Iterator<Item = (usize, &InstructionEntry)> {
        self.instructions.iter().enumerate().filter(move |(_, i)| split.is_none_or(|s| i.split == s))
    }
}

/// Per-cabinet `(drawers, doors)` meeting a split quota exactly: every
/// cabinet gets one part, the rest are scattered under the per-cabinet cap,
/// then kinds are shuffled and dealt.
fn allocate(q: SplitQuota, cap: usize, r: &mut rng::Rng) -> Result<Vec<(usize, usize)>, DatasetError> {
    let parts = q.parts();
    if q.cabinets == 0 {
        return if parts == 0 { Ok(vec![]) } else { Err(DatasetError::Quota("parts without cabinets".into())) };
    }
    if parts < q.cabinets || parts > q.cabinets * cap {
        return Err(DatasetError::Quota(format!("{parts} parts cannot fill {} cabinets of at most {cap}", q.cabinets)));
    }
    let mut sizes = vec![1usize; q.cabinets];
    for _ in 0..parts - q.cabinets {
        let open: Vec<usize> = (0..q.cabinets).filter(|&i| sizes[i] < cap).collect();
        sizes[open[r.random_range(0..open.len())]] += 1;
    }
    let mut kinds = vec![PartKind::Drawer; q.drawers];
    kinds.extend(std::iter::repeat_n(PartKind::Door, q.doors));
    kinds.shuffle(r);
    let mut out = Vec::with_capacity(q.cabinets);
    let mut it = kinds.into_iter();
    for n in sizes {
        let chunk: Vec<PartKind> = it.by_ref().take(n).collect();
        let d = chunk.iter().filter(|k| **k == PartKind::Drawer).count();
        out.push((d, n - d));
    }
    Ok(out)
}

/// The standard benchmark dataset.
pub fn build_dataset(master_seed: u64) -> Result<Dataset, DatasetError> {
    build_dataset_with(master_seed, &DatasetConfig::default())
}

pub fn build_dataset_with(master_seed: u64, cfg: &DatasetConfig) -> Result<Dataset, DatasetError> {
    let mut cabinets = Vec::new();
    for split in [Split::Train, Split::Test] {
        let mut r = rng::rng(derive(master_seed, &format!("allocate-{}", split.as_str()), 0));
        let plan = allocate(cfg.quotas.get(split), cfg.max_parts_per_cabinet, &mut r)?;
        for (i, (drawers, doors)) in plan.into_iter().enumerate() {
            let cons = GenerationConstraints { kinds: crate::scene::KindMix::Exact { drawers, doors }, split, ..cfg.generator.clone() };
            let tag = format!("cabinet-{}", split.as_str());
            let mut made = None;
            let mut last_err = None;
            for attempt in 0..CABINET_ATTEMPTS {
                match generate_cabinet(derive(master_seed, &tag, (i as u64) * CABINET_ATTEMPTS + attempt), &cons) {
                    Ok(c) => {
                        made = Some(c);
                        break;
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            match made {
                Some(c) => cabinets.push(c),
                None => return Err(last_err.expect("at least one attempt ran").into()),
            }
        }
    }
    let mut instructions = Vec::new();
    for (ci, c) in cabinets.iter().enumerate() {
        for ins in describe_parts(c).map_err(|e| DatasetError::Index(e.to_string()))? {
            instructions.push(InstructionEntry { split: c.split, cabinet: ci, part: ins.part_id, kind: ins.kind, text: ins.text });
        }
    }
    Ok(Dataset { master_seed, cabinets, instructions })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFile {
    format: String,
    master_seed: u64,
    hash: String,
    counts: Counts,
    train: Counts,
    test: Counts,
    scenes: Vec<String>,
    instructions: Vec<InstructionEntry>,
}

fn scene_file(i: usize, c: &Cabinet) -> String {
    format!("scenes/{}_{i:03}.json", c.split.as_str())
}

/// Writes `dataset.json` plus one scene file per cabinet under `scenes/`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir.join("scenes"))?;
    let mut scenes = Vec::new();
    for (i, c) in ds.cabinets.iter().enumerate() {
        let rel = scene_file(i, c);
        fs::write(dir.join(&rel), scene_to_string(c))?;
        scenes.push(rel);
    }
    let index = IndexFile {
        format: DATASET_FORMAT.into(),
        master_seed: ds.master_seed,
        hash: ds.hash(),
        counts: ds.counts(None),
        train: ds.counts(Some(Split::Train)),
        test: ds.counts(Some(Split::Test)),
        scenes,
        instructions: ds.instructions.clone(),
    };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&index).expect("index serializes") + "\n")?;
    Ok(())
}

/// Loads a saved dataset and checks it against the recorded hash.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(dir.join("dataset.json"))?;
    let index: IndexFile = serde_json::from_str(&text).map_err(|e| DatasetError::Index(e.to_string()))?;
    if index.format != DATASET_FORMAT {
        return Err(DatasetError::Index(format!("format `{}`", index.format)));
    }
    let mut cabinets = Vec::new();
    for rel in &index.scenes {
        cabinets.push(parse_scene(&fs::read_to_string(dir.join(rel))?)?);
    }
    let ds = Dataset { master_seed: index.master_seed, cabinets, instructions: index.instructions };
    if ds.hash() != index.hash {
        return Err(DatasetError::Index("content does not match recorded hash".into()));
    }
    Ok(ds)
}

#[derive(Serialize)]
struct ImageLabel {
    image: String,
    cabinet_id: u64,
    boxes: Vec<LabelBox>,
}

#[derive(Serialize)]
struct LabelBox {
    part: usize,
    kind: PartKind,
    instruction: String,
    bbox: [f64; 4],
}

/// Jittered renders of every training cabinet with handle boxes and
/// instructions in `labels.jsonl`. Returns the number of images.
pub fn dump_images(ds: &Dataset, dir: &Path, per_cabinet: usize) -> Result<usize, DatasetError> {
    fs::create_dir_all(dir)?;
    let mut labels = String::new();
    let mut n = 0;
    for (ci, c) in ds.cabinets.iter().enumerate().filter(|(_, c)| c.split == Split::Train) {
        let texts = describe_parts(c).map_err(|e| DatasetError::Index(e.to_string()))?;
        for k in 0..per_cabinet {
            let seed = derive(ds.master_seed, "dump", (ci * per_cabinet + k) as u64);
            let pose = place_camera(c, seed);
            let obs = render(&pose, c, seed);
            let stem = format!("train_{ci:03}_{k:02}");
            obs.save(dir, &stem)?;
            let boxes = c
                .parts
                .iter()
                .zip(&texts)
                .filter_map(|(p, t)| project_bbox(&pose, &p.handle).ok().map(|b| LabelBox { part: p.id, kind: p.kind, instruction: t.text.clone(), bbox: b.to_array() }))
                .collect();
            let label = ImageLabel { image: format!("{stem}.png"), cabinet_id: c.id, boxes };
            labels.push_str(&serde_json::to_string(&label).expect("labels serialize"));
            labels.push('\n');
            n += 1;
        }
    }
    fs::write(dir.join("labels.jsonl"), labels)?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_is_exact_and_capped() {
        let mut r = rng::rng(1);
        for q in [Quotas::STANDARD.train, Quotas::STANDARD.test, SplitQuota { cabinets: 3, drawers: 0, doors: 18 }] {
            let a = allocate(q, 6, &mut r).unwrap();
            assert_eq!(a.len(), q.cabinets);
            assert_eq!(a.iter().map(|x| x.0).sum::<usize>(), q.drawers);
            assert_eq!(a.iter().map(|x| x.1).sum::<usize>(), q.doors);
            assert!(a.iter().all(|(d, o)| (1..=6).contains(&(d + o))));
        }
        assert!(allocate(SplitQuota { cabinets: 2, drawers: 13, doors: 0 }, 6, &mut r).is_err());
        assert!(allocate(SplitQuota { cabinets: 2, drawers: 1, doors: 0 }, 6, &mut r).is_err());
    }

    #[test]
    fn small_dataset_round_trips() {
        let cfg = DatasetConfig {
            quotas: Quotas { train: SplitQuota { cabinets: 4, drawers: 5, doors: 4 }, test: SplitQuota { cabinets: 2, drawers: 2, doors: 3 } },
            ..DatasetConfig::default()
        };
        let ds = build_dataset_with(3, &cfg).unwrap();
        assert_eq!(ds.counts(Some(Split::Train)), Counts { cabinets: 4, drawers: 5, doors: 4, parts: 9 });
        assert_eq!(ds.instructions.len(), 14);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
        let n = dump_images(&ds, &dir.path().join("img"), 2).unwrap();
        assert_eq!(n, 8);
        assert_eq!(fs::read_to_string(dir.path().join("img/labels.jsonl")).unwrap().lines().count(), 8);
    }
}
