//! Handle solvers: (observation, instruction) to a target handle box.

mod plugin;

pub use plugin::{external_detect, serve_plugin_connection, PluginDetector, PluginReply, PluginRequest, DEFAULT_TIMEOUT, MAX_FRAME};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{bbox_center_posture, project_bbox, recover_world, refine_bbox, BBox, CameraPose, Observation, REFINE_MARGIN, RESOLUTION};
use crate::instruct::{describe_targets, ground_instruction, normalize, InstructError, Target};
use crate::rng;
use crate::scene::{Cabinet, PartKind, Posture};

/// Detections at or below this score are discarded before matching.
pub const SCORE_THRESHOLD: f64 = 0.8;
/// Score lost per pixel of mean edge jitter on true detections.
const JITTER_PENALTY: f64 = 0.02;
/// Side of the fallback box around an affordance peak.
pub const AFFORDANCE_BOX: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("no handle detected")]
    NoDetection,
    #[error("no detection matches `{0}`")]
    NoMatch(String),
    #[error("detected layout cannot be described: {0}")]
    InvalidLayout(String),
    #[error("affordance map has no positive entry")]
    EmptyMap,
    #[error("plugin protocol error: {0}")]
    ProtocolError(String),
    #[error("plugin timed out")]
    Timeout,
    #[error("invalid bbox {0:?}")]
    InvalidBBox([f64; 4]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-edge Gaussian jitter (px).
    pub sigma_px: f64,
    /// Probability each true handle is missed.
    pub p_miss: f64,
    /// Expected number of false boxes per image.
    pub p_fp: f64,
}

impl NoiseConfig {
    pub fn zero() -> Self {
        NoiseConfig::default()
    }
}

fn jitter_box(b: BBox, sigma: f64, r: &mut rng::Rng) -> (BBox, f64) {
    if sigma <= 0.0 {
        return (b, 0.0);
    }
    let n = Normal::new(0.0, sigma).expect("sigma is positive");
    let e: [f64; 4] = std::array::from_fn(|_| n.sample(r));
    let mean = e.iter().map(|v| v.abs()).sum::<f64>() / 4.0;
    let res = RESOLUTION as f64;
    let a = b.to_array();
    let (mut y0, mut z0, mut y1, mut z1) = (a[0] + e[0], a[1] + e[1], a[2] + e[2], a[3] + e[3]);
    if y0 > y1 {
        std::mem::swap(&mut y0, &mut y1);
    }
    if z0 > z1 {
        std::mem::swap(&mut z0, &mut z1);
    }
    // keep at least a pixel of extent inside the frame
    let fix = |lo: f64, hi: f64| {
        let lo = lo.clamp(0.0, res - 1.0);
        (lo, hi.clamp(lo + 1.0, res))
    };
    let (y0, y1) = fix(y0, y1);
    let (z0, z1) = fix(z0, z1);
    (BBox::new(y0, z0, y1, z1), mean)
}

/// Ground-truth handle boxes with optional jitter, misses and false boxes,
/// deterministic in `seed`. True boxes come first in part order.
pub fn oracle_detect(c: &Cabinet, pose: &CameraPose, noise: &NoiseConfig, seed: u64) -> Vec<Detection> {
    let mut r = rng::rng(seed);
    let mut out = Vec::new();
    for p in &c.parts {
        let Ok(b) = project_bbox(pose, &p.handle) else { continue };
        let missed = noise.p_miss > 0.0 && r.random_bool(noise.p_miss.min(1.0));
        let (b, mean) = jitter_box(b, noise.sigma_px, &mut r);
        if !missed {
            out.push(Detection { bbox: b, score: (1.0 - JITTER_PENALTY * mean).clamp(0.0, 1.0) });
        }
    }
    let whole = noise.p_fp.max(0.0).floor() as usize;
    let extra = noise.p_fp.fract() > 0.0 && r.random_bool(noise.p_fp.fract());
    let res = RESOLUTION as f64;
    for _ in 0..whole + extra as usize {
        let w = r.random_range(4.0..30.0);
        let h = r.random_range(4.0..30.0);
        let y0 = r.random_range(0.0..res - w);
        let z0 = r.random_range(0.0..res - h);
        out.push(Detection { bbox: BBox::new(y0, z0, y0 + w, z0 + h), score: r.random_range(0.0..0.6) });
    }
    out
}

/// Detections scoring strictly above `threshold`.
pub fn filter_scores(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.score > threshold).copied().collect()
}

/// Part kind implied by a handle posture.
pub fn kind_from_posture(p: Posture) -> PartKind {
    match p {
        Posture::Vertical => PartKind::Door,
        Posture::Horizontal => PartKind::Drawer,
    }
}

/// Describes the confident detections as if they were cabinet parts and
/// returns the box whose description equals `instruction`.
pub fn match_language(dets: &[Detection], instruction: &str, obs: &Observation) -> Result<BBox, DetectError> {
    let kept = filter_scores(dets, SCORE_THRESHOLD);
    let mut boxes = Vec::new();
    let mut targets: Vec<Target> = Vec::new();
    for d in &kept {
        let snapped = refine_bbox(&d.bbox, obs, REFINE_MARGIN);
        let Ok(anchor) = recover_world(&snapped, obs) else { continue };
        let (_, posture) = bbox_center_posture(&snapped);
        targets.push((boxes.len(), anchor.y, anchor.z, kind_from_posture(posture)));
        boxes.push(d.bbox);
    }
    if targets.is_empty() {
        return Err(DetectError::NoMatch(instruction.to_string()));
    }
    let described = describe_targets(&targets).map_err(|e| DetectError::InvalidLayout(e.to_string()))?;
    let want = normalize(instruction);
    described
        .iter()
        .find(|i| normalize(&i.text) == want)
        .map(|i| boxes[i.part_id])
        .ok_or_else(|| DetectError::NoMatch(instruction.to_string()))
}

/// Dense per-pixel grasp scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceMap {
    pub width: usize,
    pub data: Vec<f32>,
}

impl AffordanceMap {
    pub fn zeros() -> Self {
        AffordanceMap { width: RESOLUTION, data: vec![0.0; RESOLUTION * RESOLUTION] }
    }

    /// Isotropic blob peaking at 1 on pixel center `(u, v)`.
    pub fn gaussian(u: f64, v: f64, sigma: f64) -> Self {
        let mut m = AffordanceMap::zeros();
        for j in 0..m.width {
            for i in 0..m.width {
                let du = i as f64 + 0.5 - u;
                let dv = j as f64 + 0.5 - v;
                m.data[j * m.width + i] = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp() as f32;
            }
        }
        m
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[j * self.width + i] = v;
    }

    /// First maximal pixel in row-major order, if any entry is positive.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f32)> = None;
        for (k, &v) in self.data.iter().enumerate() {
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        best.map(|(k, _)| (k % self.width, k / self.width))
    }
}

/// Box of the detection containing the affordance peak, else a
/// [`AFFORDANCE_BOX`]-pixel square around it.
pub fn ground_affordance(map: &AffordanceMap, dets: &[Detection]) -> Result<BBox, DetectError> {
    let (i, j) = map.argmax().ok_or(DetectError::EmptyMap)?;
    let (u, v) = (i as f64 + 0.5, j as f64 + 0.5);
    if let Some(d) = dets.iter().find(|d| d.bbox.contains(u, v)) {
        return Ok(d.bbox);
    }
    let half = (AFFORDANCE_BOX / 2) as f64;
    let res = map.width as f64;
    Ok(BBox::new((i as f64 - half).max(0.0), (j as f64 - half).max(0.0), (i as f64 + half + 1.0).min(res), (j as f64 + half + 1.0).min(res)))
}

/// What a detector may look at. `cabinet` is ground truth, for oracles.
pub struct SceneView<'a> {
    pub cabinet: &'a Cabinet,
    pub obs: &'a Observation,
}

pub trait Detector: Send + Sync {
    fn name(&self) -> String;
    fn locate(&self, view: &SceneView<'_>, instruction: &str, seed: u64) -> Result<BBox, DetectError>;
}

/// Projected ground truth (with noise) followed by language matching.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OracleDetector {
    pub noise: NoiseConfig,
}

impl Detector for OracleDetector {
    fn name(&self) -> String {
        let n = &self.noise;
        if *n == NoiseConfig::zero() {
            "oracle".into()
        } else {
            format!("oracle:sigma={},miss={},fp={}", n.sigma_px, n.p_miss, n.p_fp)
        }
    }

    fn locate(&self, view: &SceneView<'_>, instruction: &str, seed: u64) -> Result<BBox, DetectError> {
        let dets = oracle_detect(view.cabinet, &view.obs.camera, &self.noise, seed);
        if dets.is_empty() {
            return Err(DetectError::NoDetection);
        }
        match_language(&dets, instruction, view.obs)
    }
}

/// Affordance peak on the instructed part, grounded against noisy boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffordanceDetector {
    pub noise: NoiseConfig,
    pub sigma_px: f64,
}

impl Default for AffordanceDetector {
    fn default() -> Self {
        AffordanceDetector { noise: NoiseConfig::zero(), sigma_px: 4.0 }
    }
}

impl Detector for AffordanceDetector {
    fn name(&self) -> String {
        "affordance".into()
    }

    fn locate(&self, view: &SceneView<'_>, instruction: &str, seed: u64) -> Result<BBox, DetectError> {
        let target = ground_instruction(instruction, view.cabinet).map_err(|e| match e {
            InstructError::NoMatch(t) => DetectError::NoMatch(t),
            other => DetectError::InvalidLayout(other.to_string()),
        })?;
        let part = view.cabinet.part(target).ok_or_else(|| DetectError::NoMatch(instruction.into()))?;
        let b = project_bbox(&view.obs.camera, &part.handle).map_err(|_| DetectError::NoDetection)?;
        let ((u, v), _) = bbox_center_posture(&b);
        let map = AffordanceMap::gaussian(u, v, self.sigma_px);
        let dets = filter_scores(&oracle_detect(view.cabinet, &view.obs.camera, &self.noise, seed), SCORE_THRESHOLD);
        ground_affordance(&map, &dets)
    }
}

/// Always returns the same box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedDetector(pub BBox);

impl Detector for FixedDetector {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn locate(&self, _: &SceneView<'_>, _: &str, _: u64) -> Result<BBox, DetectError> {
        Ok(self.0)
    }
}

/// Never finds anything.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MissDetector;

impl Detector for MissDetector {
    fn name(&self) -> String {
        "miss".into()
    }

    fn locate(&self, _: &SceneView<'_>, _: &str, _: u64) -> Result<BBox, DetectError> {
        Err(DetectError::NoDetection)
    }
}

/// Parses `oracle`, `oracle:sigma=2,miss=0.3,fp=1`, `affordance`, `miss`
/// or `plugin:HOST:PORT`.
pub fn parse_detector(spec: &str) -> Result<Box<dyn Detector>, String> {
    let spec = spec.trim();
    if let Some(addr) = spec.strip_prefix("plugin:") {
        return Ok(Box::new(PluginDetector::new(addr)));
    }
    let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
    let mut noise = NoiseConfig::zero();
    for kv in args.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got `{kv}`"))?;
        let v: f64 = v.parse().map_err(|_| format!("bad number `{v}`"))?;
        match k {
            "sigma" => noise.sigma_px = v,
            "miss" => noise.p_miss = v,
            "fp" => noise.p_fp = v,
            _ => return Err(format!("unknown detector option `{k}`")),
        }
    }
    match name {
        "oracle" => Ok(Box::new(OracleDetector { noise })),
        "affordance" => Ok(Box::new(AffordanceDetector { noise, ..AffordanceDetector::default() })),
        "miss" => Ok(Box::new(MissDetector)),
        _ => Err(format!("unknown detector `{name}`")),
    }
}
