use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use super::{
    validate_cabinet, Cabinet, FaceRect, Handle, Joint, JointKind, Part, PartKind, Posture, Split,
    MAX_PARTS,
};
use crate::instruct::{self, LABEL_EPS};
use crate::rng::{self, Rng};

/// Distinct label coordinates must be at least this far apart, so that
/// positions recovered from a depth map fall into the same label buckets.
pub const LABEL_MARGIN: f64 = 3.0 * LABEL_EPS;
const MAX_ATTEMPTS: usize = 100;
const BORDER: f64 = 0.02;
const GAP: f64 = 0.006;
const MIN_FACE_W: f64 = 0.1;
const MIN_FACE_H: f64 = 0.08;
const HANDLE_EDGE: f64 = 0.015;

#[derive(Debug, Clone, PartialEq)]
pub enum KindMix {
    /// Exactly this many parts of each kind.
    Exact { drawers: usize, doors: usize },
    /// Part count uniform in `min..=max`, each part a door with probability
    /// `door_fraction`.
    Random { min_parts: usize, max_parts: usize, door_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layout {
    /// Rows of same-kind parts with per-row column counts.
    Auto,
    /// Fixed `rows × cols` grid; kinds per cell from the kind mix.
    Grid { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConstraints {
    pub layout: Layout,
    pub kinds: KindMix,
    pub max_rows: usize,
    pub max_cols: usize,
    pub body_width: (f64, f64),
    pub body_height: (f64, f64),
    pub body_depth: (f64, f64),
    pub handle_length: (f64, f64),
    pub handle_thickness: (f64, f64),
    pub handle_depth: (f64, f64),
    /// Probability that a handle gets the non-default posture
    /// (drawers default horizontal, doors vertical).
    pub posture_flip_prob: f64,
    /// Revolute limit of doors (rad).
    pub door_limit: f64,
    pub split: Split,
}

impl Default for GenerationConstraints {
    fn default() -> Self {
        GenerationConstraints {
            layout: Layout::Auto,
            kinds: KindMix::Random { min_parts: 1, max_parts: 6, door_fraction: 0.55 },
            max_rows: 5,
            max_cols: 5,
            body_width: (0.4, 1.5),
            body_height: (0.5, 2.0),
            body_depth: (0.35, 0.6),
            handle_length: (0.06, 0.15),
            handle_thickness: (0.01, 0.03),
            handle_depth: (0.02, 0.05),
            posture_flip_prob: 0.2,
            door_limit: PI,
            split: Split::Train,
        }
    }
}

impl GenerationConstraints {
    pub fn exact(drawers: usize, doors: usize) -> Self {
        GenerationConstraints { kinds: KindMix::Exact { drawers, doors }, ..Default::default() }
    }

    pub fn single(kind: PartKind) -> Self {
        match kind {
            PartKind::Drawer => Self::exact(1, 0),
            PartKind::Door => Self::exact(0, 1),
        }
    }

    /// A single part of `kind` with its default handle posture.
    pub fn canonical_single(kind: PartKind) -> Self {
        GenerationConstraints { posture_flip_prob: 0.0, ..Self::single(kind) }
    }

    /// `rows × cols` grid with a random door/drawer mix.
    pub fn grid(rows: usize, cols: usize) -> Self {
        GenerationConstraints {
            layout: Layout::Grid { rows, cols },
            kinds: KindMix::Random { min_parts: rows * cols, max_parts: rows * cols, door_fraction: 0.5 },
            ..Default::default()
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("invalid generation constraints: {0}")]
    Constraints(String),
    #[error("no valid cabinet after {attempts} attempts (seed {seed})")]
    GenerationFailed { seed: u64, attempts: usize },
}

/// Generates a cabinet deterministically from `seed`. The result passes
/// [`validate_cabinet`], yields a valid description set, and keeps distinct
/// label coordinates at least [`LABEL_MARGIN`] apart.
pub fn generate_cabinet(seed: u64, cons: &GenerationConstraints) -> Result<Cabinet, GenerateError> {
    check_constraints(cons)?;
    let mut rng = rng::rng(seed);
    for _ in 0..MAX_ATTEMPTS {
        let Some(rows) = sample_rows(cons, &mut rng) else { continue };
        let Some(cab) = build(seed, cons, &rows, &mut rng) else { continue };
        if validate_cabinet(&cab).is_empty()
            && instruct::describe_parts(&cab).is_ok()
            && label_margin_ok(&cab)
        {
            return Ok(cab);
        }
    }
    Err(GenerateError::GenerationFailed { seed, attempts: MAX_ATTEMPTS })
}

fn check_constraints(c: &GenerationConstraints) -> Result<(), GenerateError> {
    let bad = |m: &str| Err(GenerateError::Constraints(m.to_string()));
    if c.max_rows == 0 || c.max_rows > 5 || c.max_cols == 0 || c.max_cols > 5 {
        return bad("rows and cols must be in 1..=5");
    }
    if let Layout::Grid { rows, cols } = c.layout {
        if rows == 0 || cols == 0 || rows > c.max_rows || cols > c.max_cols {
            return bad("grid exceeds row/col limits");
        }
    }
    let n = match c.kinds {
        KindMix::Exact { drawers, doors } => (drawers + doors, drawers + doors),
        KindMix::Random { min_parts, max_parts, door_fraction } => {
            if !(0.0..=1.0).contains(&door_fraction) {
                return bad("door_fraction outside [0, 1]");
            }
            (min_parts, max_parts)
        }
    };
    if n.0 == 0 || n.0 > n.1 || n.1 > MAX_PARTS {
        return bad("part count must be within 1..=10");
    }
    for (name, (lo, hi)) in [
        ("body_width", c.body_width),
        ("body_height", c.body_height),
        ("body_depth", c.body_depth),
        ("handle_length", c.handle_length),
        ("handle_thickness", c.handle_thickness),
        ("handle_depth", c.handle_depth),
    ] {
        if !(lo > 0.0 && lo <= hi) {
            return bad(&format!("{name} range is empty"));
        }
    }
    if c.handle_thickness.1 >= c.handle_length.0 {
        return bad("handle thickness must stay below handle length");
    }
    Ok(())
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn kind_list(cons: &GenerationConstraints, rng: &mut Rng, n_fixed: Option<usize>) -> Option<Vec<PartKind>> {
    let mut kinds = match cons.kinds {
        KindMix::Exact { drawers, doors } => {
            let mut v = vec![PartKind::Drawer; drawers];
            v.extend(std::iter::repeat_n(PartKind::Door, doors));
            v
        }
        KindMix::Random { min_parts, max_parts, door_fraction } => {
            let n = n_fixed.unwrap_or_else(|| rng.random_range(min_parts..=max_parts));
            (0..n)
                .map(|_| if rng.random_bool(door_fraction) { PartKind::Door } else { PartKind::Drawer })
                .collect()
        }
    };
    if n_fixed.is_some_and(|n| n != kinds.len()) {
        return None;
    }
    kinds.shuffle(rng);
    Some(kinds)
}

/// Rows from top to bottom, each a list of part kinds left to right.
fn sample_rows(cons: &GenerationConstraints, rng: &mut Rng) -> Option<Vec<Vec<PartKind>>> {
    match cons.layout {
        Layout::Grid { rows, cols } => {
            let kinds = kind_list(cons, rng, Some(rows * cols))?;
            Some(kinds.chunks(cols).map(<[PartKind]>::to_vec).collect())
        }
        Layout::Auto => {
            let kinds = kind_list(cons, rng, None)?;
            let drawers = kinds.iter().filter(|k| **k == PartKind::Drawer).count();
            let doors = kinds.len() - drawers;
            let mut drawer_rows = split_rows(drawers, cons.max_cols.min(3), PartKind::Drawer, rng);
            let mut door_rows = split_rows(doors, cons.max_cols.min(4), PartKind::Door, rng);
            let mut rows = Vec::new();
            match rng.random_range(0..10) {
                0..=5 => {
                    rows.append(&mut drawer_rows);
                    rows.append(&mut door_rows);
                }
                6..=7 => {
                    rows.append(&mut door_rows);
                    rows.append(&mut drawer_rows);
                }
                _ => {
                    rows.append(&mut drawer_rows);
                    rows.append(&mut door_rows);
                    rows.shuffle(rng);
                }
            }
            (rows.len() <= cons.max_rows).then_some(rows)
        }
    }
}

fn split_rows(mut n: usize, max_per_row: usize, kind: PartKind, rng: &mut Rng) -> Vec<Vec<PartKind>> {
    // equal-width rows keep the column positions shared
    let mut rows = Vec::new();
    if n == 0 {
        return rows;
    }
    let k = rng.random_range(1..=n.min(max_per_row));
    while n > 0 {
        let m = k.min(n);
        rows.push(vec![kind; m]);
        n -= m;
    }
    rows
}

fn build(seed: u64, cons: &GenerationConstraints, rows: &[Vec<PartKind>], rng: &mut Rng) -> Option<Cabinet> {
    let w = uniform(rng, cons.body_width);
    let h = uniform(rng, cons.body_height);
    let depth = uniform(rng, cons.body_depth);
    let front_x = 0.0;
    let weights: Vec<f64> = rows
        .iter()
        .map(|r| {
            if r.contains(&PartKind::Door) {
                rng.random_range(2.0..3.0)
            } else {
                rng.random_range(0.8..1.2)
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let avail_h = h - 2.0 * BORDER;
    let avail_w = w - 2.0 * BORDER;
    let edge_margin = rng.random_range(0.02..0.04);
    let hardware = Hardware {
        thickness: uniform(rng, cons.handle_thickness),
        depth: uniform(rng, cons.handle_depth),
        drawer_length: uniform(rng, cons.handle_length),
        door_length: uniform(rng, cons.handle_length),
    };
    let base_gray: u8 = rng.random_range(150..=220);
    // hinge side shared by doors at the same column position of equal-width rows
    let hinge_left: Vec<Vec<bool>> =
        (1..=5).map(|n| (0..n).map(|_| rng.random_bool(0.5)).collect()).collect();

    let mut parts = Vec::new();
    let mut z_top = h - BORDER;
    for (row, weight) in rows.iter().zip(&weights) {
        let rh = avail_h * weight / total;
        let cw = avail_w / row.len() as f64;
        let z0 = z_top - rh;
        for (col, &kind) in row.iter().enumerate() {
            let face = FaceRect {
                y: -w / 2.0 + BORDER + col as f64 * cw + GAP / 2.0,
                z: z0 + GAP / 2.0,
                w: cw - GAP,
                h: rh - GAP,
            };
            if face.w < MIN_FACE_W || face.h < MIN_FACE_H {
                return None;
            }
            let left = hinge_left[row.len() - 1][col];
            let flip = rng.random_bool(cons.posture_flip_prob);
            let part = make_part(parts.len(), kind, face, left, flip, edge_margin, &hardware, base_gray, depth, front_x, cons, rng)?;
            parts.push(part);
        }
        z_top = z0;
    }
    Some(Cabinet { id: seed, body_dims: [w, h, depth], front_x, parts, split: cons.split })
}

/// Handle dimensions shared by every part of one cabinet.
struct Hardware {
    thickness: f64,
    depth: f64,
    drawer_length: f64,
    door_length: f64,
}

#[allow(clippy::too_many_arguments)]
fn make_part(
    id: usize,
    kind: PartKind,
    face: FaceRect,
    hinge_left: bool,
    flip: bool,
    edge_margin: f64,
    hw: &Hardware,
    gray: u8,
    body_depth: f64,
    front_x: f64,
    cons: &GenerationConstraints,
    rng: &mut Rng,
) -> Option<Part> {
    let default = match kind {
        PartKind::Drawer => Posture::Horizontal,
        PartKind::Door => Posture::Vertical,
    };
    let posture = match (default, flip) {
        (p, false) => p,
        (Posture::Horizontal, true) => Posture::Vertical,
        (Posture::Vertical, true) => Posture::Horizontal,
    };
    let thickness = hw.thickness;
    let hdepth = hw.depth;
    let (fy, fz) = face.center();
    let along = match posture {
        Posture::Horizontal => face.w,
        Posture::Vertical => face.h,
    };
    let mut length = match kind {
        PartKind::Drawer => hw.drawer_length,
        PartKind::Door => hw.door_length,
    };
    let mut room = along - 2.0 * HANDLE_EDGE;
    if kind == PartKind::Door && posture == Posture::Horizontal {
        room = face.w - edge_margin - HANDLE_EDGE;
    }
    length = length.min(room);
    if length < cons.handle_length.0 {
        return None;
    }
    let half_w = match posture {
        Posture::Horizontal => length / 2.0,
        Posture::Vertical => thickness / 2.0,
    };
    let (hy, joint) = match kind {
        PartKind::Drawer => (
            fy,
            Joint {
                kind: JointKind::Prismatic,
                axis: -Vector3::x(),
                origin: Point3::new(front_x, fy, fz),
                limit: [0.0, body_depth - 0.03],
                value: 0.0,
            },
        ),
        PartKind::Door => {
            let (hinge_y, free_y, sign, axis) = if hinge_left {
                (face.y, face.y + face.w, -1.0, Vector3::z())
            } else {
                (face.y + face.w, face.y, 1.0, -Vector3::z())
            };
            (
                free_y + sign * (edge_margin + half_w),
                Joint {
                    kind: JointKind::Revolute,
                    axis,
                    origin: Point3::new(front_x, hinge_y, fz),
                    limit: [0.0, cons.door_limit],
                    value: 0.0,
                },
            )
        }
    };
    let center = Point3::new(front_x - hdepth / 2.0, hy, fz);
    let shade = gray.saturating_sub(rng.random_range(0..30));
    Some(Part {
        id,
        kind,
        joint,
        handle: Handle {
            center,
            posture,
            length,
            thickness,
            depth: hdepth,
            color: [shade, shade, shade.saturating_add(10)],
        },
        face_rect: face,
        anchor: center,
    })
}

/// Distinct anchor coordinates (per axis) are either identical or at least
/// [`LABEL_MARGIN`] apart.
pub(crate) fn label_margin_ok(c: &Cabinet) -> bool {
    let ok = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.windows(2).all(|p| {
            let d = p[1] - p[0];
            !(1e-9..LABEL_MARGIN).contains(&d)
        })
    };
    ok(c.parts.iter().map(|p| p.anchor.y).collect()) && ok(c.parts.iter().map(|p| p.anchor.z).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::scene_to_string;

    #[test]
    fn single_drawer() {
        let c = generate_cabinet(1, &GenerationConstraints::single(PartKind::Drawer)).unwrap();
        assert_eq!(c.parts.len(), 1);
        let p = &c.parts[0];
        assert_eq!(p.kind, PartKind::Drawer);
        assert_eq!(p.joint.kind, JointKind::Prismatic);
        assert_eq!(Some(p.joint.max()), p.drawer_length());
        assert!((p.joint.max() - (c.depth() - 0.03)).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let cons = GenerationConstraints::default();
        let a = generate_cabinet(42, &cons).unwrap();
        let b = generate_cabinet(42, &cons).unwrap();
        assert_eq!(a, b);
        assert_eq!(scene_to_string(&a), scene_to_string(&b));
    }

    #[test]
    fn grid_3x2_mixed() {
        let c = generate_cabinet(2, &GenerationConstraints::grid(3, 2)).unwrap();
        assert_eq!(c.parts.len(), 6);
        assert!(validate_cabinet(&c).is_empty());
        let d = instruct::describe_parts(&c).unwrap();
        let mut texts: Vec<_> = d.iter().map(|i| i.text.clone()).collect();
        texts.sort();
        texts.dedup();
        assert_eq!(texts.len(), 6);
    }

    #[test]
    fn exact_counts_are_honored() {
        for (dr, dc) in [(0, 1), (3, 0), (2, 3), (1, 5), (4, 2)] {
            for seed in 0..5 {
                let c = generate_cabinet(seed, &GenerationConstraints::exact(dr, dc)).unwrap();
                assert_eq!(c.count(PartKind::Drawer), dr);
                assert_eq!(c.count(PartKind::Door), dc);
            }
        }
    }

    #[test]
    fn bad_constraints_rejected() {
        let mut c = GenerationConstraints::grid(6, 1);
        c.max_rows = 5;
        assert!(matches!(generate_cabinet(0, &c), Err(GenerateError::Constraints(_))));
        assert!(matches!(
            generate_cabinet(0, &GenerationConstraints::exact(0, 0)),
            Err(GenerateError::Constraints(_))
        ));
    }

    #[test]
    fn canonical_single_keeps_default_posture() {
        for seed in 0..50 {
            let c = generate_cabinet(seed, &GenerationConstraints::canonical_single(PartKind::Door)).unwrap();
            assert_eq!(c.parts[0].handle.posture, Posture::Vertical);
        }
    }

    #[test]
    fn random_mix_always_valid() {
        let cons = GenerationConstraints::default();
        for seed in 0..300 {
            let c = generate_cabinet(seed, &cons).unwrap();
            assert!(validate_cabinet(&c).is_empty(), "seed {seed}");
            assert!(label_margin_ok(&c));
        }
    }
}
