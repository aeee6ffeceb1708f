//! Spatial referring expressions for cabinet parts.
//!
//! Parts are labeled independently on the horizontal (`y`) and vertical (`z`)
//! axes. Coordinates are clustered (consecutive sorted values closer than
//! [`LABEL_EPS`] share a cluster) and the `k` clusters get labels in
//! ascending order from a fixed `k`-prefix scheme:
//!
//! | k | horizontal                               |
//! |---|------------------------------------------|
//! | 1 | (none)                                   |
//! | 2 | left, right                              |
//! | 3 | left, middle, right                      |
//! | 4 | left, second left, second right, right   |
//! | 5 | left, second left, middle, second right, right |
//!
//! The vertical family is bottom … top with ascending `z`. More than five
//! clusters on either axis, or two parts sharing `(vertical, horizontal,
//! kind)`, make the cabinet indescribable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Cabinet, PartKind};

/// Coordinates closer than this (m) share a label.
pub const LABEL_EPS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Left,
    SecondLeft,
    Middle,
    SecondRight,
    Right,
    Top,
    SecondTop,
    SecondBottom,
    Bottom,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Left => "left",
            Label::SecondLeft => "second left",
            Label::Middle => "middle",
            Label::SecondRight => "second right",
            Label::Right => "right",
            Label::Top => "top",
            Label::SecondTop => "second top",
            Label::SecondBottom => "second bottom",
            Label::Bottom => "bottom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    First,
    Second,
    Mid,
    SecondLast,
    Last,
}

fn slots(k: usize) -> &'static [Slot] {
    use Slot::*;
    match k {
        2 => &[First, Last],
        3 => &[First, Mid, Last],
        4 => &[First, Second, SecondLast, Last],
        5 => &[First, Second, Mid, SecondLast, Last],
        _ => &[],
    }
}

fn label(axis: Axis, s: Slot) -> Label {
    match (axis, s) {
        (Axis::Horizontal, Slot::First) => Label::Left,
        (Axis::Horizontal, Slot::Second) => Label::SecondLeft,
        (Axis::Horizontal, Slot::SecondLast) => Label::SecondRight,
        (Axis::Horizontal, Slot::Last) => Label::Right,
        (Axis::Vertical, Slot::First) => Label::Bottom,
        (Axis::Vertical, Slot::Second) => Label::SecondBottom,
        (Axis::Vertical, Slot::SecondLast) => Label::SecondTop,
        (Axis::Vertical, Slot::Last) => Label::Top,
        (_, Slot::Mid) => Label::Middle,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstructError {
    #[error("{count} distinct {axis:?} positions exceed the five available labels")]
    TooManyPositions { axis: Axis, count: usize },
    #[error("parts {a} and {b} share the description {text:?}")]
    DuplicateDescription { a: usize, b: usize, text: String },
    #[error("no part matches {0:?}")]
    NoMatch(String),
}

/// Cluster index of each coordinate and the number of clusters.
pub fn cluster(coords: &[f64]) -> (Vec<usize>, usize) {
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&a, &b| coords[a].total_cmp(&coords[b]));
    let mut ids = vec![0; coords.len()];
    let mut k = 0;
    for (n, &i) in order.iter().enumerate() {
        if n > 0 && coords[i] - coords[order[n - 1]] > LABEL_EPS {
            k += 1;
        }
        ids[i] = k;
    }
    (ids, if coords.is_empty() { 0 } else { k + 1 })
}

/// Labels for each coordinate along `axis`; `None` when every coordinate
/// falls in one cluster.
pub fn axis_labels(coords: &[f64], axis: Axis) -> Result<Vec<Option<Label>>, InstructError> {
    let (ids, k) = cluster(coords);
    if k > 5 {
        return Err(InstructError::TooManyPositions { axis, count: k });
    }
    let table = slots(k);
    Ok(ids.iter().map(|&i| table.get(i).map(|&s| label(axis, s))).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub part_id: usize,
    pub v_label: Option<Label>,
    pub h_label: Option<Label>,
    pub kind: PartKind,
    pub text: String,
}

/// `"open the [vertical] [horizontal] <kind>"` with absent labels omitted.
pub fn render_instruction(v: Option<Label>, h: Option<Label>, kind: PartKind) -> String {
    let mut words = vec!["open", "the"];
    words.extend(v.map(Label::as_str));
    words.extend(h.map(Label::as_str));
    words.push(kind.as_str());
    normalize(&words.join(" "))
}

/// Lowercases and collapses whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// A labeled point: `(id, y, z, kind)`.
pub type Target = (usize, f64, f64, PartKind);

/// Describes an arbitrary set of positioned targets.
pub fn describe_targets(targets: &[Target]) -> Result<Vec<Instruction>, InstructError> {
    let ys: Vec<f64> = targets.iter().map(|t| t.1).collect();
    let zs: Vec<f64> = targets.iter().map(|t| t.2).collect();
    let h = axis_labels(&ys, Axis::Horizontal)?;
    let v = axis_labels(&zs, Axis::Vertical)?;
    let out: Vec<Instruction> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| Instruction {
            part_id: t.0,
            v_label: v[i],
            h_label: h[i],
            kind: t.3,
            text: render_instruction(v[i], h[i], t.3),
        })
        .collect();
    for (i, a) in out.iter().enumerate() {
        if let Some(b) = out[..i].iter().find(|b| b.text == a.text) {
            return Err(InstructError::DuplicateDescription { a: b.part_id, b: a.part_id, text: a.text.clone() });
        }
    }
    Ok(out)
}

/// One instruction per part, in part order.
pub fn describe_parts(c: &Cabinet) -> Result<Vec<Instruction>, InstructError> {
    let targets: Vec<Target> = c.parts.iter().map(|p| (p.id, p.anchor.y, p.anchor.z, p.kind)).collect();
    describe_targets(&targets)
}

/// Part whose instruction equals `text` after normalization.
pub fn ground_instruction(text: &str, c: &Cabinet) -> Result<usize, InstructError> {
    let want = normalize(text);
    describe_parts(c)?
        .into_iter()
        .find(|i| i.text == want)
        .map(|i| i.part_id)
        .ok_or(InstructError::NoMatch(want))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{
        generate_cabinet, Cabinet, FaceRect, GenerationConstraints, Handle, Joint, JointKind, Part, Posture, Split,
    };
    use nalgebra::{Point3, Vector3};
    use proptest::prelude::*;

    /// Independent labeler: sort distinct values and index into the table.
    fn brute_labels(coords: &[f64], names: [&str; 5]) -> Vec<Option<String>> {
        let mut distinct: Vec<f64> = coords.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let k = distinct.len();
        let pick: Vec<usize> = match k {
            1 => vec![],
            2 => vec![0, 4],
            3 => vec![0, 2, 4],
            4 => vec![0, 1, 3, 4],
            _ => vec![0, 1, 2, 3, 4],
        };
        coords
            .iter()
            .map(|c| {
                let r = distinct.iter().position(|d| d == c).unwrap();
                pick.get(r).map(|&i| names[i].to_string())
            })
            .collect()
    }

    const H: [&str; 5] = ["left", "second left", "middle", "second right", "right"];
    const V: [&str; 5] = ["bottom", "second bottom", "middle", "second top", "top"];

    fn names(v: Vec<Option<Label>>) -> Vec<Option<String>> {
        v.into_iter().map(|l| l.map(|l| l.as_str().to_string())).collect()
    }

    #[test]
    fn axis_label_examples() {
        assert_eq!(axis_labels(&[0.4], Axis::Horizontal).unwrap(), vec![None]);
        assert_eq!(
            axis_labels(&[0.2, 0.8], Axis::Horizontal).unwrap(),
            vec![Some(Label::Left), Some(Label::Right)]
        );
        assert_eq!(
            axis_labels(&[0.1, 0.3, 0.5, 0.7, 0.9, 1.1], Axis::Horizontal),
            Err(InstructError::TooManyPositions { axis: Axis::Horizontal, count: 6 })
        );
        let got = axis_labels(&[0.5, 0.1, 0.9], Axis::Vertical).unwrap();
        assert_eq!(names(got), brute_labels(&[0.5, 0.1, 0.9], V));
        assert_eq!(
            axis_labels(&[0.5, 0.1, 0.9], Axis::Vertical).unwrap(),
            vec![Some(Label::Middle), Some(Label::Bottom), Some(Label::Top)]
        );
    }

    #[test]
    fn near_equal_coordinates_share_label() {
        let got = axis_labels(&[0.2, 0.205, 0.8], Axis::Horizontal).unwrap();
        assert_eq!(got, vec![Some(Label::Left), Some(Label::Left), Some(Label::Right)]);
    }

    #[test]
    fn k4_has_no_middle() {
        let got = axis_labels(&[0.0, 0.1, 0.2, 0.3], Axis::Horizontal).unwrap();
        assert_eq!(
            got,
            vec![Some(Label::Left), Some(Label::SecondLeft), Some(Label::SecondRight), Some(Label::Right)]
        );
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_instruction(Some(Label::Top), Some(Label::Left), PartKind::Drawer), "open the top left drawer");
        assert_eq!(render_instruction(None, Some(Label::SecondRight), PartKind::Door), "open the second right door");
        assert_eq!(render_instruction(Some(Label::Middle), None, PartKind::Drawer), "open the middle drawer");
        assert_eq!(render_instruction(None, None, PartKind::Door), "open the door");
    }

    fn part(id: usize, kind: PartKind, y: f64, z: f64) -> Part {
        let center = Point3::new(-0.01, y, z);
        Part {
            id,
            kind,
            joint: Joint {
                kind: if kind == PartKind::Door { JointKind::Revolute } else { JointKind::Prismatic },
                axis: if kind == PartKind::Door { Vector3::z() } else { -Vector3::x() },
                origin: center,
                limit: [0.0, 0.3],
                value: 0.0,
            },
            handle: Handle {
                center,
                posture: Posture::Horizontal,
                length: 0.08,
                thickness: 0.02,
                depth: 0.02,
                color: [0; 3],
            },
            face_rect: FaceRect { y: y - 0.05, z: z - 0.05, w: 0.1, h: 0.1 },
            anchor: center,
        }
    }

    fn cab(parts: Vec<Part>) -> Cabinet {
        Cabinet { id: 0, body_dims: [2.0, 2.0, 0.5], front_x: 0.0, parts, split: Split::Test }
    }

    #[test]
    fn stacked_drawers() {
        let c = cab(vec![part(0, PartKind::Drawer, 0.0, 0.2), part(1, PartKind::Drawer, 0.0, 0.6)]);
        let d = describe_parts(&c).unwrap();
        assert_eq!(d[0].text, "open the bottom drawer");
        assert_eq!(d[1].text, "open the top drawer");
        let zs = [0.2, 0.6];
        let oracle = brute_labels(&zs, V);
        assert_eq!(d[0].v_label.map(|l| l.as_str().to_string()), oracle[0]);
        assert_eq!(d[1].v_label.map(|l| l.as_str().to_string()), oracle[1]);
    }

    #[test]
    fn single_door() {
        let c = cab(vec![part(0, PartKind::Door, 0.3, 0.4)]);
        let d = describe_parts(&c).unwrap();
        assert_eq!((d[0].v_label, d[0].h_label, d[0].kind), (None, None, PartKind::Door));
        assert_eq!(d[0].text, "open the door");
    }

    #[test]
    fn duplicate_description_is_invalid() {
        let mut parts: Vec<Part> =
            (0..4).map(|i| part(i, PartKind::Drawer, i as f64 * 0.2, 0.5)).collect();
        parts.push(part(4, PartKind::Door, 0.0, 1.0));
        parts.push(part(5, PartKind::Door, 0.0, 1.0));
        let c = cab(parts);
        assert!(matches!(describe_parts(&c), Err(InstructError::DuplicateDescription { a: 4, b: 5, .. })));
    }

    #[test]
    fn same_cell_different_kind_is_distinct() {
        let c = cab(vec![part(0, PartKind::Door, 0.0, 0.5), part(1, PartKind::Drawer, 0.0, 0.5)]);
        assert!(describe_parts(&c).is_ok());
    }

    #[test]
    fn grounding() {
        let c = cab(vec![part(0, PartKind::Drawer, 0.0, 0.2), part(1, PartKind::Drawer, 0.0, 0.6)]);
        assert_eq!(ground_instruction("open the top drawer", &c), Ok(1));
        assert_eq!(ground_instruction("  Open  the TOP\tdrawer ", &c), Ok(1));
        let doors = cab(vec![part(0, PartKind::Door, 0.0, 0.2), part(1, PartKind::Door, 0.0, 0.6)]);
        assert!(matches!(ground_instruction("open the top drawer", &doors), Err(InstructError::NoMatch(_))));
    }

    #[test]
    fn grids_up_to_5x5_are_valid_and_6_is_not() {
        for rows in 1..=6usize {
            for cols in 1..=6usize {
                let parts: Vec<Part> = (0..rows * cols)
                    .map(|i| part(i, PartKind::Drawer, (i % cols) as f64 * 0.2, (i / cols) as f64 * 0.2))
                    .collect();
                let c = cab(parts);
                let r = describe_parts(&c);
                if rows <= 5 && cols <= 5 {
                    let d = r.unwrap();
                    for ins in &d {
                        assert_eq!(ground_instruction(&ins.text, &c), Ok(ins.part_id));
                    }
                } else {
                    assert!(matches!(r, Err(InstructError::TooManyPositions { .. })));
                }
            }
        }
    }

    #[test]
    fn generated_cabinets_round_trip() {
        let cons = GenerationConstraints::default();
        for seed in 0..200 {
            let c = generate_cabinet(seed, &cons).unwrap();
            for ins in describe_parts(&c).unwrap() {
                assert_eq!(ground_instruction(&ins.text, &c), Ok(ins.part_id));
            }
        }
    }

    proptest! {
        #[test]
        fn labels_follow_brute_force(raw in proptest::collection::vec(0u32..6, 1..8)) {
            // well-separated coordinates so clustering is exact
            let coords: Vec<f64> = raw.iter().map(|&v| v as f64 * 0.1).collect();
            let (_, k) = cluster(&coords);
            let got = axis_labels(&coords, Axis::Horizontal);
            if k > 5 {
                prop_assert!(got.is_err());
            } else {
                prop_assert_eq!(names(got.unwrap()), brute_labels(&coords, H));
            }
        }

        #[test]
        fn labels_invariant_under_permutation(raw in proptest::collection::vec(0u32..5, 1..8), rot in 0usize..8) {
            let coords: Vec<f64> = raw.iter().map(|&v| v as f64 * 0.13).collect();
            let labels = axis_labels(&coords, Axis::Vertical).unwrap();
            let n = coords.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let shuffled: Vec<f64> = perm.iter().map(|&i| coords[i]).collect();
            let again = axis_labels(&shuffled, Axis::Vertical).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(again[j], labels[i]);
            }
        }

        #[test]
        fn increasing_coordinates_get_family_order(k in 2usize..=5, step in 0.02f64..0.5) {
            let coords: Vec<f64> = (0..k).map(|i| i as f64 * step).collect();
            let order = [Label::Left, Label::SecondLeft, Label::Middle, Label::SecondRight, Label::Right];
            let got: Vec<usize> = axis_labels(&coords, Axis::Horizontal)
                .unwrap()
                .into_iter()
                .map(|l| order.iter().position(|o| Some(*o) == l).unwrap())
                .collect();
            prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
