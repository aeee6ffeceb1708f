//! Desk-scale simulator, planner and benchmark harness for language-instructed
//! cabinet opening.
//!
//! The crate is organized bottom-up:
//!
//! - [`scene`]: procedural articulated cabinets and the scene file format.
//! - [`instruct`]: spatial referring expressions for cabinet parts and their
//!   exact-match grounding.
//! - [`camera`]: pinhole RGB+D sensing, bounding-box projection and
//!   depth-based recovery of handle positions.
//! - [`hands`]: kinematic models of four hands, forward kinematics and joint
//!   interpolation.
//! - [`grasp`]: curl search for a closing grasp on a simplified cuboid handle.
//! - [`exec`]: quasi-static world stepping and the locate/approach/close/pull
//!   episode state machine.
//! - [`detect`]: handle solvers (oracle detections, language matching,
//!   affordance grounding, external TCP plugins).
//! - [`bench`]: dataset construction, batch evaluation and metric tables.
//! - [`serve`]: live sessions over a line protocol for teleoperation and
//!   external agents.

pub mod bench;
pub mod camera;
pub mod detect;
pub mod exec;
pub mod geom;
pub mod grasp;
pub mod hands;
pub mod instruct;
pub mod rng;
pub mod scene;
pub mod serve;

pub use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
