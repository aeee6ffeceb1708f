//! Grasp plans for every hand on one handle, plus the franka gap limit.

use nalgebra::Point3;
use opend::grasp::{closure_test, search_grasp, HandleCuboid, DEFAULT_MU};
use opend::hands::{hand_spec, HandKind, HandState};
use opend::scene::Posture;

fn main() {
    let handle = HandleCuboid { center: Point3::new(-0.03, 0.1, 0.8), posture: Posture::Vertical, dims: [0.04, 0.12, 0.02] };
    for kind in HandKind::ALL {
        let m = hand_spec(kind);
        match search_grasp(&m, &handle, DEFAULT_MU) {
            Ok(plan) => {
                let (ok, contacts) = closure_test(&m, &HandState { d: plan.final_joints.clone(), ..plan.pregrasp.clone() }, &handle, DEFAULT_MU);
                println!("{kind}: quality {:.3}, roll {:+} deg, {} contacts, closure {ok}", plan.closure_quality, plan.roll_offset_deg, contacts.len());
            }
            Err(e) => println!("{kind}: {e}"),
        }
    }
    let franka = hand_spec(HandKind::Franka);
    for t in [0.02, 0.06, 0.079, 0.081] {
        let h = HandleCuboid { dims: [0.04, 0.15, t], ..handle };
        println!("franka, thickness {t}: {}", if search_grasp(&franka, &h, DEFAULT_MU).is_ok() { "grasp" } else { "NoGrasp" });
    }
}
