//! The four hand models: joint counts, limits, and fingertips at rest and curled.

use nalgebra::{Point3, UnitQuaternion};
use opend::grasp::set_curl;
use opend::hands::{forward_kinematics, hand_spec, HandKind, HandState};

fn main() {
    for kind in HandKind::ALL {
        let m = hand_spec(kind);
        println!("{kind}: {} fingers, {} dof, reach {:.3} m", m.fingers.len(), m.dof, m.max_reach());
        let pose = HandState::new(Point3::origin(), UnitQuaternion::identity(), m.rest.clone());
        let mut curled = m.rest.clone();
        for f in 0..m.fingers.len() {
            set_curl(&m, &mut curled, f, 1.0);
        }
        let rest = forward_kinematics(&m, &pose).expect("rest is within limits");
        let bent = forward_kinematics(&m, &HandState { d: curled, ..pose }).expect("curl stays within limits");
        for (f, (a, b)) in rest.fingertips.iter().zip(&bent.fingertips).enumerate() {
            println!("  finger {f}: rest ({:.3}, {:.3}, {:.3}) curled ({:.3}, {:.3}, {:.3})", a.x, a.y, a.z, b.x, b.y, b.z);
        }
    }
}
