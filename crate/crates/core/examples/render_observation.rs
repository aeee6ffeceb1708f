//! Jittered camera, RGB-D render, handle boxes, and 3-D recovery from depth.

use opend::camera::{bbox_center_posture, place_camera, project_bbox, recover_cuboid, render};
use opend::scene::{generate_cabinet, GenerationConstraints};

fn main() {
    let c = generate_cabinet(5, &GenerationConstraints::exact(2, 2)).expect("cabinet generates");
    let pose = place_camera(&c, 11);
    let obs = render(&pose, &c, 11);
    for p in &c.parts {
        let b = project_bbox(&pose, &p.handle).expect("handles are in view");
        let ((u, v), posture) = bbox_center_posture(&b);
        let est = recover_cuboid(&b, &obs, 0.03).expect("handle has depth");
        let err = (est.center - p.handle.center).norm();
        println!("part {}: bbox center ({u:.1}, {v:.1}) {posture:?}, recovered within {:.1} mm", p.id, err * 1000.0);
    }
    let dir = std::env::temp_dir().join("opend_render_example");
    let files = obs.save(&dir, "frame").expect("writable temp dir");
    println!("wrote {}", files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>().join(", "));
}
