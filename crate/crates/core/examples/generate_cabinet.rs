//! Procedural cabinets: a random one, a fixed grid, and a scene file round trip.

use opend::scene::{generate_cabinet, parse_scene, scene_to_string, validate_cabinet, GenerationConstraints};

fn main() {
    let c = generate_cabinet(42, &GenerationConstraints::default()).expect("default constraints generate");
    println!("cabinet {} {:.2} x {:.2} x {:.2} m, {} parts", c.id, c.width(), c.height(), c.depth(), c.parts.len());
    for p in &c.parts {
        println!("  part {} {:<6} handle at ({:.3}, {:.3}, {:.3}) {:?}", p.id, p.kind.as_str(), p.handle.center.x, p.handle.center.y, p.handle.center.z, p.handle.posture);
    }
    assert!(validate_cabinet(&c).is_empty());

    let grid = generate_cabinet(7, &GenerationConstraints::grid(3, 2)).expect("3x2 grid generates");
    println!("3x2 grid: {} parts", grid.parts.len());

    let text = scene_to_string(&c);
    assert_eq!(parse_scene(&text).expect("scene parses"), c);
    println!("scene file: {} bytes, round trip ok", text.len());
}
