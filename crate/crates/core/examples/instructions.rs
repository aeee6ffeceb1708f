//! Spatial-language descriptions of every part, grounded back to part ids.

use opend::instruct::{describe_parts, ground_instruction};
use opend::scene::{generate_cabinet, GenerationConstraints};

fn main() {
    let c = generate_cabinet(3, &GenerationConstraints::exact(3, 3)).expect("cabinet generates");
    for ins in describe_parts(&c).expect("generated cabinets are describable") {
        let back = ground_instruction(&ins.text, &c).expect("own descriptions ground");
        println!("part {} -> \"{}\" -> part {back}", ins.part_id, ins.text);
        assert_eq!(back, ins.part_id);
    }
    match ground_instruction("open the middle left cupboard", &c) {
        Ok(p) => println!("free text grounded to part {p}"),
        Err(e) => println!("free text rejected: {e}"),
    }
}
