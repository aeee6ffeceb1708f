//! One full planner episode: observe, locate, approach, close, pull, check.

use opend::detect::{NoiseConfig, OracleDetector};
use opend::exec::{run_episode, ExecConfig};
use opend::hands::{hand_spec, HandKind};
use opend::instruct::describe_parts;
use opend::scene::{generate_cabinet, GenerationConstraints};

fn main() {
    let c = generate_cabinet(21, &GenerationConstraints::exact(2, 1)).expect("cabinet generates");
    let det = OracleDetector { noise: NoiseConfig::zero() };
    let cfg = ExecConfig::default();
    for ins in describe_parts(&c).expect("describable") {
        for kind in [HandKind::Franka, HandKind::Allegro] {
            let r = run_episode(&c, &ins.text, &hand_spec(kind), &det, &cfg, 1);
            println!("{:<32} {kind:<8} success={} ratio={:.3} failure={} steps={}", ins.text, r.success, r.open_ratio, r.failure.as_str(), r.steps);
            for m in &r.trace {
                println!("    t={:<4} {}", m.t, m.phase.as_str());
            }
        }
    }
}
