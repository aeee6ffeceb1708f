//! An external detector over the length-prefixed plugin protocol. The plugin
//! boxes the pixels nearest the camera, which on a single-part cabinet are
//! the handle, and a planner episode uses its answer.

use std::net::TcpListener;
use std::thread;

use opend::detect::{serve_plugin_connection, PluginDetector, PluginReply, PluginRequest};
use opend::exec::{run_episode, ExecConfig};
use opend::hands::{hand_spec, HandKind};
use opend::instruct::describe_parts;
use opend::scene::{generate_cabinet, GenerationConstraints, PartKind};

fn nearest_blob(req: &PluginRequest) -> PluginReply {
    let obs = match req.observation() {
        Ok(o) => o,
        Err(e) => return PluginReply::Error { error: e },
    };
    let n = obs.width();
    let near = obs.depth.iter().copied().fold(f32::INFINITY, f32::min);
    let (mut b, mut any) = ([f64::MAX, f64::MAX, f64::MIN, f64::MIN], false);
    for (k, d) in obs.depth.iter().enumerate() {
        if *d < near + 0.015 {
            let (u, v) = ((k % n) as f64, (k / n) as f64);
            b = [b[0].min(u), b[1].min(v), b[2].max(u + 1.0), b[3].max(v + 1.0)];
            any = true;
        }
    }
    if any { PluginReply::Detection { bbox: b, score: 0.9 } } else { PluginReply::Error { error: "empty frame".into() } }
}

fn main() {
    let listener = TcpListener::bind("127.0.0.1:0").expect("loopback bind");
    let addr = listener.local_addr().expect("bound").to_string();
    thread::spawn(move || {
        for s in listener.incoming().flatten() {
            let _ = serve_plugin_connection(s, |req| {
                println!("plugin: {}x{} frame for \"{}\"", req.width, req.height, req.instruction);
                nearest_blob(req)
            });
        }
    });

    let det = PluginDetector::new(&addr);
    let cfg = ExecConfig::default();
    for seed in 0..3 {
        let c = generate_cabinet(seed, &GenerationConstraints::canonical_single(PartKind::Drawer)).expect("cabinet generates");
        let text = &describe_parts(&c).expect("describable")[0].text;
        let r = run_episode(&c, text, &hand_spec(HandKind::Franka), &det, &cfg, seed);
        println!("seed {seed}: success={} ratio={:.3} failure={}", r.success, r.open_ratio, r.failure.as_str());
    }
}
