//! A scripted teleop client: it connects to a live server and drives the
//! hand to the drawer handle and pulls. Afterwards the downloaded log is
//! replayed to the same result.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use opend::bench::{build_dataset_with, DatasetConfig, Quotas, SplitQuota};
use opend::exec::TrajectoryLog;
use opend::grasp::{search_grasp, HandleCuboid};
use opend::hands::{hand_spec, HandKind};
use opend::scene::{GenerationConstraints, PartKind};
use opend::serve::{replay, serve, ServeConfig};
use serde_json::{json, Value};

fn main() {
    let cfg = DatasetConfig {
        quotas: Quotas { train: SplitQuota { cabinets: 1, drawers: 1, doors: 0 }, test: SplitQuota { cabinets: 1, drawers: 1, doors: 0 } },
        generator: GenerationConstraints { posture_flip_prob: 0.0, ..GenerationConstraints::canonical_single(PartKind::Drawer) },
        ..DatasetConfig::default()
    };
    let ds = Arc::new(build_dataset_with(2, &cfg).expect("dataset builds"));
    let listener = TcpListener::bind("127.0.0.1:0").expect("loopback bind");
    let addr = listener.local_addr().expect("bound");
    let served = ds.clone();
    thread::spawn(move || serve(listener, served, ServeConfig { rate_limit: None, ..ServeConfig::default() }));

    let stream = TcpStream::connect(addr).expect("server up");
    let mut out = stream.try_clone().expect("clonable");
    let mut input = BufReader::new(stream);
    let mut send = |v: Value| -> Value {
        writeln!(out, "{v}").expect("send");
        let mut line = String::new();
        input.read_line(&mut line).expect("reply");
        serde_json::from_str(&line).expect("json reply")
    };

    let obs = send(json!({"type": "reset", "split": "test", "index": 0, "hand": "franka", "seed": 5}));
    println!("instruction: {}", obs["instruction"]);
    // The scripted operator knows where the handle is and flies to the pregrasp.
    let test_cab = ds.cabinets.iter().find(|c| c.split == opend::scene::Split::Test).expect("one test cabinet");
    let plan = search_grasp(&hand_spec(HandKind::Franka), &HandleCuboid::from(&test_cab.parts[0].handle), 0.5).expect("franka fits");
    let p = &obs["state"]["hand"]["p"];
    let start = [p[0].as_f64().unwrap(), p[1].as_f64().unwrap(), p[2].as_f64().unwrap()];
    let goal = plan.pregrasp.p;
    let steps = 60;
    let delta = [(goal.x - start[0]) / steps as f64, (goal.y - start[1]) / steps as f64, (goal.z - start[2]) / steps as f64];
    for _ in 0..steps {
        send(json!({"type": "act", "dp": delta, "grip": 0.0}));
    }
    for k in 1..=30 {
        send(json!({"type": "act", "grip": k as f64 / 30.0}));
    }
    let mut last = Value::Null;
    for _ in 0..400 {
        last = send(json!({"type": "act", "dp": [-0.1 / 60.0, 0.0, 0.0], "grip": 1.0}));
    }
    println!("after pull: ratio {:.3}, attached {}", last["open_ratio"].as_f64().unwrap_or(0.0), last["attached"]);
    let result = send(json!({"type": "finish"}));
    println!("result: success={} ratio={:.3} failure={}", result["success"], result["open_ratio"].as_f64().unwrap_or(0.0), result["failure"]);

    let log = TrajectoryLog::parse(result["log"].as_str().expect("log text")).expect("log parses");
    let again = replay(&log, &ds).expect("replay matches");
    println!("replayed: success={} ratio={:.3}", again.success, again.open_ratio);
}
