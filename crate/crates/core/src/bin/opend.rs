use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use opend::bench::{build_dataset, dump_images, grasp_eval, load_dataset, run_benchmark, save_dataset, BenchConfig, BenchRun, Dataset, ReportFormat, DEFAULT_RENDERS_PER_CABINET};
use opend::detect::parse_detector;
use opend::grasp::{search_grasp, HandleCuboid};
use opend::hands::{hand_spec, HandKind};
use opend::instruct::{describe_parts, ground_instruction};
use opend::scene::{generate_cabinet, load_scene, save_scene, GenerationConstraints, Split};
use opend::serve::{bind_addr, replay, replay_on, serve, ServeConfig};
use opend::exec::{read_log, ExecConfig};

#[derive(Parser)]
#[command(name = "opend", version, about = "Cabinet-opening simulator, planner and benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct DatasetArgs {
    /// Saved dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Build the dataset in memory from this master seed instead.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DatasetArgs {
    fn load(&self) -> Result<Dataset, String> {
        match &self.dataset {
            Some(d) => load_dataset(d).map_err(|e| format!("{}: {e}", d.display())),
            None => build_dataset(self.seed).map_err(|e| e.to_string()),
        }
    }
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Comma-separated hands.
    #[arg(long, default_value = "franka", value_delimiter = ',')]
    hands: Vec<HandKind>,
    /// `train`, `test` or `all`.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Only the first N instructions.
    #[arg(long)]
    limit: Option<usize>,
    /// Output directory for run.json, metrics and logs.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<BenchConfig, String> {
        let split = match self.split.as_str() {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "all" => None,
            s => return Err(format!("unknown split `{s}`")),
        };
        Ok(BenchConfig {
            hands: self.hands.clone(),
            split,
            jobs: self.jobs,
            limit: self.limit,
            exec: ExecConfig::default(),
            log_dir: self.out.as_ref().map(|d| d.join("logs")),
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate one cabinet scene file.
    GenScene {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        drawers: Option<usize>,
        #[arg(long)]
        doors: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the instruction for every part of a scene, or ground one.
    Instruct {
        scene: PathBuf,
        /// Instruction to resolve to a part id.
        #[arg(long)]
        ground: Option<String>,
    },
    /// Search a grasp for one part's ground-truth handle.
    GraspPlan {
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        part: usize,
        #[arg(long, default_value = "franka")]
        hand: HandKind,
        #[arg(long, default_value_t = opend::grasp::DEFAULT_MU)]
        mu: f64,
    },
    /// Build the benchmark dataset and write it to a directory.
    GenDataset {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write jittered training renders with box labels.
        #[arg(long)]
        dump_images: bool,
        #[arg(long, default_value_t = DEFAULT_RENDERS_PER_CABINET)]
        renders_per_cabinet: usize,
    },
    /// Run the multi-step planner over a dataset split.
    RunBench {
        #[command(flatten)]
        run: RunArgs,
        /// `oracle[:sigma=..,miss=..,fp=..]`, `affordance`, `miss` or `plugin:ADDR`.
        #[arg(long, default_value = "oracle")]
        detector: String,
    },
    /// Grasp-and-pull from ground-truth handle poses.
    GraspEval {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the metrics table of a finished run.
    Report {
        dir: PathBuf,
        #[arg(long)]
        csv: bool,
    },
    /// Serve live sessions over TCP or WebSocket.
    Serve {
        #[command(flatten)]
        data: DatasetArgs,
        /// Overrides the OPEND_BIND environment variable.
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Messages per second per session; 0 disables pacing.
        #[arg(long, default_value_t = 60.0)]
        rate: f64,
    },
    /// Re-execute a trajectory log and confirm its result.
    Replay {
        log: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        /// Replay against a scene file instead of a dataset.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
}

fn print_run(run: &BenchRun, out: Option<&Path>) -> Result<(), String> {
    print!("{}", run.table.report(ReportFormat::Text));
    if let Some(dir) = out {
        run.save(dir).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::GenScene { seed, drawers, doors, out } => {
            let cons = match (drawers, doors) {
                (None, None) => GenerationConstraints::default(),
                (d, o) => GenerationConstraints::exact(d.unwrap_or(0), o.unwrap_or(0)),
            };
            let c = generate_cabinet(seed, &cons).map_err(|e| e.to_string())?;
            save_scene(&c, &out).map_err(|e| e.to_string())?;
            println!("{} parts -> {}", c.parts.len(), out.display());
        }
        Cmd::Instruct { scene, ground } => {
            let c = load_scene(&scene).map_err(|e| e.to_string())?;
            match ground {
                Some(text) => println!("{}", ground_instruction(&text, &c).map_err(|e| e.to_string())?),
                None => match describe_parts(&c) {
                    Ok(all) => {
                        for i in all {
                            println!("{}\t{}", i.part_id, i.text);
                        }
                    }
                    Err(e) => {
                        println!("INVALID");
                        eprintln!("{e}");
                    }
                },
            }
        }
        Cmd::GraspPlan { scene, part, hand, mu } => {
            let c = load_scene(&scene).map_err(|e| e.to_string())?.closed();
            let p = c.part(part).ok_or(format!("no part {part}"))?;
            let plan = search_grasp(&hand_spec(hand), &HandleCuboid::from(&p.handle), mu).map_err(|e| e.to_string())?;
            println!("{}", json(&plan));
        }
        Cmd::GenDataset { seed, out, dump_images: dump, renders_per_cabinet } => {
            let ds = build_dataset(seed).map_err(|e| e.to_string())?;
            save_dataset(&ds, &out).map_err(|e| e.to_string())?;
            for s in [Split::Train, Split::Test] {
                let c = ds.counts(Some(s));
                println!("{}: {} cabinets, {} drawers, {} doors, {} parts", s.as_str(), c.cabinets, c.drawers, c.doors, c.parts);
            }
            println!("hash {}", ds.hash());
            if dump {
                let n = dump_images(&ds, &out.join("images"), renders_per_cabinet).map_err(|e| e.to_string())?;
                println!("{n} images");
            }
        }
        Cmd::RunBench { run, detector } => {
            let ds = run.data.load()?;
            let det = parse_detector(&detector)?;
            let r = run_benchmark(&ds, det.as_ref(), &run.config()?).map_err(|e| e.to_string())?;
            print_run(&r, run.out.as_deref())?;
        }
        Cmd::GraspEval { run } => {
            let ds = run.data.load()?;
            let r = grasp_eval(&ds, &run.config()?).map_err(|e| e.to_string())?;
            print_run(&r, run.out.as_deref())?;
        }
        Cmd::Report { dir, csv } => {
            let r = BenchRun::load(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            print!("{}", r.table.report(if csv { ReportFormat::Csv } else { ReportFormat::Text }));
        }
        Cmd::Serve { data, bind, log_dir, rate } => {
            let ds = Arc::new(data.load()?);
            let addr = bind_addr(bind.as_deref());
            let listener = TcpListener::bind(&addr).map_err(|e| format!("{addr}: {e}"))?;
            eprintln!("listening on {}", listener.local_addr().map_err(|e| e.to_string())?);
            let cfg = ServeConfig { exec: ExecConfig::default(), rate_limit: (rate > 0.0).then_some(rate), log_dir };
            serve(listener, ds, cfg).map_err(|e| e.to_string())?;
        }
        Cmd::Replay { log, data, scene } => {
            let l = read_log(&log).map_err(|e| e.to_string())?;
            let r = match scene {
                Some(s) => replay_on(&l, &load_scene(&s).map_err(|e| e.to_string())?),
                None => replay(&l, &data.load()?),
            }
            .map_err(|e| e.to_string())?;
            println!("replay matches: success={} open_ratio={} failure={} steps={}", r.success, r.open_ratio, r.failure.as_str(), r.steps);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
