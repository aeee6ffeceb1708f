//! A small benchmark: oracle and noisy detectors, the ground-truth grasp
//! protocol, and the report in both formats.

use opend::bench::{build_dataset_with, grasp_eval, run_benchmark, BenchConfig, DatasetConfig, Quotas, ReportFormat, SplitQuota};
use opend::detect::{NoiseConfig, OracleDetector};
use opend::hands::HandKind;

fn main() {
    let cfg = DatasetConfig {
        quotas: Quotas { train: SplitQuota { cabinets: 2, drawers: 2, doors: 2 }, test: SplitQuota { cabinets: 8, drawers: 8, doors: 6 } },
        ..DatasetConfig::default()
    };
    let ds = build_dataset_with(1, &cfg).expect("small dataset builds");
    println!("dataset {} with {} test instructions", &ds.hash()[..12], ds.instructions_in(Some(opend::scene::Split::Test)).count());

    let bench = BenchConfig { hands: vec![HandKind::Franka, HandKind::Allegro], jobs: 2, ..BenchConfig::default() };
    for noise in [NoiseConfig::zero(), NoiseConfig { sigma_px: 2.0, p_miss: 0.3, p_fp: 0.0 }] {
        let run = run_benchmark(&ds, &OracleDetector { noise }, &bench).expect("no log dir, no io");
        print!("{}", run.table.report(ReportFormat::Text));
    }
    let gt = grasp_eval(&ds, &bench).expect("no log dir, no io");
    print!("{}", gt.table.report(ReportFormat::Csv));
}
