//! Staged active learning on synthetic worlds: prints the learning curve.
//!
//! cargo run --release --example synth_bench -- [first-seed] [seeds]

use stancekit::bench::{synth_bench, BenchConfig};

fn main() -> stancekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let first: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));
    let n: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let seeds: Vec<u64> = (first..first + n).collect();
    let report = synth_bench(&BenchConfig::default(), &seeds)?;
    print!("{}", report.table());
    print!("{}", report.summary());
    Ok(())
}
