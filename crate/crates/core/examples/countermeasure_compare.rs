//! Paired-seed comparison of the baseline schedule against spread
//! submissions under the same jammer.

use jamsim::scenario::{compare, preset, run_batch, BatchSummary, RunOptions};

fn main() {
    let replicas = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let run = |name: &str| {
        let cfg = preset(name).expect("shipped preset").with_seeds(1, replicas);
        BatchSummary::from_batch(&run_batch(&cfg, RunOptions::default()))
    };
    let (a, b) = (run("jammed_baseline"), run("jammed_spread"));
    print!("{}", compare(&a, &b).expect("paired seeds"));
}
