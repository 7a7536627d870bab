//! Monte Carlo batch: exceedance probabilities with and without the jammer.
//! Pass a replica count as the first argument (default 200).

use jamsim::scenario::{preset, run_batch, RunOptions};

fn main() {
    let replicas = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    for name in ["paper_baseline", "jammed_baseline"] {
        let cfg = preset(name).expect("shipped preset").with_seeds(1, replicas);
        let batch = run_batch(&cfg, RunOptions::default());
        println!("== {name}");
        print!("{}", batch.summary(&cfg));
    }
}
