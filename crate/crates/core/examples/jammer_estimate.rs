//! The reactive jammer learning the consensus period from the frames it
//! overhears during one jammed run.

use jamsim::scenario::{preset, run_once, RunOptions};

fn main() {
    let cfg = preset("jammed_baseline").expect("shipped preset");
    let out = run_once(&cfg, 1, RunOptions::default()).expect("run");
    for (i, (t, est)) in out.tca_estimates.iter().enumerate() {
        if i < 5 || i % 20 == 0 {
            println!("sample {i:>4} at {:.4} s: T̂ = {:.4} ms", t.as_secs_f64(), est * 1e3);
        }
    }
    println!(
        "jam frames {}, receptions lost to jamming {}, final estimate {:.4} ms",
        out.channel.jam_frames,
        out.channel.lost_to_jam,
        out.metrics.tca_hat.unwrap_or(f64::NAN) * 1e3
    );
}
