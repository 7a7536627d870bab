//! One jammed run with tracing on: prints the first network events and the
//! frames around the first jam.

use jamsim::scenario::{preset, run_once, RunOptions};

fn main() {
    let cfg = preset("jammed_baseline").expect("shipped preset");
    let out = run_once(&cfg, 2, RunOptions { traces: true }).expect("run");
    let traces = out.traces.expect("tracing enabled");
    for line in traces.events.lines().filter(|l| !l.contains("PlantStep")).take(25) {
        println!("{line}");
    }
    println!("{}", traces.frames.lines().next().unwrap_or_default());
    let first_jam = traces.frames.lines().position(|l| l.contains(",jam,")).unwrap_or(1);
    for line in traces.frames.lines().skip(first_jam.saturating_sub(4)).take(10) {
        println!("{line}");
    }
    println!("{}", out.metrics.csv_row());
}
