//! Monte Carlo batches over consecutive seeds and their written outputs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;

use super::config::ScenarioConfig;
use super::metrics::RunMetrics;
use super::sim::{run_once, RunOptions, RunTraces};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Error bands, in percent, reported for every batch.
pub const BANDS: [f64; 2] = [5.0, 10.0];

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exceedance {
    pub band_pct: f64,
    pub count: u64,
    pub n: u64,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Exceedance {
    pub fn of(errors_pct: &[f64], band_pct: f64) -> Self {
        let n = errors_pct.len() as u64;
        let count = errors_pct.iter().filter(|e| **e > band_pct).count() as u64;
        let (lo, hi) = wilson_interval(count, n);
        Self {
            band_pct,
            count,
            n,
            p: if n == 0 { 0.0 } else { count as f64 / n as f64 },
            lo,
            hi,
        }
    }

    pub fn overlaps(&self, other: &Exceedance) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Pointwise min / mean / max of the mean bus voltage across replicas.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Envelope {
    pub step_s: f64,
    pub min: Vec<f64>,
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
}

pub struct BatchResult {
    pub name: String,
    pub runs: Vec<RunMetrics>,
    /// Seeds whose run aborted, with the diagnostic.
    pub failures: Vec<(u64, String)>,
    pub envelope: Envelope,
    pub traces: Vec<(u64, RunTraces)>,
}

impl BatchResult {
    pub fn errors_pct(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.abs_error_pct).collect()
    }

    pub fn exceedance(&self, band_pct: f64) -> Exceedance {
        Exceedance::of(&self.errors_pct(), band_pct)
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from(RunMetrics::csv_header());
        s.push('\n');
        for r in &self.runs {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn envelope_csv(&self) -> String {
        let e = &self.envelope;
        let mut s = String::from("time_s,min,mean,max\n");
        for i in 0..e.mean.len() {
            let _ = writeln!(s, "{:.3},{:.6},{:.6},{:.6}", i as f64 * e.step_s, e.min[i], e.mean[i], e.max[i]);
        }
        s
    }

    pub fn summary(&self, cfg: &ScenarioConfig) -> String {
        let mut s = String::new();
        let tl = &cfg.file.timeline;
        let n = self.runs.len();
        let _ = writeln!(s, "scenario: {}", self.name);
        let seeds = cfg.seeds();
        let _ = writeln!(s, "seeds: {}..{} ({} replicas, {} failed)", seeds.start, seeds.end, n + self.failures.len(), self.failures.len());
        let _ = writeln!(
            s,
            "steady state: mean bus voltage over the final {:.0}% of a {:.3} s run; convergence band {:.2}%",
            tl.steady_window * 100.0,
            tl.run_length_s,
            tl.convergence_band * 100.0
        );
        for band in BANDS {
            let e = self.exceedance(band);
            let _ = writeln!(
                s,
                "P(|error| > {band:.0}%): {}/{} = {:.4}  95% CI [{:.4}, {:.4}]",
                e.count, e.n, e.p, e.lo, e.hi
            );
        }
        if n > 0 {
            let v: Vec<f64> = self.runs.iter().map(|r| r.mean_voltage).collect();
            let mean = v.iter().sum::<f64>() / n as f64;
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(s, "steady-state voltage: mean {mean:.4} V, min {lo:.4} V, max {hi:.4} V");
            let worst = self.runs.iter().map(|r| r.abs_error_pct).fold(0.0, f64::max);
            let _ = writeln!(s, "largest error: {worst:.3}%");
        }
        let _ = writeln!(s, "error histogram (percent, count):");
        for (label, count) in histogram(&self.errors_pct()) {
            let _ = writeln!(s, "  {label:>7}  {count}");
        }
        let ok = self.runs.iter().filter(|r| r.properties_hold()).count();
        let _ = writeln!(s, "P1-P3 satisfied: {ok}/{n}");
        let conv: Vec<f64> = self.runs.iter().filter_map(|r| r.convergence_time).collect();
        if !conv.is_empty() {
            let _ = writeln!(
                s,
                "convergence time: mean {:.4} s over {} runs",
                conv.iter().sum::<f64>() / conv.len() as f64,
                conv.len()
            );
        }
        let total = |f: fn(&RunMetrics) -> u64| self.runs.iter().map(f).sum::<u64>();
        let _ = writeln!(
            s,
            "faults: coordinated {}, uncoordinated {} over {} periods",
            total(|r| r.faults_coordinated),
            total(|r| r.faults_uncoordinated),
            total(|r| r.periods)
        );
        let _ = writeln!(
            s,
            "updates: late {}, dropped {}, lost to jamming {}; agent collisions {}; jam frames {}",
            total(|r| r.late_updates),
            total(|r| r.dropped_updates),
            total(|r| r.lost_to_jam),
            total(|r| r.agent_collisions),
            total(|r| r.jams)
        );
        for (seed, err) in &self.failures {
            let _ = writeln!(s, "failed: {seed}: {err}");
        }
        s
    }

    /// Writes `runs.csv`, `summary.txt`, `envelope.csv`, the effective
    /// `config.toml` and any per-seed traces under `dir`.
    pub fn write(&self, cfg: &ScenarioConfig, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("runs.csv"), self.runs_csv())?;
        fs::write(dir.join("summary.txt"), self.summary(cfg))?;
        fs::write(dir.join("envelope.csv"), self.envelope_csv())?;
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        for (seed, tr) in &self.traces {
            let sub = dir.join("traces").join(format!("seed_{seed}"));
            fs::create_dir_all(&sub)?;
            for (name, body) in tr.files() {
                fs::write(sub.join(name), body)?;
            }
        }
        Ok(())
    }
}

fn histogram(errors: &[f64]) -> Vec<(String, usize)> {
    const EDGES: [f64; 8] = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
    let mut out: Vec<(String, usize)> = EDGES
        .windows(2)
        .map(|w| (format!("{}-{}", w[0], w[1]), errors.iter().filter(|e| **e >= w[0] && **e < w[1]).count()))
        .collect();
    out.push((">=100".into(), errors.iter().filter(|e| **e >= 100.0).count()));
    out
}

/// Runs every seed of `cfg`, in parallel, keeping seed order.
pub fn run_batch(cfg: &ScenarioConfig, opts: RunOptions) -> BatchResult {
    let outputs: Vec<_> = cfg
        .seeds()
        .into_par_iter()
        .map(|seed| (seed, run_once(cfg, seed, opts)))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut traces = Vec::new();
    let mut envelope = Envelope {
        step_s: 1e-3,
        ..Envelope::default()
    };
    for (seed, out) in outputs {
        match out {
            Ok(o) => {
                let v = &o.voltage_envelope;
                if envelope.mean.is_empty() {
                    envelope.min = v.clone();
                    envelope.max = v.clone();
                    envelope.mean = vec![0.0; v.len()];
                }
                for (i, x) in v.iter().enumerate().take(envelope.mean.len()) {
                    envelope.min[i] = envelope.min[i].min(*x);
                    envelope.max[i] = envelope.max[i].max(*x);
                    envelope.mean[i] += x;
                }
                runs.push(o.metrics);
                if let Some(t) = o.traces {
                    traces.push((seed, t));
                }
            }
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let n = runs.len().max(1) as f64;
    envelope.mean.iter_mut().for_each(|m| *m /= n);
    BatchResult {
        name: cfg.name.clone(),
        runs,
        failures,
        envelope,
        traces,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_known_values() {
        // k = 0: upper bound z²/(n + z²)
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo.abs() < 1e-15);
        assert!((hi - Z95 * Z95 / (100.0 + Z95 * Z95)).abs() < 1e-12);
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo + hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exceedance_counts_strictly_above() {
        let e = Exceedance::of(&[5.0, 5.0001, 11.0, 0.0], 5.0);
        assert_eq!(e.count, 2);
        assert_eq!(e.p, 0.5);
    }
}
