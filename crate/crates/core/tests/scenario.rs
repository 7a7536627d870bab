use jamsim::protocol::SchedulingMode;
use jamsim::scenario::{
    compare, preset, run_batch, run_once, BatchSummary, ConfigError, RunOptions, ScenarioConfig, PRESETS,
};

#[test]
fn every_preset_parses_and_round_trips() {
    for (name, _, _) in PRESETS {
        let cfg = preset(name).unwrap();
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again.to_toml(), cfg.to_toml(), "{name}");
    }
    assert!(matches!(preset("nope"), Err(ConfigError::UnknownPreset(_))));
}

#[test]
fn clean_baseline_collisions_are_same_instant_ties_only() {
    for name in ["clean", "paper_baseline"] {
        let cfg = preset(name).unwrap();
        for seed in 1..=20 {
            let out = run_once(&cfg, seed, RunOptions::default()).unwrap();
            assert_eq!(out.channel.agent_collisions_staggered, 0, "{name} seed {seed}");
            assert_eq!(out.channel.jam_frames, 0);
        }
    }
}

#[test]
fn jamming_hits_only_the_attacked_agents() {
    let cfg = preset("jammed_baseline").unwrap();
    for seed in 1..=20 {
        let out = run_once(&cfg, seed, RunOptions::default()).unwrap();
        assert!(out.channel.lost_to_jam > 0, "seed {seed}");
        assert_eq!(out.channel.lost_to_jam_outside_attacked, 0, "seed {seed}");
        assert_eq!(out.channel.jam_frames, out.metrics.jams);
    }
}

/// On a channel shared only by agents, no frame starts earlier in its
/// period than the artificial delay plus DIFS.
#[test]
fn frames_respect_the_artificial_delay() {
    let clean = preset("clean").unwrap().to_toml();
    let spread = clean.replace("mode = \"baseline\"", "mode = \"spread\"");
    assert_ne!(clean, spread);
    for (name, text) in [("baseline", clean), ("spread", spread)] {
        let cfg = ScenarioConfig::from_toml(&text).unwrap();
        let out = run_once(&cfg, 5, RunOptions { traces: true }).unwrap();
        let t_ca = cfg.t_ca.as_nanos();
        let difs = cfg.mac.difs.as_nanos();
        let first = cfg.activation.as_nanos();
        let mut seen = 0;
        for line in out.traces.unwrap().frames.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f[2] != "agent" {
                continue;
            }
            let start: u64 = f[0].parse().unwrap();
            let agent = u64::from_str_radix(f[1].rsplit(':').next().unwrap(), 16).unwrap() as usize;
            let t_ad = cfg.policy.artificial_delay(agent).unwrap().as_nanos();
            let offset = (start - first) % t_ca;
            assert!(offset >= t_ad + difs, "{name}: agent {agent} at offset {offset} ns");
            seen += 1;
        }
        assert!(seen > 0);
        if cfg.policy.mode == SchedulingMode::Spread {
            assert_eq!(cfg.policy.artificial_delay(6).unwrap().as_nanos(), 10_000_000);
        }
    }
}

#[test]
fn reruns_are_identical_and_seeds_matter() {
    let cfg = preset("jammed_spread").unwrap();
    let opts = RunOptions { traces: true };
    let a = run_once(&cfg, 4, opts).unwrap();
    let b = run_once(&cfg, 4, opts).unwrap();
    let c = run_once(&cfg, 5, opts).unwrap();
    assert_eq!(a.metrics.csv_row(), b.metrics.csv_row());
    assert_eq!(a.traces, b.traces);
    assert_ne!(a.traces, c.traces);
}

#[test]
fn written_batches_compare_as_loaded() {
    let cfg = preset("paper_baseline").unwrap().with_seeds(1, 4);
    let batch = run_batch(&cfg, RunOptions::default());
    let dir = tempfile::tempdir().unwrap();
    batch.write(&cfg, dir.path()).unwrap();
    let loaded = BatchSummary::load(dir.path()).unwrap();
    let direct = BatchSummary::from_batch(&batch);
    assert_eq!(loaded.seeds, direct.seeds);
    for (x, y) in loaded.errors_pct.iter().zip(&direct.errors_pct) {
        assert!((x - y).abs() < 1e-6);
    }
    let c = compare(&loaded, &loaded).unwrap();
    assert!(c.identical);
    let written = ScenarioConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(written.to_toml(), cfg.to_toml());
}
