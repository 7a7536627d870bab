use std::fs;
use std::process::{Command, Output};

fn jamsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jamsim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn presets_list_names_every_preset() {
    let o = jamsim(&["presets", "list"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["clean", "paper_baseline", "jammed_baseline", "jammed_spread"] {
        assert!(text.contains(name), "{name} missing from:\n{text}");
    }
}

#[test]
fn run_writes_outputs_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("jam");
    let o = jamsim(&["run", "jammed_baseline", "--seed", "3", "--replicas", "2", "--out", out.to_str().unwrap(), "--traces"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("P(|error| > 5%)"));
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    let seeds: Vec<&str> = runs.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["3", "4"]);
    for f in ["summary.txt", "envelope.csv", "config.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for f in ["events.tsv", "plant.csv", "consensus.csv", "frames.csv", "adversary.csv"] {
        assert!(out.join("traces/seed_4").join(f).is_file(), "{f}");
    }
}

#[test]
fn compare_pairs_two_batches() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (preset, out) in [("jammed_baseline", &a), ("jammed_spread", &b)] {
        let o = jamsim(&["run", preset, "--replicas", "3", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let o = jamsim(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("paired seeds: 3"), "{text}");
    assert!(text.contains("P(|error| > 10%)"));

    let o = jamsim(&["compare", a.to_str().unwrap(), dir.path().join("missing").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[consensus]\nepsilon = 0.5\n").unwrap();
    let o = jamsim(&["run", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));

    fs::write(&path, "[grid]\nbogus = 1\n").unwrap();
    let o = jamsim(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let o = jamsim(&["run", "no_such_preset"]);
    assert_eq!(o.status.code(), Some(2));

    let o = jamsim(&["run", "clean", "--replicas", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
