use std::fs;

use legem_cli::{report, run, RunConfig, METRICS_FILE, TIMING_FILE};

fn small(env: &str, out: &std::path::Path) -> RunConfig {
    let text = format!("env = {env}\nsteps = 3000\neval_interval = 1000\neval_episodes = 3\nseeds = 0..2\ntrace = true\n");
    let mut cfg = RunConfig::from_pairs(
        RunConfig::parse(&text)
            .unwrap()
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str())),
    )
    .unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn run_writes_reproducible_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&small("stag-hunter", &a)).unwrap();
    run(&small("stag-hunter", &b)).unwrap();
    let metrics = fs::read_to_string(a.join(METRICS_FILE)).unwrap();
    assert_eq!(metrics, fs::read_to_string(b.join(METRICS_FILE)).unwrap());
    assert_eq!(
        fs::read_to_string(a.join("checkpoint_seed1.txt")).unwrap(),
        fs::read_to_string(b.join("checkpoint_seed1.txt")).unwrap()
    );
    assert!(a.join(TIMING_FILE).is_file());
    assert!(a.join("trace_seed0.csv").is_file());
    // step 0, two intermediate evals and the final one, per seed
    assert!(metrics.lines().count() > 2 * 4);

    let lines = report(dir.path()).unwrap();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].method, "a");
    assert_eq!(lines[0].seeds, 2);
    assert_eq!(
        (&lines[0].success, lines[0].mean_return),
        (&lines[1].success, lines[1].mean_return)
    );
}

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("quarry", dir.path());
    run(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    let back = RunConfig::from_pairs(
        RunConfig::parse(&text)
            .unwrap()
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str())),
    )
    .unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(report(dir.path()).is_err());
    assert!(report(&dir.path().join("missing")).is_err());
}
