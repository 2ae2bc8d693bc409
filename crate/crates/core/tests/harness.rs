use std::path::Path;
use std::process::Command;

use donas::harness::checkpoint::Checkpoint;
use donas::harness::config::{ExperimentConfig, Mode};
use donas::harness::run::{self, checkpoint_path};
use donas::Error;

const SMALL_AT: &str = "
mode = at
max_epochs = 3
at.data_size = 200
at.test_size = 100
at.eval_size = 100
at.widths = 6
at.search_iterations = 20
at.finetune_epochs = 1
at.pgd_iters = 5
at.baseline = false
";

const SMALL_GAN: &str = "
mode = gan
max_epochs = 3
gan.data_size = 400
gan.gen_widths = 6
gan.disc_widths = 6
gan.oracle_steps = 15
gan.finetune_rounds = 4
gan.init_rounds = 30
gan.eval_size = 100
gan.sample_count = 400
gan.baseline = false
cka.probe_size = 50
";

fn config_error(text: &str) -> (String, String) {
    match ExperimentConfig::parse_str(text, "test.cfg") {
        Err(Error::Config { location, message }) => (location, message),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn config_errors_name_the_key_and_line() {
    let (loc, msg) = config_error("seed = 1\nbogus = 2\n");
    assert_eq!(loc, "test.cfg:2 (key 'bogus')");
    assert!(msg.contains("unknown key"));

    let (loc, msg) = config_error("seed = 1\nseed = 2\n");
    assert!(loc.contains(":2") && msg.contains("line 1"));

    let (loc, _) = config_error("support_limit = four\n");
    assert!(loc.contains("support_limit"));

    let (loc, _) = config_error("epsilon_term = -1\n");
    assert!(loc.contains("epsilon_term"));

    let (loc, _) = config_error("gan.finetune_resolve_every = 0\n");
    assert!(loc.contains("gan.finetune_resolve_every"));

    let (_, msg) = config_error("just words\n");
    assert!(msg.contains("key = value"));
}

#[test]
fn config_echo_parses_back_to_the_same_config() {
    let cfg = ExperimentConfig::parse_str(SMALL_GAN, "small").unwrap();
    let again = ExperimentConfig::parse_str(&cfg.to_text(), "echo").unwrap();
    assert_eq!(cfg.to_text(), again.to_text());
    assert_eq!(again.mode, Mode::Gan);
}

fn matrix_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse_str(
        "mode = matrix-demo\nmatrix = 0,1,-1,0.5;-1,0,1,0.2;1,-1,0,-0.4\nsupport_limit = 3\nepsilon_term = 1e-9\n",
        "matrix",
    )
    .unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = matrix_config(dir.path());
    let summary = run::run_experiment(&cfg, None).unwrap();
    let path = checkpoint_path(dir.path(), summary.epochs);
    let text = std::fs::read_to_string(&path).unwrap();
    let ck = Checkpoint::<usize, usize>::load(&path).unwrap();
    assert_eq!(ck.to_text(), text);
    let copy = dir.path().join("copy.ckpt");
    ck.save(&copy).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), text.as_bytes());
}

#[test]
fn corrupted_checkpoint_header_names_the_magic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = matrix_config(dir.path());
    run::run_experiment(&cfg, None).unwrap();
    let path = checkpoint_path(dir.path(), 1);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("X{text}")).unwrap();
    let err = Checkpoint::<usize, usize>::load(&path).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");
}

#[test]
fn resume_with_wrong_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = matrix_config(dir.path());
    run::run_experiment(&cfg, None).unwrap();
    cfg.seed = 99;
    cfg.out = dir.path().join("other");
    let err = run::run_experiment(&cfg, Some(&checkpoint_path(dir.path(), 1))).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Runs `text` to completion, then again from the checkpoint after `k`
/// epochs, and compares the artifacts.
fn assert_resume_matches(text: &str, k: usize) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse_str(text, "resume").unwrap();
    cfg.out = dir.path().join("full");
    let full = run::run_experiment(&cfg, None).unwrap();
    assert!(full.epochs > k, "run ended after {} epochs", full.epochs);
    let ck = checkpoint_path(&cfg.out, k);
    let first = cfg.out.clone();
    cfg.out = dir.path().join("resumed");
    run::run_experiment(&cfg, Some(&ck)).unwrap();
    assert_eq!(read(&first, "trace.csv"), read(&cfg.out, "trace.csv"));
    let last = checkpoint_path(&first, full.epochs);
    let resumed_last = checkpoint_path(&cfg.out, full.epochs);
    assert_eq!(std::fs::read(last).unwrap(), std::fs::read(resumed_last).unwrap());
}

#[test]
fn resumed_matrix_run_matches_uninterrupted_run() {
    assert_resume_matches("mode = matrix-demo\nmatrix = 0,1,-1,0.5;-1,0,1,0.2;1,-1,0,-0.4\nsupport_limit = 2\nmax_epochs = 6\nepsilon_term = 1e-12\n", 2);
}

#[test]
fn resumed_at_run_matches_uninterrupted_run() {
    assert_resume_matches(SMALL_AT, 1);
}

#[test]
fn resumed_gan_run_matches_uninterrupted_run() {
    assert_resume_matches(SMALL_GAN, 2);
}

fn donas(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_donas")).args(args).output().unwrap()
}

#[test]
fn cli_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("at.cfg");
    std::fs::write(&config, SMALL_AT).unwrap();
    let mut traces = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = donas(&["run", "--config", config.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        traces.push((read(&out, "trace.csv"), read(&out, "metrics.csv")));
        assert!(read(&out, "manifest.txt").contains("seed = 7"));
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn cli_missing_config_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = donas(&["run", "--config", dir.path().join("nope.cfg").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec![std::ffi::OsString::from("manifest.txt")]);
}

#[test]
fn cli_matrix_demo_converges() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("m.cfg");
    std::fs::write(&config, "mode = matrix-demo\nmatrix = 3,-1;-2,4\nepsilon_term = 1e-9\n").unwrap();
    let out = dir.path().join("out");
    let o = donas(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let rows = donas::harness::report::read_metrics(&out.join("metrics.csv")).unwrap();
    let get = |m: &str| rows.iter().find(|r| r.metric == m).unwrap().value;
    assert!((get("game_value") - 1.0).abs() < 1e-9);
    assert_eq!(get("terminated"), 1.0);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert_eq!(n, 3);
}
