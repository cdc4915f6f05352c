use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn convoscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convoscan"))
        .args(args)
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn show_config_applies_overrides() {
    let out = convoscan(&[
        "show-config",
        "--seed",
        "5",
        "--strict-paper",
        "--out",
        "/tmp/elsewhere",
    ]);
    assert!(out.status.success());
    let cfg = text(&out.stdout);
    assert!(cfg.contains("seed = 5"), "{cfg}");
    assert!(cfg.contains("out_dir = \"/tmp/elsewhere\""), "{cfg}");
    assert!(cfg.contains("bias = false"), "{cfg}");
    assert!(cfg.contains("masked = false"), "{cfg}");
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[lm]\nhiden_dim = 3\n").unwrap();
    let out = convoscan(&["--config", cfg.to_str().unwrap(), "show-config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        text(&out.stderr).contains("hiden_dim"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn missing_inputs_name_the_producing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = convoscan(&["--out", dir.path().to_str().unwrap(), "train-scd"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        text(&out.stderr).contains("vectorize"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn unknown_subcommand_is_rejected() {
    let out = convoscan(&["frobnicate"]);
    assert!(!out.status.success());
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let o = dir.display();
    let cfg = dir.join("config.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 3\n[paths]\ntrain_corpus = \"{o}/synth_train.xml\"\ntrain_truth = \"{o}/synth_train_truth.txt\"\n\
             test_corpus = \"{o}/synth_test.xml\"\ntest_truth = \"{o}/synth_test_truth.txt\"\nout_dir = \"{o}\"\n\
             [synth]\ntrain_conversations = 40\ntest_conversations = 20\npredator_fraction = 0.1\n"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn early_stages_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    for stage in ["synth", "preprocess", "build-vocab"] {
        let out = convoscan(&["--config", cfg, stage]);
        assert!(out.status.success(), "{stage}: {}", text(&out.stderr));
    }
    for name in [
        "synth_train.xml",
        "train.xml",
        "test.xml",
        "filter_report.txt",
        "vocab.txt",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn corrupted_model_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    for stage in ["synth", "preprocess", "build-vocab"] {
        assert!(convoscan(&["--config", cfg, stage]).status.success());
    }
    fs::write(dir.path().join("lm.bin"), b"CONVOSCN garbage").unwrap();
    let out = convoscan(&["--config", cfg, "eval-lm"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}
