//! CLI integration: exit codes and the SPECTRAL_NIE_SEED override.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spectral-nie"))
}

fn gen_args(out: &std::path::Path) -> Vec<String> {
    [
        "gen-data",
        "--kind",
        "synthetic-ie",
        "--samples",
        "4",
        "--points",
        "16",
        "--dim",
        "1",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.display().to_string()])
    .collect()
}

#[test]
fn usage_errors_exit_1() {
    let code = bin().arg("no-such-subcommand").output().unwrap().status.code();
    assert_eq!(code, Some(1));

    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(gen_args(&dir.path().join("d.json")))
        .args(["--samples", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_data_exits_2_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = bin()
        .args(["train", "--data"])
        .arg(dir.path().join("nonexistent.json"))
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!run.exists(), "failed run must not leave an output dir");
}

#[test]
fn env_seed_overrides_config_but_not_flag() {
    let dir = tempfile::tempdir().unwrap();
    let by_flag = dir.path().join("flag.json");
    let by_env = dir.path().join("env.json");
    let env_flag = dir.path().join("env_flag.json");

    let status = bin()
        .args(gen_args(&by_flag))
        .args(["--seed", "123"])
        .status()
        .unwrap();
    assert!(status.success());

    let status = bin()
        .args(gen_args(&by_env))
        .env("SPECTRAL_NIE_SEED", "123")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read(&by_flag).unwrap(),
        std::fs::read(&by_env).unwrap(),
        "env seed must match the equivalent --seed run byte for byte"
    );

    // an explicit flag wins over the environment
    let status = bin()
        .args(gen_args(&env_flag))
        .args(["--seed", "123"])
        .env("SPECTRAL_NIE_SEED", "999")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read(&by_flag).unwrap(),
        std::fs::read(&env_flag).unwrap()
    );

    let garbage = bin()
        .args(gen_args(&dir.path().join("g.json")))
        .env("SPECTRAL_NIE_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(garbage.status.code(), Some(1));
}
