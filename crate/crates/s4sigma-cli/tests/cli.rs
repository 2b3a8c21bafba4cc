//! End-to-end command line checks: exit codes, determinism, file round
//! trips and report shapes.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_s4"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("s4cli-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn keygen_is_deterministic_and_validates() {
    let a = tmp("key-a.json");
    let b = tmp("key-b.json");
    for path in [&a, &b] {
        let out = run(&[
            "keygen", "--k", "128", "--q", "257", "--n", "4", "--ell", "2", "--seed", "7",
            "--out", path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn keygen_rejects_composite_modulus() {
    let out = run(&["keygen", "--q", "6", "--out", tmp("never.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn encrypt_decrypt_round_trip_with_digest() {
    let key = tmp("rt-key.json");
    let plain = tmp("rt-plain.bin");
    let frame = tmp("rt-frame.s4");
    let back = tmp("rt-back.bin");
    let data: Vec<u8> = (0..3000u32).map(|i| (i % 251) as u8).collect();
    fs::write(&plain, &data).unwrap();
    let out = run(&["keygen", "--seed", "9", "--out", key.to_str().unwrap()]);
    assert!(out.status.success());
    let out = run(&[
        "encrypt", "--key", key.to_str().unwrap(), "--in", plain.to_str().unwrap(), "--out",
        frame.to_str().unwrap(), "--iv-seed", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let digest = stdout.split("digest=").nth(1).unwrap().trim().to_string();
    let out = run(&[
        "decrypt", "--key", key.to_str().unwrap(), "--in", frame.to_str().unwrap(), "--out",
        back.to_str().unwrap(), "--expect-digest", &digest,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&back).unwrap(), data);
}

#[test]
fn decrypt_with_wrong_key_fails_digest_check() {
    let key = tmp("wk-key.json");
    let wrong = tmp("wk-wrong.json");
    let plain = tmp("wk-plain.bin");
    let frame = tmp("wk-frame.s4");
    let back = tmp("wk-back.bin");
    fs::write(&plain, b"sixteen byte msg").unwrap();
    assert!(run(&["keygen", "--seed", "1", "--out", key.to_str().unwrap()]).status.success());
    assert!(run(&["keygen", "--seed", "2", "--out", wrong.to_str().unwrap()]).status.success());
    let out = run(&[
        "encrypt", "--key", key.to_str().unwrap(), "--in", plain.to_str().unwrap(), "--out",
        frame.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let digest = stdout.split("digest=").nth(1).unwrap().trim().to_string();
    // Without the digest the wrong key silently yields garbage (exit 0).
    let out = run(&[
        "decrypt", "--key", wrong.to_str().unwrap(), "--in", frame.to_str().unwrap(), "--out",
        back.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_ne!(fs::read(&back).unwrap(), b"sixteen byte msg");
    // With the digest the mismatch is detected (exit 2).
    let out = run(&[
        "decrypt", "--key", wrong.to_str().unwrap(), "--in", frame.to_str().unwrap(), "--out",
        back.to_str().unwrap(), "--expect-digest", &digest,
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn decrypt_rejects_bad_magic() {
    let key = tmp("bm-key.json");
    assert!(run(&["keygen", "--seed", "4", "--out", key.to_str().unwrap()]).status.success());
    let frame = tmp("bm-frame.s4");
    fs::write(&frame, b"not a frame at all").unwrap();
    let out = run(&[
        "decrypt", "--key", key.to_str().unwrap(), "--in", frame.to_str().unwrap(), "--out",
        tmp("bm-out.bin").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sync_demo_paper_example_csv() {
    let out = run(&["sync-demo", "--paper-example"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,e_0,e_1,e_2,synced,plain_match");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let t: usize = cols[0].parse().unwrap();
        if t >= 2 {
            assert_eq!(cols[4], "1", "synced flag at t={t}");
        }
    }
}

#[test]
fn sync_demo_cbc_corruption_window() {
    let out = run(&["sync-demo", "--scheme", "cbc", "--corrupt", "5:5", "--blocks", "12"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let bad: Vec<usize> = text
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",0"))
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(bad, vec![5, 6], "one corrupted block garbles exactly two positions");
}

#[test]
fn attack_reports_json_line() {
    let out = run(&[
        "attack", "--name", "dcbc-blockwise", "--scheme", "dcbc", "--model", "riv-se",
        "--trials", "60", "--seed", "5", "--jobs", "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["adversary"], "dcbc-blockwise");
    assert_eq!(v["scheme"], "dcbc");
    assert_eq!(v["model"], "riv-se");
    assert_eq!(v["trials"], 60);
    assert!(v["advantage"].as_f64().unwrap() >= 0.9);
    assert!(v["ci_low"].as_f64().unwrap() <= v["ci_high"].as_f64().unwrap());
}

#[test]
fn attack_rejects_inapplicable_pair() {
    let out = run(&[
        "attack", "--name", "mdcbc-se", "--scheme", "cbc", "--model", "riv-se", "--trials", "60",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn attack_deterministic_under_seed() {
    let args = [
        "attack", "--name", "fixed-iv-collision", "--scheme", "cfb", "--model", "iv-e",
        "--trials", "50", "--seed", "11",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn table1_small_run_exits_zero() {
    let out = run(&["table1", "--trials", "60", "--seed", "3", "--jobs", "4"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 24, "one JSON line per grid cell");
    let grid = String::from_utf8(out.stderr).unwrap();
    assert!(grid.contains("scheme"));
}
