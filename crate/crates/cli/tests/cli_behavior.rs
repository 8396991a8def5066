//! End-to-end behavior of the binary: determinism, config/flag handling,
//! exit codes, and cross-command consistency.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_ntk-spectra")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "ntk-spectra-cli-{tag}-{}",
        std::process::id()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(binary()).args(args).output().unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let dir = temp_dir("determinism");
    let cfg = write_config(
        &dir,
        "small.json",
        r#"{
            "command": "linear-demo",
            "seed": 3,
            "n": 40, "d": 60, "r": 3,
            "iters": 10, "mc_draws": 200
        }"#,
    );
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let st = run(&[
            "linear-demo",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    for file in ["linear_demo.csv", "linear_demo_summary.json"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between reruns");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_flag_overrides_config() {
    let dir = temp_dir("seed-override");
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{ "command": "linear-demo", "seed": 3, "n": 30, "d": 40, "r": 2, "iters": 5, "mc_draws": 100 }"#,
    );
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    let st = run(&[
        "linear-demo",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let st = run(&[
        "linear-demo",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let a = std::fs::read_to_string(out_a.join("linear_demo_summary.json")).unwrap();
    let b = std::fs::read_to_string(out_b.join("linear_demo_summary.json")).unwrap();
    assert!(a.contains("\"seed\": 3"));
    assert!(b.contains("\"seed\": 4"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn validation_failures_exit_2_without_output() {
    let dir = temp_dir("validation");

    // Unknown command.
    let st = run(&["no-such-command"]);
    assert_eq!(st.status.code(), Some(2));

    // Config/command mismatch.
    let cfg = write_config(&dir, "mismatch.json", r#"{ "command": "linear-demo" }"#);
    let st = run(&["kernel-check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(2));

    // Unknown key.
    let cfg = write_config(
        &dir,
        "unknown.json",
        r#"{ "command": "linear-demo", "no_such_key": 1 }"#,
    );
    let st = run(&["linear-demo", "--config", cfg.to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(2));

    // Out-of-range parameter; nothing may be written.
    let out = dir.join("never");
    let cfg = write_config(
        &dir,
        "badfrac.json",
        r#"{ "command": "corrupt-sweep", "fractions": [0.0, 1.5] }"#,
    );
    let st = run(&[
        "corrupt-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(2));
    assert!(!out.exists(), "validation error must not write output");

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn oversized_step_size_is_rejected() {
    let dir = temp_dir("step");
    // Tiny instance; eta far above 1/beta^2.
    let cfg = write_config(
        &dir,
        "meta.json",
        r#"{
            "command": "meta-verify",
            "mixture": { "num_classes": 2, "clusters_per_class": 1, "dim": 6,
                         "sigma": 0.1, "min_center_distance": 0.5, "sampling": "iid" },
            "n": 8, "k": 30, "eta": 1e6, "lipschitz_probes": 0
        }"#,
    );
    let st = run(&[
        "meta-verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("o").to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(2), "{}", String::from_utf8_lossy(&st.stderr));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn corrupt_sweep_fraction_zero_matches_train_track() {
    let dir = temp_dir("consistency");
    let mixture = r#""mixture": { "num_classes": 2, "clusters_per_class": 2, "dim": 10,
        "sigma": 0.1, "min_center_distance": 0.5, "sampling": "iid" }"#;
    let sweep_cfg = write_config(
        &dir,
        "sweep.json",
        &format!(
            r#"{{ "command": "corrupt-sweep", "seed": 5, {mixture},
                 "n": 24, "holdout_n": 60, "fractions": [0.0], "num_seeds": 1,
                 "k": 60, "iters": 25 }}"#
        ),
    );
    let track_cfg = write_config(
        &dir,
        "track.json",
        &format!(
            r#"{{ "command": "train-track", "seed": 5, {mixture},
                 "n": 24, "holdout_n": 60, "corruption": 0.0,
                 "k": 60, "iters": 25 }}"#
        ),
    );
    let sweep_out = dir.join("sweep");
    let track_out = dir.join("track");
    let st = run(&[
        "corrupt-sweep",
        "--config",
        sweep_cfg.to_str().unwrap(),
        "--out",
        sweep_out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let st = run(&[
        "train-track",
        "--config",
        track_cfg.to_str().unwrap(),
        "--out",
        track_out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));

    let sweep: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(sweep_out.join("corrupt_sweep_summary.json")).unwrap(),
    )
    .unwrap();
    let track: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(track_out.join("train_track_alignment.json")).unwrap(),
    )
    .unwrap();
    let row = &sweep["per_fraction"][0];
    let a = row["median_nuisance_fraction_initial"].as_f64().unwrap();
    let b = track["initial_alignment"]["y_nuisance_ratio"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-14, "nuisance fractions differ: {a} vs {b}");
    let a = row["median_test_error"].as_f64().unwrap();
    let b = track["final_test_error"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-14, "test errors differ: {a} vs {b}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn gmm_spectrum_writes_versioned_schema() {
    let dir = temp_dir("schema");
    let cfg = write_config(
        &dir,
        "spec.json",
        r#"{
            "command": "gmm-spectrum",
            "mixture": { "num_classes": 2, "clusters_per_class": 2, "dim": 8,
                         "sigma": 0.1, "min_center_distance": 0.5, "sampling": "balanced" },
            "n_values": [8, 16], "num_seeds": 2, "k": 40
        }"#,
    );
    let out = dir.join("o");
    let st = run(&[
        "gmm-spectrum",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let csv = std::fs::read_to_string(out.join("gmm_spectrum.csv")).unwrap();
    assert!(csv.starts_with("# gmm_spectrum v1\n"));
    assert!(csv.lines().nth(1).unwrap().starts_with("n,seed_index,index,"));
    std::fs::remove_dir_all(&dir).ok();
}
