//! End-to-end binary tests: exit codes, report schema, determinism of
//! generated artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn memvid(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memvid"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_desk_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        "\
# desk-scale smoke configuration
num_records = 40
d_v = 9
app_hidden = 9
app_channels = 9
d_t = 8
d_raw = 8
t_m = 6
latent_dim = 4
epochs = 3
eval_epochs = 2
k = 2
enc_channels = 6
enc_embed_dim = 8
enc_proj_dim = 6
enc_reg_hidden = 6
corpus_videos = 2
corpus_clips = 5
train_frac = 0.7
val_frac = 0.15
test_frac = 0.15
",
    )
    .unwrap();
    path
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "definitely_not_a_key = 1\n").unwrap();
    let out = memvid(
        &["gen-data", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("definitely_not_a_key"));
}

#[test]
fn bad_set_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = memvid(&["gen-data", "--set", "epochs"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = memvid(&["train"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = memvid(&["train", "--config", "no-such-file.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_desk_config(dir.path());
    let run = |out_name: &str, data: &str| {
        let out = memvid(
            &[
                "gen-data",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out_name,
                "--set",
                &format!("dataset_path={data}"),
            ],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{out:?}");
    };
    run("out-a", "a.jsonl");
    run("out-b", "b.jsonl");
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn full_flow_reports_metrics_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_desk_config(dir.path());
    let cfg_arg = ["--config", cfg.to_str().unwrap()];

    let out = memvid(&["gen-data", cfg_arg[0], cfg_arg[1]], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");

    let out = memvid(
        &["train", cfg_arg[0], cfg_arg[1], "--set", "use_tmccl=false"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = stdout_json(&out);
    assert!(report["loss_trace"].as_array().is_some());
    assert!(dir.path().join("out/model.json").exists());

    let out = memvid(&["eval", cfg_arg[0], cfg_arg[1]], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = stdout_json(&out);
    let st_rc = report["metrics"]["st_rc"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&st_rc));
    let w = &report["fusion_weights"];
    let sum = w["theta_v"].as_f64().unwrap()
        + w["theta_t"].as_f64().unwrap()
        + w["theta_m"].as_f64().unwrap();
    assert!((sum - 1.0).abs() < 1e-9);
    assert!(dir.path().join("out/report.json").exists());

    let out = memvid(&["summarize", cfg_arg[0], cfg_arg[1]], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = stdout_json(&out);
    assert!(report["metrics"]["f1"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["summaries"].as_array().unwrap().len(), 2);
}

#[test]
fn grad_check_exits_0_and_reports_per_op_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = memvid(&["grad-check"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = stdout_json(&out);
    let checks = report["grad_checks"].as_array().unwrap();
    assert!(checks.len() >= 9);
    for c in checks {
        assert!(c["max_rel_error"].as_f64().unwrap() < 1e-4);
        assert_eq!(c["pass"].as_bool(), Some(true));
    }
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("tmccl_loss"), "{stderr}");
    assert!(stderr.contains("PASS"));
}
