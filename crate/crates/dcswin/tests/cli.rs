//! Command-line contract: exit codes, diagnostics, and artifact plumbing,
//! exercised against the real binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dcswin"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code (signal?)")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Per-test scratch directory under the system temp dir.
fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dcswin-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

/// Smallest useful run: two 32² synthetic scenes, four classes, four steps.
fn tiny_config(out_dir: &Path) -> String {
    format!(
        "model.preset = swin_nano\n\
         model.num_classes = 4\n\
         model.variant = dcfam\n\
         train.steps = 4\n\
         train.batch = 2\n\
         train.eval_every = 4\n\
         data.synth_count = 2\n\
         data.synth_size = 32\n\
         data.synth_classes = 4\n\
         data.tile = 32\n\
         data.stride = 32\n\
         output.dir = {}\n",
        out_dir.display()
    )
}

#[test]
fn defaults_prints_a_parseable_config() {
    let out = run(&["defaults"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = dcswin::config::RunConfig::parse(&text).expect("own defaults must parse");
    assert_eq!(cfg, dcswin::config::RunConfig::default());
}

#[test]
fn unknown_key_fails_with_exit_2_and_names_the_key() {
    let dir = scratch("badkey");
    let cfg = write_config(&dir, "bad.cfg", "model.preset = swin_nano\ntrain.stepz = 5\n");
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("train.stepz"),
        "diagnostic must name the bad key: {}",
        stderr(&out)
    );
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_config_file_fails_with_exit_2() {
    let out = run(&["train", "--config", "/nonexistent/nowhere.cfg"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn divergent_learning_rate_exits_3() {
    let dir = scratch("diverge");
    let body = format!("{}train.lr = 1000.0\n", tiny_config(&dir.join("run")));
    let cfg = write_config(&dir, "div.cfg", &body);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("diverged"), "stderr: {}", stderr(&out));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_eval_predict_round_trip_and_mismatch_rejection() {
    let dir = scratch("roundtrip");
    let run_dir = dir.join("run");
    let cfg = write_config(&dir, "tiny.cfg", &tiny_config(&run_dir));

    // Train writes the log and the checkpoint.
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let ckpt = run_dir.join("model.ckpt");
    assert!(run_dir.join("train.tsv").exists());
    assert!(ckpt.exists());

    // Eval on the same split succeeds and reports the headline metrics.
    let out = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let tsv = fs::read_to_string(run_dir.join("eval.tsv")).unwrap();
    for key in ["oa\t", "miou\t", "mean_f1\t"] {
        assert!(tsv.contains(key), "eval.tsv missing {key}: {tsv}");
    }

    // Predict consumes a raw image and emits the color map and label map.
    let image = dir.join("scene.ppm");
    let mut ppm = b"P6\n32 32\n255\n".to_vec();
    ppm.extend((0..32 * 32 * 3).map(|i| (i % 251) as u8));
    fs::write(&image, ppm).unwrap();
    let pred_base = dir.join("pred");
    let out = run(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out",
        pred_base.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let color = fs::read(dir.join("pred.ppm")).unwrap();
    let labels = fs::read(dir.join("pred.pgm")).unwrap();
    assert!(color.starts_with(b"P6"));
    assert!(labels.starts_with(b"P5"));

    // A checkpoint trained for 4 classes must be rejected by a 6-class model
    // with a diagnostic naming the mismatched tensor.
    let six = tiny_config(&run_dir)
        .replace("num_classes = 4", "num_classes = 6")
        .replace("synth_classes = 4", "synth_classes = 6");
    let cfg6 = write_config(&dir, "six.cfg", &six);
    let out = run(&[
        "eval",
        "--config",
        cfg6.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("shape mismatch"), "stderr: {}", stderr(&out));

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn verify_exit_code_counts_failing_groups() {
    let out = run(&["verify"]);
    assert_eq!(code(&out), 0, "clean tree must verify: {}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0 failed"));

    let out = run(&["verify", "--inject-fault"]);
    assert!(code(&out) >= 1, "an injected gradient fault must flip a check");
}

#[test]
fn bench_rejects_a_single_size() {
    let out = run(&["bench-attention", "--sizes", "512"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bench_writes_tsv_with_slope_footers() {
    let dir = scratch("bench");
    let tsv = dir.join("bench.tsv");
    let out = run(&["bench-attention", "--sizes", "256,512", "--out", tsv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = fs::read_to_string(&tsv).unwrap();
    assert!(text.starts_with("n\tt_linear"));
    assert!(text.contains("# linear_slope\t"));
    assert!(text.contains("# quadratic_slope\t"));
    fs::remove_dir_all(&dir).ok();
}
