use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn permpi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_permpi"))
        .args(args)
        .env_remove("PERMPI_OUT")
        .output()
        .expect("spawn permpi")
}

fn ok(args: &[&str]) -> String {
    let out = permpi(args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--epochs", "2", "--batch", "64", "--unseen-rays", "16", "--planes", "4", "--layers", "1", "--width", "8",
    "--freqs", "2", "--schedule-epoch", "1", "--checkpoint-every", "1", "--seed", "5", "--quiet",
];

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let run = tmp.path().join("run");
    ok(&["gen-synthetic", "--preset", "two-plane", "--out", s(&scene), "--width", "16", "--height", "16"]);
    assert!(scene.join("manifest.json").exists());

    let mut args = vec!["train", "--scene", s(&scene), "--out", s(&run)];
    args.extend_from_slice(TINY);
    ok(&args);
    for f in ["latest.ckpt", "epoch_0001.ckpt", "epoch_0002.ckpt", "train_log.csv", "config.toml"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,step,mse,ac,dc,total,lr"));
    assert_eq!(log.lines().count(), 1 + 2 * 12);

    // Resume from epoch 1 with the checkpoint's own config.
    let resumed = tmp.path().join("resumed");
    fs::create_dir_all(&resumed).unwrap();
    fs::copy(run.join("train_log.csv"), resumed.join("train_log.csv")).unwrap();
    let ck = run.join("epoch_0001.ckpt");
    ok(&["train", "--scene", s(&scene), "--out", s(&resumed), "--resume", s(&ck), "--quiet"]);
    assert_eq!(fs::read(run.join("latest.ckpt")).unwrap(), fs::read(resumed.join("latest.ckpt")).unwrap());
    assert_eq!(fs::read(run.join("train_log.csv")).unwrap(), fs::read(resumed.join("train_log.csv")).unwrap());

    let png = tmp.path().join("render.png");
    ok(&["render", "--ckpt", s(&run), "--pose-interp", "0:2:0.25", "--out", s(&png)]);
    for f in ["render.png", "render_depth.png", "render_depth.f32", "render_depth.json"] {
        assert!(tmp.path().join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::metadata(tmp.path().join("render_depth.f32")).unwrap().len(), 16 * 16 * 4);

    let csv = tmp.path().join("eval.csv");
    let table = ok(&["eval", "--scene", s(&scene), "--ckpt", s(&run), "--out", s(&csv)]);
    assert!(table.starts_with("view,psnr,ssim,average_no_lpips"));
    assert_eq!(table.lines().count(), 1 + 2 + 1);
    assert_eq!(fs::read_to_string(&csv).unwrap(), table);
}

#[test]
fn analysis_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["analyze-overlap", "--trials", "200", "--samples", "16", "--out", s(tmp.path())]);
    assert!(out.contains("contrast"));
    assert!(tmp.path().join("report.csv").exists() && tmp.path().join("histogram.csv").exists());

    let out = ok(&["sparse-oracle", "--cgt", "0.25,0.5,1", "--m", "3"]);
    assert!(out.contains("first-sample closed form: yes"), "{out}");
}

#[test]
fn failures_print_one_parseable_line() {
    let out = permpi(&["train", "--scene", "/nonexistent/scene", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error kind=MissingManifest msg=\""), "{err}");

    let out = permpi(&["gen-synthetic", "--preset", "nope", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error kind=Config"));

    assert_eq!(permpi(&["render"]).status.code(), Some(2));
    let help = ok(&["train", "--help"]);
    for flag in ["--planes", "--batch", "--epochs", "--lambda-ac", "--schedule-epoch", "--resume"] {
        assert!(help.contains(flag), "help lacks {flag}");
    }
}
