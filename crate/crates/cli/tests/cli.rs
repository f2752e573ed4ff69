//! End-to-end command tests against the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::tempdir;

fn vldn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vldn"))
}

fn run(args: &[&str]) -> Output {
    vldn().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_micro_config(dir: &Path) -> PathBuf {
    let path = dir.join("micro.toml");
    std::fs::write(
        &path,
        r#"
[data]
n_samples = 8
frames = 12
train_fraction = 0.5

[model]
d_model = 16
n_blocks = 1
n_heads = 2
d_text = 8

[diffusion]
t_steps = 10
ddim_steps = 5

[train]
epochs = 2
batch_size = 4
lr = 0.001
checkpoint_every = 1
predictor_epochs = 2
predictor_batch_size = 4
predictor_lr = 0.001
predictor_hidden = 8
"#,
    )
    .unwrap();
    path
}

fn gen_micro_data(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let out = run(&[
        "gen-data",
        "--n",
        "8",
        "--frames",
        "12",
        "--seed",
        "5",
        "--train-fraction",
        "0.5",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_ok(&out);
    data
}

#[test]
fn gen_data_count_and_determinism() {
    let dir = tempdir().unwrap();
    let a = gen_micro_data(dir.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 8);
    assert!(a.join("stats.txt").exists());
    assert!(a.join("run.json").exists());

    let dir_b = tempdir().unwrap();
    let b = gen_micro_data(dir_b.path());
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("samples/sample_00003.vldx")).unwrap(),
        std::fs::read(b.join("samples/sample_00003.vldx")).unwrap()
    );
}

#[test]
fn gen_data_rejects_indivisible_frames() {
    let dir = tempdir().unwrap();
    let out = run(&[
        "gen-data",
        "--n",
        "1",
        "--frames",
        "59",
        "--out",
        dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple of 6"));
}

#[test]
fn gen_data_refuses_occupied_dir_without_force() {
    let dir = tempdir().unwrap();
    let data = gen_micro_data(dir.path());
    let out = run(&[
        "gen-data",
        "--n",
        "2",
        "--frames",
        "12",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[
        "gen-data",
        "--n",
        "2",
        "--frames",
        "12",
        "--out",
        data.to_str().unwrap(),
        "--force",
    ]);
    assert_ok(&out);
}

#[test]
fn full_micro_pipeline() {
    let dir = tempdir().unwrap();
    let data = gen_micro_data(dir.path());
    let config = write_micro_config(dir.path());
    let pred_dir = dir.path().join("pred");
    let train_dir = dir.path().join("train");

    // predictor
    let out = run(&[
        "train-predictor",
        "--data",
        data.to_str().unwrap(),
        "--out",
        pred_dir.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let pred_ckpt = pred_dir.join("predictor.ckpt");
    assert!(pred_ckpt.exists());
    let csv = std::fs::read_to_string(pred_dir.join("predictor_loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3); // header + 2 epochs

    // missing predictor is an explicit, flag-naming error
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--predictor",
        dir.path().join("nope.ckpt").to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--predictor"));

    // diffusion training
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--predictor",
        pred_ckpt.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let ckpt = train_dir.join("model.ckpt");
    assert!(ckpt.exists());
    let loss_csv = std::fs::read_to_string(train_dir.join("loss.csv")).unwrap();
    assert_eq!(loss_csv.lines().count(), 3);
    assert!(loss_csv.lines().nth(0).unwrap().starts_with("epoch,simple,emotional,vel,total"));
    assert!(train_dir.join("run.json").exists());

    // resume continues the loss log at the next epoch index
    let config4 = dir.path().join("micro4.toml");
    let mut text = std::fs::read_to_string(&config).unwrap();
    text = text.replace("epochs = 2", "epochs = 4");
    std::fs::write(&config4, text).unwrap();
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--predictor",
        pred_ckpt.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
        "--resume",
        "--config",
        config4.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let loss_csv = std::fs::read_to_string(train_dir.join("loss.csv")).unwrap();
    let lines: Vec<&str> = loss_csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("3,"));
    assert!(lines[4].starts_with("4,"));

    // sampling: deterministic bytes, VA validation, plot + csv
    let m1 = dir.path().join("m1.vldm");
    let m2 = dir.path().join("m2.vldm");
    let svg = dir.path().join("m1.svg");
    let frame_csv = dir.path().join("m1.csv");
    let base_args = |out_path: &Path| {
        vec![
            "sample".to_string(),
            "--checkpoint".into(),
            ckpt.to_str().unwrap().into(),
            "--data".into(),
            data.to_str().unwrap().into(),
            "--sample-id".into(),
            "sample_00004".into(),
            "--seed".into(),
            "11".into(),
            "--config".into(),
            config.to_str().unwrap().into(),
            "--out".into(),
            out_path.to_str().unwrap().into(),
        ]
    };
    let mut args1 = base_args(&m1);
    args1.extend([
        "--plot".to_string(),
        svg.to_str().unwrap().to_string(),
        "--csv".to_string(),
        frame_csv.to_str().unwrap().to_string(),
    ]);
    let out = vldn().args(&args1).output().unwrap();
    assert_ok(&out);
    let out = vldn().args(&base_args(&m2)).output().unwrap();
    assert_ok(&out);
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
    assert!(std::fs::read_to_string(&frame_csv)
        .unwrap()
        .starts_with("frame,c0"));
    assert!(dir.path().join("m1.run.json").exists());

    // out-of-range valence is a usage error
    let mut bad = base_args(&dir.path().join("m3.vldm"));
    bad.extend(["--valence".to_string(), "2.0".to_string()]);
    let out = vldn().args(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // VLDN_SEED wins over --seed
    let m_env = dir.path().join("menv.vldm");
    let m123 = dir.path().join("m123.vldm");
    let out = vldn()
        .args(&base_args(&m_env))
        .env("VLDN_SEED", "123")
        .output()
        .unwrap();
    assert_ok(&out);
    let mut args123 = base_args(&m123);
    let seed_pos = args123.iter().position(|a| a == "11").unwrap();
    args123[seed_pos] = "123".into();
    let out = vldn().args(&args123).output().unwrap();
    assert_ok(&out);
    assert_eq!(std::fs::read(&m_env).unwrap(), std::fs::read(&m123).unwrap());
    assert_ne!(std::fs::read(&m_env).unwrap(), std::fs::read(&m1).unwrap());

    // eval: ground truth against itself
    let gen_dir = dir.path().join("gen");
    std::fs::create_dir_all(&gen_dir).unwrap();
    let manifest = vldn_core::data::io::load_manifest(&data.join("manifest.json")).unwrap();
    for id in &manifest.split.test {
        let entry = manifest.entry(id).unwrap();
        let sample = vldn_core::data::io::load_manifest_sample(&data, &entry.path).unwrap();
        vldn_core::data::io::save_motion(
            &gen_dir.join(format!("{id}.vldm")),
            &sample.listener_motion,
        )
        .unwrap();
    }
    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--generated",
        gen_dir.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--sid-k",
        "4",
    ]);
    assert_ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
            .unwrap();
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 12);
    for cell in cells {
        let metric = cell["metric"].as_str().unwrap();
        let value = cell["value"].as_f64().unwrap();
        if ["fd", "pfd", "mse"].contains(&metric) {
            assert!(value < 1e-6, "{metric} = {value}");
        }
    }
    let csv = std::fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);

    // pairing failure lists the missing ids
    std::fs::remove_file(gen_dir.join(format!("{}.vldm", manifest.split.test[0]))).unwrap();
    let out = run(&[
        "eval",
        "--generated",
        gen_dir.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--sid-k",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&manifest.split.test[0]));

    // inspect each artifact kind
    for (path, needle) in [
        (data.join("samples/sample_00000.vldx"), "dyad sample"),
        (m1.clone(), "motion file"),
        (ckpt.clone(), "checkpoint kind=denoiser"),
        (data.join("manifest.json"), "dataset manifest"),
        (eval_dir.join("report.json"), "metric report"),
    ] {
        let out = run(&["inspect", path.to_str().unwrap()]);
        assert_ok(&out);
        assert!(
            String::from_utf8_lossy(&out.stdout).contains(needle),
            "inspect {} missing {needle}",
            path.display()
        );
    }
}

#[test]
fn paper_profile_header_echo() {
    let dir = tempdir().unwrap();
    // paper profile needs 240-frame clips; keep everything else tiny
    let data = dir.path().join("data240");
    let out = run(&[
        "gen-data",
        "--n",
        "4",
        "--frames",
        "240",
        "--seed",
        "3",
        "--train-fraction",
        "0.75",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_ok(&out);

    let config = dir.path().join("paper_micro.toml");
    std::fs::write(
        &config,
        r#"
[model]
d_model = 16
n_blocks = 1
n_heads = 2
d_text = 8

[train]
epochs = 1
predictor_epochs = 1
predictor_hidden = 8
"#,
    )
    .unwrap();

    let pred_dir = dir.path().join("pred");
    let out = run(&[
        "train-predictor",
        "--data",
        data.to_str().unwrap(),
        "--out",
        pred_dir.to_str().unwrap(),
        "--profile",
        "paper",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_ok(&out);

    let train_dir = dir.path().join("train");
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--predictor",
        pred_dir.join("predictor.ckpt").to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
        "--profile",
        "paper",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("t_steps=1000"), "{stdout}");
    assert!(stdout.contains("batch_size=64"), "{stdout}");
    assert!(stdout.contains("lr=1e-5"), "{stdout}");
    assert!(stdout.contains("ddim_steps=100"), "{stdout}");
}

#[test]
fn locked_run_dir_is_refused() {
    let dir = tempdir().unwrap();
    let data = gen_micro_data(dir.path());
    let out_dir = dir.path().join("locked");
    std::fs::create_dir_all(&out_dir).unwrap();
    std::fs::write(out_dir.join(".vldn.lock"), "1\n").unwrap();
    let out = run(&[
        "train-predictor",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}
