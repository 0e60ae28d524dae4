//! End-to-end tests of the `wfn` binary: synth determinism, the training
//! oracle, identity inference, evaluation, and verification exit codes.

use std::path::Path;
use std::process::{Command, Output};

use waveletformer::data::load_ppm;
use waveletformer::network::{save_checkpoint, Model, NetworkConfig};

fn wfn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfn"))
        .args(args)
        .output()
        .expect("spawn wfn")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn count_files(dir: &Path, suffix: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(suffix))
        .count()
}

#[test]
fn synth_writes_pairs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = wfn(&[
            "synth", "--out", out.to_str().unwrap(), "--count", "4", "--size", "32x32",
            "--depth", "ramp", "--beta-range", "0.4..1.2", "--seed", "7",
        ]);
        assert_ok(&res);
    }
    assert_eq!(count_files(&out_a, ".ppm"), 8);
    assert_eq!(count_files(&out_a, "manifest.txt"), 1);
    // bit-identical rerun
    for name in ["0000_hazy.ppm", "0003_gt.ppm", "manifest.txt"] {
        assert_eq!(
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
}

#[test]
fn synth_zero_beta_gives_identical_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("zero");
    let res = wfn(&[
        "synth", "--out", out.to_str().unwrap(), "--count", "2", "--size", "16x16",
        "--depth", "radial", "--beta-range", "0..0", "--seed", "1",
    ]);
    assert_ok(&res);
    for id in ["0000", "0001"] {
        let hazy = load_ppm(out.join(format!("{id}_hazy.ppm"))).unwrap();
        let clean = load_ppm(out.join(format!("{id}_gt.ppm"))).unwrap();
        assert_eq!(hazy.data(), clean.data(), "beta = 0 must leave images unchanged");
    }
}

#[test]
fn synth_rejects_invalid_size() {
    let dir = tempfile::tempdir().unwrap();
    let res = wfn(&[
        "synth", "--out", dir.path().to_str().unwrap(), "--count", "1", "--size", "33x32",
        "--depth", "ramp", "--beta-range", "0..1", "--seed", "0",
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("even"));

    let res = wfn(&[
        "synth", "--out", dir.path().to_str().unwrap(), "--count", "1", "--size", "banana",
        "--depth", "ramp", "--beta-range", "0..1", "--seed", "0",
    ]);
    assert!(!res.status.success());
}

#[test]
fn train_improves_psnr_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    assert_ok(&wfn(&[
        "synth", "--out", data.to_str().unwrap(), "--count", "2", "--size", "32x32",
        "--depth", "blocks", "--beta-range", "0.8..1.0", "--seed", "3",
    ]));
    let config = dir.path().join("config.wfn");
    std::fs::write(
        &config,
        "stages = 1\nbase_channels = 4\nwindow = 4\nseed = 5\nsteps = 200\ncrop = 32\n\
         msssim_scales = 1\nlog_every = 0\n",
    )
    .unwrap();
    assert_ok(&wfn(&[
        "train", "--config", config.to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", run.to_str().unwrap(),
    ]));
    assert!(run.join("config.resolved").exists());
    assert!(run.join("ckpt_final.wfn").exists());
    let log = std::fs::read_to_string(run.join("metrics.log")).unwrap();
    let records: Vec<&str> = log.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(records.len(), 200);
    let psnr_of = |line: &str| line.split_whitespace().last().unwrap().parse::<f64>().unwrap();
    let first = psnr_of(records[0]);
    let last = psnr_of(records[records.len() - 1]);
    assert!(last > first, "PSNR did not improve: {first} -> {last}");
    assert!(!run.join("FAILED").exists());
}

#[test]
fn train_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.wfn");
    std::fs::write(&config, "stages = 1\nnot_a_key = 3\n").unwrap();
    let res = wfn(&[
        "train", "--config", config.to_str().unwrap(), "--data", dir.path().to_str().unwrap(),
        "--out", dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("not_a_key"));
}

#[test]
fn train_ablate_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_ok(&wfn(&[
        "synth", "--out", data.to_str().unwrap(), "--count", "1", "--size", "16x16",
        "--depth", "ramp", "--beta-range", "0.5..0.5", "--seed", "2",
    ]));
    let config = dir.path().join("config.wfn");
    std::fs::write(
        &config,
        "stages = 1\nbase_channels = 4\nwindow = 4\nseed = 1\nsteps = 2\ncrop = 16\n\
         msssim_scales = 1\nlog_every = 0\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    assert_ok(&wfn(&[
        "train", "--config", config.to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", run.to_str().unwrap(), "--ablate", "w/o-aspp",
    ]));
    let resolved = std::fs::read_to_string(run.join("config.resolved")).unwrap();
    assert!(resolved.contains("use_aspp = false"), "resolved config:\n{resolved}");
}

#[test]
fn infer_with_zero_init_checkpoint_reproduces_input() {
    let dir = tempfile::tempdir().unwrap();
    // freshly built model: zero final conv + global residual = identity
    let cfg = NetworkConfig { stages: 2, base_channels: 8, window: 4, ..Default::default() };
    let model = Model::build(cfg, 9).unwrap();
    let ckpt = dir.path().join("init.wfn");
    save_checkpoint(&model, &ckpt).unwrap();

    let data = dir.path().join("data");
    assert_ok(&wfn(&[
        "synth", "--out", data.to_str().unwrap(), "--count", "1", "--size", "64x64",
        "--depth", "ramp", "--beta-range", "1..1", "--seed", "4",
    ]));
    let input = data.join("0000_hazy.ppm");
    let output = dir.path().join("restored.ppm");
    assert_ok(&wfn(&[
        "infer", "--ckpt", ckpt.to_str().unwrap(), "--input", input.to_str().unwrap(),
        "--output", output.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(&input).unwrap(),
        std::fs::read(&output).unwrap(),
        "identity-at-init inference must reproduce the input file byte-for-byte"
    );
}

#[test]
fn infer_rejects_indivisible_extents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetworkConfig { stages: 2, base_channels: 8, window: 4, ..Default::default() };
    let model = Model::build(cfg, 9).unwrap();
    let ckpt = dir.path().join("init.wfn");
    save_checkpoint(&model, &ckpt).unwrap();
    let data = dir.path().join("data");
    assert_ok(&wfn(&[
        "synth", "--out", data.to_str().unwrap(), "--count", "1", "--size", "20x20",
        "--depth", "ramp", "--beta-range", "1..1", "--seed", "4",
    ]));
    let res = wfn(&[
        "infer", "--ckpt", ckpt.to_str().unwrap(),
        "--input", data.join("0000_hazy.ppm").to_str().unwrap(),
        "--output", dir.path().join("out.ppm").to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    // the error must name the required multiple
    assert!(String::from_utf8_lossy(&res.stderr).contains("16"));
}

#[test]
fn eval_self_comparison_reports_perfect_scores() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_ok(&wfn(&[
        "synth", "--out", data.to_str().unwrap(), "--count", "2", "--size", "16x16",
        "--depth", "ramp", "--beta-range", "0.5..1.5", "--seed", "8",
    ]));
    let report = dir.path().join("report.txt");
    assert_ok(&wfn(&[
        "eval", "--pred", data.to_str().unwrap(), "--gt", data.to_str().unwrap(),
        "--report", report.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&report).unwrap();
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields.len(), 4, "bad report line: {line}");
        assert_eq!(fields[1], "inf", "self-eval PSNR must be the +inf sentinel: {line}");
        let ssim: f64 = fields[2].parse().unwrap();
        assert!((ssim - 1.0).abs() < 1e-9, "self-eval SSIM must be 1: {line}");
    }
    assert!(text.lines().last().unwrap().starts_with("MEAN"));
}

#[test]
fn eval_requires_matching_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred");
    let gt = dir.path().join("gt");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    assert_ok(&wfn(&[
        "synth", "--out", pred.to_str().unwrap(), "--count", "1", "--size", "16x16",
        "--depth", "ramp", "--beta-range", "0.5..0.5", "--seed", "1",
    ]));
    let res = wfn(&[
        "eval", "--pred", pred.to_str().unwrap(), "--gt", gt.to_str().unwrap(),
        "--report", dir.path().join("r.txt").to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("counterpart"));
}

#[test]
fn full_pipeline_restores_better_than_hazy_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_ok(&wfn(&[
        "synth", "--out", data.to_str().unwrap(), "--count", "1", "--size", "32x32",
        "--depth", "ramp", "--beta-range", "1.0..1.0", "--seed", "11",
    ]));
    let config = dir.path().join("config.wfn");
    std::fs::write(
        &config,
        "stages = 1\nbase_channels = 8\nwindow = 4\nseed = 11\nsteps = 250\ncrop = 32\n\
         msssim_scales = 1\naugment = false\nlog_every = 0\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    assert_ok(&wfn(&[
        "train", "--config", config.to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", run.to_str().unwrap(),
    ]));

    let preds = dir.path().join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    assert_ok(&wfn(&[
        "infer", "--ckpt", run.join("ckpt_final.wfn").to_str().unwrap(),
        "--input", data.join("0000_hazy.ppm").to_str().unwrap(),
        "--output", preds.join("0000_gt.ppm").to_str().unwrap(),
    ]));

    // score the restored image and the untouched hazy input against gt
    let gt_dir = dir.path().join("gt");
    std::fs::create_dir_all(&gt_dir).unwrap();
    std::fs::copy(data.join("0000_gt.ppm"), gt_dir.join("0000_gt.ppm")).unwrap();
    let hazy_as_pred = dir.path().join("hazy_pred");
    std::fs::create_dir_all(&hazy_as_pred).unwrap();
    std::fs::copy(data.join("0000_hazy.ppm"), hazy_as_pred.join("0000_gt.ppm")).unwrap();

    let psnr_of = |pred_dir: &Path| -> f64 {
        let report = dir.path().join("r.txt");
        assert_ok(&wfn(&[
            "eval", "--pred", pred_dir.to_str().unwrap(), "--gt", gt_dir.to_str().unwrap(),
            "--report", report.to_str().unwrap(),
        ]));
        let text = std::fs::read_to_string(&report).unwrap();
        let mean = text.lines().last().unwrap();
        mean.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    let restored_psnr = psnr_of(&preds);
    let hazy_psnr = psnr_of(&hazy_as_pred);
    assert!(
        restored_psnr > hazy_psnr + 1.0,
        "restoration ({restored_psnr:.2} dB) must beat the hazy baseline ({hazy_psnr:.2} dB)"
    );
}

#[test]
fn train_failure_is_marked() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_ok(&wfn(&[
        "synth", "--out", data.to_str().unwrap(), "--count", "1", "--size", "16x16",
        "--depth", "ramp", "--beta-range", "0.5..0.5", "--seed", "2",
    ]));
    // crop 20 is not divisible by 2^stages * window = 8
    let config = dir.path().join("config.wfn");
    std::fs::write(&config, "stages = 1\nbase_channels = 4\nwindow = 4\nsteps = 2\ncrop = 20\n").unwrap();
    let run = dir.path().join("run");
    let res = wfn(&[
        "train", "--config", config.to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", run.to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    assert!(run.join("FAILED").exists(), "failed runs must carry the marker file");
}

#[test]
fn verify_suites_exit_zero() {
    for suite in ["wavelet", "metrics", "asm"] {
        let res = wfn(&["verify", "--suite", suite]);
        assert_ok(&res);
        let stdout = String::from_utf8_lossy(&res.stdout);
        assert!(stdout.contains("0 failed"), "{suite}:\n{stdout}");
    }
    let res = wfn(&["verify", "--suite", "nonsense"]);
    assert!(!res.status.success());
}
