use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use phaserec::eval::EvalReport;
use phaserec::model::load_checkpoint;

const SYNTH: &str = r#"
seed = 3
output = "corpus"

[synth]
taxonomy = ["Preparation", "Exploration", "Reconstruction", "Verification", "Closure"]
mean_durations = [8.0, 25.0, 30.0, 25.0, 10.0]
missing_probs = [0.3, 0.07, 0.04, 0.07, 0.4]
videos = 6
feature_dim = 8
separation = 4.0
noise = 1.0
drift = 2.0
"#;

const RUN: &str = r#"
seed = 3
output = "run"

[data]
annotations = "corpus/annotations"
features = "corpus/features"
taxonomy = "corpus/taxonomy.txt"

[model]
input_dim = 8
d_model = 8
heads = 2
branch_lengths = [4, 8]

[optim]
epochs = 2
lr0 = 1e-3

[split]
mode = "cross_validation"
k = 3
"#;

fn phaserec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phaserec"))
        .args(args)
        .current_dir(dir)
        .env("PHASEREC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn corpus() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("synth.toml"), SYNTH).unwrap();
    fs::write(dir.path().join("run.toml"), RUN).unwrap();
    ok(phaserec(dir.path(), &["synth", "--config", "synth.toml"]));
    dir
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = corpus();
    let d = dir.path();
    assert_eq!(fs::read_dir(d.join("corpus/features")).unwrap().count(), 6);
    assert!(fs::read_to_string(d.join("corpus/manifest.csv"))
        .unwrap()
        .starts_with("video_id,T_k,present_phases\n"));

    ok(phaserec(
        d,
        &["train", "--config", "run.toml", "--round", "0"],
    ));
    let round = d.join("run/round0");
    for f in [
        "train_log.csv",
        "last.ckpt",
        "best.ckpt",
        "report.csv",
        "report.txt",
        "spi_table.csv",
    ] {
        assert!(round.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(round.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let summary = ok(phaserec(
        d,
        &["eval", "--config", "run.toml", "--round", "0"],
    ));
    assert!(summary.contains("accuracy"));
    let report =
        EvalReport::from_csv(&fs::read_to_string(round.join("eval/report.csv")).unwrap()).unwrap();
    assert!(report.spi_error.is_some());
    assert_eq!(
        fs::read_to_string(round.join("eval/report.csv")).unwrap(),
        fs::read_to_string(round.join("report.csv")).unwrap()
    );
    let ribbons = fs::read_dir(round.join("eval/ribbons")).unwrap().count();
    assert_eq!(ribbons, 2 * report.per_video.len());

    let features = d.join("corpus/features/vid002.prfv");
    let frames = phaserec::features::read_prfv(&features).unwrap().len();
    let csv = ok(phaserec(
        d,
        &[
            "predict",
            "--checkpoint",
            "run/round0/last.ckpt",
            "--features",
            features.to_str().unwrap(),
        ],
    ));
    assert_eq!(csv.lines().count(), frames + 1);
    assert!(csv.starts_with("video_id,t,phase,spi_hat,p0,p1,p2,p3,p4\n"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = corpus();
    let d = dir.path();
    let outputs = [
        "train_log.csv",
        "last.ckpt",
        "best.ckpt",
        "report.csv",
        "report.txt",
    ];
    ok(phaserec(
        d,
        &["train", "--config", "run.toml", "--round", "1"],
    ));
    let first: Vec<Vec<u8>> = outputs
        .iter()
        .map(|f| fs::read(d.join("run/round1").join(f)).unwrap())
        .collect();
    fs::remove_dir_all(d.join("run")).unwrap();
    ok(phaserec(
        d,
        &["train", "--config", "run.toml", "--round", "1"],
    ));
    for (f, bytes) in outputs.iter().zip(first) {
        assert_eq!(
            fs::read(d.join("run/round1").join(f)).unwrap(),
            bytes,
            "{f}"
        );
    }
}

#[test]
fn baseline_ablation_drops_both_components() {
    let dir = corpus();
    let d = dir.path();
    ok(phaserec(
        d,
        &[
            "train",
            "--config",
            "run.toml",
            "--round",
            "0",
            "--ablation",
            "spi=off,stfeat=off",
        ],
    ));
    let model = load_checkpoint(d.join("run/round0/last.ckpt")).unwrap();
    assert!(!model.config().spi_head);
    assert!(!model.config().refiner_enabled);
    assert!(model
        .layout()
        .entries()
        .iter()
        .all(|e| !e.name.starts_with("refiner.attn") && e.name != "spi_head.weight"));
    let report =
        EvalReport::from_csv(&fs::read_to_string(d.join("run/round0/report.csv")).unwrap())
            .unwrap();
    assert_eq!(report.spi_error, None);
    let recorded = fs::read_to_string(d.join("run/run.toml")).unwrap();
    assert!(recorded.contains("spi_head = false") && recorded.contains("refiner_enabled = false"));
}

#[test]
fn spi_table_lists_excluded_videos() {
    let dir = corpus();
    let d = dir.path();
    let out = phaserec(
        d,
        &[
            "spi-table",
            "corpus/annotations",
            "--taxonomy",
            "corpus/taxonomy.txt",
        ],
    );
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let manifest = fs::read_to_string(d.join("corpus/manifest.csv")).unwrap();
    for line in manifest.lines().skip(1) {
        let id = line.split(',').next().unwrap();
        assert_eq!(
            stderr.contains(id),
            line.split(';').count() < 5,
            "{line}: {stderr}"
        );
    }
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().nth(1).unwrap().ends_with(",1"));
}

#[test]
fn stats_on_empty_directory_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let out = phaserec(dir.path(), &["stats", "empty"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no annotations found"));
}

#[test]
fn exit_codes() {
    let dir = corpus();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "output = \"x\"\n[model]\nwidth = 3\n").unwrap();
    let out = phaserec(d, &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("width") && err.contains("line 3"), "{err}");

    assert_eq!(
        phaserec(d, &["train", "--config", "missing.toml"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        phaserec(
            d,
            &["train", "--config", "run.toml", "--ablation", "spi=maybe"]
        )
        .status
        .code(),
        Some(2)
    );

    let diverging = RUN
        .replace("lr0 = 1e-3", "lr0 = 1e38")
        .replace("output = \"run\"", "output = \"nan\"");
    fs::write(d.join("nan.toml"), diverging).unwrap();
    let out = phaserec(d, &["train", "--config", "nan.toml", "--round", "0"]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = Command::new(env!("CARGO_BIN_EXE_phaserec"))
        .args(["stats", "corpus/annotations"])
        .current_dir(d)
        .env("PHASEREC_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
