use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn inse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inse"))
        .args(args)
        .current_dir(cwd)
        .env_remove("INSE_SEED")
        .env_remove("INSE_CONFIG")
        .output()
        .expect("run inse")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_wav(path: &Path, channels: &[Vec<f32>]) {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: 48_000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for i in 0..channels[0].len() {
        for c in channels {
            w.write_sample(c[i]).unwrap();
        }
    }
    w.finalize().unwrap();
}

fn tone(freq: f32, n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.3 * (std::f32::consts::TAU * freq * i as f32 / 48_000.0).sin())
        .collect()
}

/// Reads the GTSPEC1 dimensions through the library.
fn gtspec_dims(path: &Path) -> (usize, usize) {
    let s = inse_core::frontend::Spectrogram::load(path).unwrap();
    (s.n_bands(), s.n_frames())
}

struct Toy {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

/// A 10-excerpt toy corpus with a ref-ref row per excerpt, as real manifests have.
fn toy() -> &'static Toy {
    static TOY: OnceLock<Toy> = OnceLock::new();
    TOY.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&inse(
            &["toy", "--out-dir", "toy", "--excerpts", "10"],
            &root,
        ));
        let path = root.join("toy/manifest.csv");
        let mut text = std::fs::read_to_string(&path).unwrap();
        let mut extra = String::new();
        for line in text.lines().skip(1).filter(|l| l.contains("_snr0.wav")) {
            let f: Vec<&str> = line.split(',').collect();
            extra += &format!("{0},{0},5,none,,mixed,{1}\n", f[0], f[6]);
        }
        text += &extra;
        std::fs::write(&path, text).unwrap();
        Toy { _dir: dir, root }
    })
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = inse(&["spectrogram", "nope.wav", "out.gt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.wav"));
    let out = inse(&["train", "--manifest", "missing.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = inse(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreadable_audio_is_a_processing_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.wav"), b"RIFF????").unwrap();
    let out = inse(&["spectrogram", "bad.wav", "out.gt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn spectrogram_of_an_excerpt_and_of_stereo_input() {
    let dir = tempfile::tempdir().unwrap();
    let mono = tone(440.0, 345_600);
    write_wav(&dir.path().join("mono.wav"), std::slice::from_ref(&mono));
    ok(&inse(&["spectrogram", "mono.wav", "mono.gt"], dir.path()));
    assert_eq!(gtspec_dims(&dir.path().join("mono.gt")), (32, 360));

    // Left and right average to the mono signal.
    let left: Vec<f32> = mono.iter().map(|v| v * 1.5).collect();
    let right: Vec<f32> = mono.iter().map(|v| v * 0.5).collect();
    write_wav(&dir.path().join("stereo.wav"), &[left, right]);
    let out = inse(
        &["-v", "spectrogram", "stereo.wav", "stereo.gt"],
        dir.path(),
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("downmixed"));
    let a = inse_core::frontend::Spectrogram::load(dir.path().join("mono.gt")).unwrap();
    let b = inse_core::frontend::Spectrogram::load(dir.path().join("stereo.gt")).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-3);
    }
}

#[test]
fn synth_writes_label_five_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(&inse(
        &["synth", "--out-dir", "s", "--seed", "3"],
        dir.path(),
    ));
    let text = std::fs::read_to_string(dir.path().join("s/manifest.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .all(|r| r.split(',').nth(2).unwrap().parse::<f64>().unwrap() == 5.0));
    let out = inse(
        &["synth", "--out-dir", "s", "--level-db", "-60"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn one_epoch_training_writes_five_folds() {
    let t = toy();
    let out = ok(&inse(
        &[
            "train",
            "--manifest",
            "toy/manifest.csv",
            "--out-dir",
            "smoke",
            "--epochs",
            "1",
            "--width",
            "4",
        ],
        &t.root,
    ));
    assert!(out.contains("folds 5"));
    let report = std::fs::read_to_string(t.root.join("smoke/fold_report.csv")).unwrap();
    let folds: std::collections::BTreeSet<&str> = report
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').next())
        .filter(|f| *f != "mean")
        .collect();
    assert_eq!(folds.len(), 5);
    for i in 0..5 {
        assert!(t.root.join(format!("smoke/fold{i}.ckpt")).exists());
    }
}

#[test]
fn trained_checkpoint_scores_identity_near_five_and_is_deterministic() {
    let t = toy();
    let args = |dir: &'static str| {
        vec![
            "train",
            "--manifest",
            "toy/manifest.csv",
            "--out-dir",
            dir,
            "--width",
            "4",
            "--epochs",
            "12",
            "--batch-size",
            "8",
            "--learning-rate",
            "1e-3",
            "--only-folds",
            "0",
            "--seed",
            "5",
        ]
    };
    ok(&inse(&args("run_a"), &t.root));
    ok(&inse(&args("run_b"), &t.root));
    let a = std::fs::read(t.root.join("run_a/fold0.ckpt")).unwrap();
    let b = std::fs::read(t.root.join("run_b/fold0.ckpt")).unwrap();
    assert!(a == b, "checkpoints differ between identical runs");

    let r = "toy/toy_000_ref.wav";
    let out = ok(&inse(
        &[
            "predict",
            "--checkpoint",
            "run_a/fold0.ckpt",
            "--ref",
            r,
            "--deg",
            r,
        ],
        &t.root,
    ));
    let (path, mos) = out.trim().split_once('\t').unwrap();
    assert_eq!(path, r);
    let mos: f64 = mos.parse().unwrap();
    assert!(mos > 4.5 && mos <= 5.0, "{mos}");

    let listing = ok(&inse(
        &[
            "predict",
            "--checkpoint",
            "run_a/fold0.ckpt",
            "--manifest",
            "toy/manifest.csv",
        ],
        &t.root,
    ));
    assert_eq!(listing.lines().count(), 70);
    for line in listing.lines() {
        let v: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!((1.0..=5.0).contains(&v));
    }
}

#[test]
fn evaluate_with_perfect_predictions() {
    let t = toy();
    let manifest = inse_core::dataset::Manifest::load(t.root.join("toy/manifest.csv")).unwrap();
    let tsv: String = manifest
        .entries
        .iter()
        .map(|e| format!("{}\t{}\n", e.deg_path.display(), e.label))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pred.tsv"), tsv).unwrap();
    let m = t.root.join("toy/manifest.csv");
    let out = ok(&inse(
        &[
            "evaluate",
            "--manifest",
            m.to_str().unwrap(),
            "--predictions",
            "pred.tsv",
            "--output",
            "rep.csv",
        ],
        dir.path(),
    ));
    assert!(out.contains("ranking violation rate 0.0000"));
    let report = std::fs::read_to_string(dir.path().join("rep.csv")).unwrap();
    let overall = report.lines().find(|l| l.starts_with("overall,")).unwrap();
    let f: Vec<&str> = overall.split(',').collect();
    assert_eq!(f[2], "70");
    assert!((f[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn help_lists_reference_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&inse(&["train", "--help"], dir.path()));
    for needle in [
        "4e-5",
        "[default: 32]",
        "[default: 50]",
        "[default: 5",
        "80/20",
    ] {
        assert!(out.contains(needle), "missing {needle}");
    }
    for sub in [
        "spectrogram",
        "synth",
        "toy",
        "build-manifest",
        "predict",
        "evaluate",
    ] {
        ok(&inse(&[sub, "--help"], dir.path()));
    }
    ok(&inse(&["--help"], dir.path()));
}
