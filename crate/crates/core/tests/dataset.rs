mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use inse_core::audio::{write_wav, AudioBuffer, WavEncoding, SAMPLE_RATE};
use inse_core::dataset::{
    build_manifest, split_folds, BuildOptions, CodecClient, CodecTool, ContentType, LabelOracle,
    Manifest, OracleTool, ToolsConfig, NO_CODEC,
};
use inse_core::synth::{add_noise_at_snr, toy_reference};
use inse_core::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    input: PathBuf,
    codec_exe: PathBuf,
    oracle_exe: PathBuf,
}

/// A 15 s input (two excerpts), a fake codec that substitutes a fixed noisy
/// rendition of the input, and an oracle that always prints the same score.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let a = toy_reference(3).unwrap();
    let b = toy_reference(4).unwrap();
    let mut samples = a.channel(0).to_vec();
    samples.extend_from_slice(b.channel(0));
    samples.extend(std::iter::repeat_n(0.0, 28_800));
    let song = AudioBuffer::mono(samples, SAMPLE_RATE).unwrap();
    let input = root.join("song.wav");
    write_wav(&input, &song, WavEncoding::Int24).unwrap();
    let noisy = root.join("noisy.wav");
    write_wav(
        &noisy,
        &add_noise_at_snr(&a, 20.0, 1).unwrap(),
        WavEncoding::Int24,
    )
    .unwrap();
    let codec_exe = common::script(
        &root,
        "codec.sh",
        &format!("cp '{}' \"$2\"", noisy.display()),
    );
    let oracle_exe = common::script(&root, "oracle.sh", "echo 'MOS-LQO: 4.732'");
    Fixture {
        _dir: dir,
        root,
        input,
        codec_exe,
        oracle_exe,
    }
}

fn tools(f: &Fixture, bitrates: Vec<u32>) -> ToolsConfig {
    ToolsConfig {
        codecs: BTreeMap::from([(
            "aac".to_string(),
            CodecTool {
                executable: f.codec_exe.clone(),
                bitrates,
            },
        )]),
        oracle: OracleTool {
            executable: Some(f.oracle_exe.clone()),
            labels_csv: None,
        },
    }
}

#[test]
fn builds_pairs_with_oracle_labels() {
    let f = fixture();
    let cfg = tools(&f, vec![128, 80, 96]);
    let out = f.root.join("corpus");
    let m = build_manifest(
        std::slice::from_ref(&f.input),
        &out,
        &CodecClient::new(&cfg),
        &LabelOracle::new(&cfg.oracle).unwrap(),
        &BuildOptions::default(),
    )
    .unwrap();
    assert_eq!(m.excerpt_ids(), vec!["song_0000", "song_0001"]);
    // ref-ref, three rungs, two anchors per excerpt
    assert_eq!(m.len(), 12);
    for id in m.excerpt_ids() {
        let rows: Vec<_> = m.entries.iter().filter(|e| e.excerpt_id == id).collect();
        assert_eq!(rows[0].codec, NO_CODEC);
        assert_eq!(rows[0].label, 5.0);
        assert_eq!(rows[0].ref_path, rows[0].deg_path);
        let rates: Vec<u32> = rows.iter().filter_map(|e| e.bitrate_kbps).collect();
        assert_eq!(rates, vec![128, 80, 96]);
        for e in &rows[1..] {
            assert_eq!(e.label, 4.732);
            assert_eq!(e.content_type, ContentType::Music);
            assert!(e.deg_path.exists());
        }
        assert_eq!(rows.iter().filter(|e| e.is_anchor()).count(), 2);
    }
    let saved = out.join("manifest.csv");
    m.save(&saved).unwrap();
    assert_eq!(Manifest::load(&saved).unwrap(), m);
}

#[test]
fn labels_csv_stands_in_for_the_oracle() {
    let f = fixture();
    let out = f.root.join("corpus");
    let csv = f.root.join("labels.csv");
    let mut rows = String::from("ref_path,deg_path,mos\n");
    for i in 0..2 {
        let r = out.join("ref").join(format!("song_{i:04}.wav"));
        rows += &format!(
            "{},{},3.25\n",
            r.display(),
            out.join("deg")
                .join(format!("song_{i:04}_aac96.wav"))
                .display()
        );
    }
    std::fs::write(&csv, rows).unwrap();
    let mut cfg = tools(&f, vec![96]);
    cfg.oracle = OracleTool {
        executable: None,
        labels_csv: Some(csv),
    };
    let m = build_manifest(
        std::slice::from_ref(&f.input),
        &out,
        &CodecClient::new(&cfg),
        &LabelOracle::new(&cfg.oracle).unwrap(),
        &BuildOptions {
            anchors: false,
            ..Default::default()
        },
    )
    .unwrap();
    let coded: Vec<f64> = m
        .entries
        .iter()
        .filter(|e| e.codec == "aac")
        .map(|e| e.label)
        .collect();
    assert_eq!(coded, vec![3.25, 3.25]);
}

#[test]
fn unknown_codec_and_missing_oracle_are_config_errors() {
    let f = fixture();
    let cfg = tools(&f, vec![96]);
    let client = CodecClient::new(&cfg);
    let err = client
        .encode_decode(&f.input, "usac", 32, &f.root)
        .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let err = client
        .encode_decode(&f.input, "aac", 33, &f.root)
        .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");

    let err = build_manifest(
        std::slice::from_ref(&f.input),
        &f.root.join("x"),
        &client,
        &LabelOracle::new(&OracleTool::default()).unwrap(),
        &BuildOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn environment_overrides_tools() {
    let mut cfg = ToolsConfig::default();
    cfg.apply_env([
        ("INSE_CODEC_HEAAC".to_string(), "/opt/heaac".to_string()),
        ("INSE_ORACLE".to_string(), "/opt/visqol".to_string()),
        ("UNRELATED".to_string(), "x".to_string()),
    ]);
    assert_eq!(cfg.codecs["heaac"].bitrates, vec![16, 20, 24, 32, 40, 48]);
    assert_eq!(cfg.oracle.executable, Some(PathBuf::from("/opt/visqol")));
}

#[test]
fn folds_partition_one_hundred_excerpts() {
    let ids: Vec<String> = (0..100).map(|i| format!("ex{i}")).collect();
    let entries = ids
        .iter()
        .map(|id| inse_core::dataset::DatasetEntry {
            ref_path: PathBuf::from(format!("{id}.wav")),
            deg_path: PathBuf::from(format!("{id}.wav")),
            label: 5.0,
            codec: NO_CODEC.into(),
            bitrate_kbps: None,
            content_type: ContentType::Speech,
            excerpt_id: id.clone(),
        })
        .collect();
    let m = Manifest::new(entries).unwrap();
    let folds = split_folds(&m, 5, 0).unwrap();
    assert_eq!(folds.len(), 5);
    let mut union = std::collections::BTreeSet::new();
    for f in &folds {
        assert_eq!(f.val_ids.len(), 20);
        assert!(f.val_ids.is_disjoint(&f.train_ids));
        assert!(union.is_disjoint(&f.val_ids));
        union.extend(f.val_ids.iter().cloned());
    }
    assert_eq!(union.len(), 100);
    assert_eq!(split_folds(&m, 5, 0).unwrap(), folds);
}
