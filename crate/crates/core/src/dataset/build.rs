use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    segment_excerpts, CodecClient, ContentType, DatasetEntry, LabelOracle, Manifest,
    EXCERPT_SECONDS, NO_CODEC,
};
use crate::audio::{read_wav, write_wav, WavEncoding};
use crate::error::{Error, Result};
use crate::frontend::downmix_mid;
use crate::synth::lowpass;

/// Low-pass anchor cutoffs in Hz.
pub const ANCHOR_CUTOFFS: [f64; 2] = [3500.0, 7000.0];

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub content_type: ContentType,
    pub anchors: bool,
    pub excerpt_seconds: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            content_type: ContentType::Music,
            anchors: true,
            excerpt_seconds: EXCERPT_SECONDS,
        }
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Segments every input into excerpts, then adds one ref-ref pair, one pair
/// per configured codec rung and (optionally) the two low-pass anchors for
/// each excerpt. Codec or labeling failures skip that pair with a warning.
pub fn build_manifest(
    inputs: &[PathBuf],
    out_dir: &Path,
    codec: &CodecClient,
    oracle: &LabelOracle,
    options: &BuildOptions,
) -> Result<Manifest> {
    if (!codec.is_empty() || options.anchors) && !oracle.is_available() {
        return Err(Error::Config(
            "degraded pairs need labels but no oracle executable or labels CSV is configured"
                .into(),
        ));
    }
    let ref_dir = out_dir.join("ref");
    let deg_dir = out_dir.join("deg");
    create_dir(&ref_dir)?;
    create_dir(&deg_dir)?;

    let mut excerpts = Vec::new();
    for input in inputs {
        let audio = read_wav(input)?;
        let audio = if audio.num_channels() == 2 {
            log::info!("{}: stereo input downmixed to mid", input.display());
            downmix_mid(&audio)?
        } else {
            audio
        };
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("input")
            .to_string();
        for (i, seg) in segment_excerpts(&audio, options.excerpt_seconds)?
            .into_iter()
            .enumerate()
        {
            let id = format!("{stem}_{i:04}");
            let path = ref_dir.join(format!("{id}.wav"));
            write_wav(&path, &seg, WavEncoding::Int24)?;
            excerpts.push((id, path, seg));
        }
    }

    let ladder = codec.ladder();
    let per_excerpt: Vec<Vec<DatasetEntry>> = excerpts
        .par_iter()
        .map(|(id, ref_path, audio)| {
            let entry =
                |deg_path: PathBuf, label: f64, codec: String, bitrate: Option<u32>| DatasetEntry {
                    ref_path: ref_path.clone(),
                    deg_path,
                    label,
                    codec,
                    bitrate_kbps: bitrate,
                    content_type: options.content_type,
                    excerpt_id: id.clone(),
                };
            let mut out = vec![entry(ref_path.clone(), 5.0, NO_CODEC.into(), None)];
            let mut labelled =
                |deg: Result<PathBuf>, codec_name: String, bitrate: Option<u32>| match deg
                    .and_then(|d| oracle.label(ref_path, &d).map(|mos| (d, mos)))
                {
                    Ok((d, mos)) => out.push(entry(d, mos, codec_name, bitrate)),
                    Err(e) => log::warn!("{id}: skipping {codec_name}: {e}"),
                };
            for (codec_id, kbps) in &ladder {
                let deg = codec.encode_decode(ref_path, codec_id, *kbps, &deg_dir);
                labelled(deg, codec_id.clone(), Some(*kbps));
            }
            if options.anchors {
                for fc in ANCHOR_CUTOFFS {
                    let name = format!("{}{}", super::ANCHOR_PREFIX, fc as u32);
                    let path = deg_dir.join(format!("{id}_{name}.wav"));
                    let deg = lowpass(audio, fc)
                        .and_then(|lp| write_wav(&path, &lp, WavEncoding::Int24))
                        .map(|_| path);
                    labelled(deg, name, None);
                }
            }
            out
        })
        .collect();
    Manifest::new(per_excerpt.into_iter().flatten().collect())
}
