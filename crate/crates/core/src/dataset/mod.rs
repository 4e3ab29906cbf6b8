//! Manifests, excerpt segmentation, external tool clients and fold splits.

mod build;
mod folds;
mod manifest;
mod tools;

pub use build::{build_manifest, BuildOptions};
pub use folds::{split_folds, split_ids, FoldSplit};
pub use manifest::{
    ContentType, DatasetEntry, Manifest, ANCHOR_PREFIX, MANIFEST_HEADER, MANIFEST_SCHEMA_VERSION,
    NO_CODEC,
};
pub use tools::{
    align_to_reference, best_lag, load_labels_csv, parse_last_number, CodecClient, CodecTool,
    LabelOracle, OracleTool, ToolsConfig, MAX_ALIGN_LAG, REF_REF_MOS,
};

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::error::Result;

/// Excerpt length used throughout training.
pub const EXCERPT_SECONDS: f64 = 7.2;

/// Consecutive non-overlapping segments of `length_s`; a shorter tail is dropped.
pub fn segment_excerpts(audio: &AudioBuffer, length_s: f64) -> Result<Vec<AudioBuffer>> {
    audio.require_rate(SAMPLE_RATE)?;
    let seg = (length_s * f64::from(audio.sample_rate())).round() as usize;
    if seg == 0 {
        return Err(crate::Error::Argument(format!(
            "segment length {length_s} s is empty"
        )));
    }
    Ok((0..audio.len() / seg)
        .map(|i| audio.slice(i * seg, seg))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation_counts() {
        let a = AudioBuffer::silence(36 * 48_000);
        let segs = segment_excerpts(&a, EXCERPT_SECONDS).unwrap();
        assert_eq!(segs.len(), 5);
        assert!(segs.iter().all(|s| s.len() == 345_600));
        assert_eq!(
            segment_excerpts(&AudioBuffer::silence(40 * 48_000), 7.2)
                .unwrap()
                .len(),
            5
        );
        assert!(segment_excerpts(&AudioBuffer::silence(1000), 7.2)
            .unwrap()
            .is_empty());
        // 12 h at 7.2 s
        let per_hour = 3600.0 / EXCERPT_SECONDS;
        assert_eq!((12.0 * per_hour).round() as usize, 6000);
    }

    #[test]
    fn segments_are_consecutive() {
        let samples: Vec<f64> = (0..48_000 * 15)
            .map(|i| (i % 1000) as f64 / 1000.0)
            .collect();
        let a = AudioBuffer::mono(samples.clone(), SAMPLE_RATE).unwrap();
        let segs = segment_excerpts(&a, EXCERPT_SECONDS).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].channel(0)[0], samples[345_600]);
    }
}
