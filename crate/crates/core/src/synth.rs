//! Synthetic augmentation material: coloured noise, zero-phase Butterworth
//! filters, level scaling and perceptually transparent label-5 pairs. Also
//! hosts the fully synthetic toy corpus used for end-to-end checks.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioBuffer, WavEncoding, SAMPLE_RATE};
use crate::dataset::{CodecClient, ContentType, DatasetEntry, EXCERPT_SECONDS, NO_CODEC};
use crate::error::{Error, Result};

/// Cutoff of the high-pass applied to synthetic noise pairs.
pub const SYNTH_HIGHPASS_HZ: f64 = 10_000.0;
/// Synthetic noise must sit at or below this RMS level.
pub const SYNTH_MAX_LEVEL_DBFS: f64 = -108.0;
pub const BUTTERWORTH_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseColor {
    White,
    Pink,
    Brown,
}

impl NoiseColor {
    pub const ALL: [NoiseColor; 3] = [NoiseColor::White, NoiseColor::Pink, NoiseColor::Brown];

    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseColor::White => "white",
            NoiseColor::Pink => "pink",
            NoiseColor::Brown => "brown",
        }
    }
}

impl FromStr for NoiseColor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "white" => Ok(NoiseColor::White),
            "pink" => Ok(NoiseColor::Pink),
            "brown" | "brownian" | "red" => Ok(NoiseColor::Brown),
            other => Err(Error::Argument(format!("unknown noise color `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub color: NoiseColor,
    pub duration_s: f64,
    pub seed: u64,
    /// RMS level in dBFS.
    pub target_level_db: f64,
    pub highpass_fc: Option<f64>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Argument(format!(
                "noise duration {} s",
                self.duration_s
            )));
        }
        if self.target_level_db > 0.0 || !self.target_level_db.is_finite() {
            return Err(Error::Argument(format!(
                "noise level {} dBFS above full scale",
                self.target_level_db
            )));
        }
        Ok(())
    }
}

fn white(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Shapes white noise to a 1/f power spectrum in the frequency domain.
fn pink(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = white(n, rng)
        .into_iter()
        .map(|s| Complex::new(s, 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, c) in buf.iter_mut().enumerate().skip(1) {
        let bin = k.min(n - k) as f64;
        *c *= 1.0 / bin.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Integrated white noise with the mean removed.
fn brown(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = white(n, rng)
        .into_iter()
        .map(|s| {
            acc += s;
            acc
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    out
}

/// Deterministic coloured noise at the requested RMS level, high-passed
/// first when `highpass_fc` is set.
pub fn generate_noise(spec: &NoiseSpec) -> Result<AudioBuffer> {
    spec.validate()?;
    let n = (spec.duration_s * f64::from(SAMPLE_RATE)).round() as usize;
    if n == 0 {
        return Err(Error::Argument(
            "noise duration rounds to zero samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let samples = match spec.color {
        NoiseColor::White => white(n, &mut rng),
        NoiseColor::Pink => pink(n, &mut rng),
        NoiseColor::Brown => brown(n, &mut rng),
    };
    let mut audio = AudioBuffer::mono(samples, SAMPLE_RATE)?;
    if let Some(fc) = spec.highpass_fc {
        audio = highpass(&audio, fc)?;
    }
    scale_to_level(&audio, spec.target_level_db)
}

/// Direct form I biquad section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn run(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let y =
                self.b[0] * *v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = *v;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// Butterworth filter as cascaded second-order sections (bilinear
/// transform, prewarped at the cutoff). `order` must be even.
pub fn butterworth(
    kind: FilterKind,
    order: usize,
    fc: f64,
    sample_rate: f64,
) -> Result<Vec<Biquad>> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "Butterworth order {order} must be even and positive"
        )));
    }
    if !(fc > 0.0 && fc < sample_rate / 2.0) {
        return Err(Error::Argument(format!(
            "cutoff {fc} Hz outside (0, {}) Hz",
            sample_rate / 2.0
        )));
    }
    let w0 = 2.0 * std::f64::consts::PI * fc / sample_rate;
    let (sin, cos) = w0.sin_cos();
    Ok((1..=order / 2)
        .map(|k| {
            let damping = ((2 * k - 1) as f64 * std::f64::consts::PI / (2 * order) as f64).sin();
            let alpha = sin * damping; // sin(w0) / (2Q) with Q = 1 / (2 damping)
            let a0 = 1.0 + alpha;
            let b = match kind {
                FilterKind::Lowpass => [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
                FilterKind::Highpass => [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
            };
            Biquad {
                b: [b[0] / a0, b[1] / a0, b[2] / a0],
                a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
            }
        })
        .collect())
}

/// Forward-backward filtering with odd-symmetric edge extension.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    if x.len() < 2 {
        return x.to_vec();
    }
    let pad = (x.len() - 1).min(1024);
    let (first, last) = (x[0], x[x.len() - 1]);
    let mut ext = Vec::with_capacity(x.len() + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[x.len() - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + x.len()].to_vec()
}

fn zero_phase(audio: &AudioBuffer, kind: FilterKind, fc: f64) -> Result<AudioBuffer> {
    let sections = butterworth(kind, BUTTERWORTH_ORDER, fc, f64::from(audio.sample_rate()))?;
    let channels = (0..audio.num_channels())
        .map(|c| filtfilt(&sections, audio.channel(c)))
        .collect();
    AudioBuffer::new(channels, audio.sample_rate())
}

/// Zero-phase 8th-order Butterworth high-pass.
pub fn highpass(audio: &AudioBuffer, fc: f64) -> Result<AudioBuffer> {
    zero_phase(audio, FilterKind::Highpass, fc)
}

/// Zero-phase 8th-order Butterworth low-pass (anchor generation).
pub fn lowpass(audio: &AudioBuffer, fc: f64) -> Result<AudioBuffer> {
    zero_phase(audio, FilterKind::Lowpass, fc)
}

/// Scales the signal so its RMS equals `level_db` dBFS.
pub fn scale_to_level(audio: &AudioBuffer, level_db: f64) -> Result<AudioBuffer> {
    let current = audio.rms_dbfs();
    if !current.is_finite() {
        return Err(Error::CannotScale);
    }
    let gain = 10f64.powf((level_db - current) / 20.0);
    Ok(audio.map(|s| s * gain))
}

/// AAC rungs used for the transparent synthetic ref-deg pairs.
pub fn synthetic_rungs() -> Vec<(String, u32)> {
    [80, 96, 128]
        .into_iter()
        .map(|b| ("aac".to_string(), b))
        .collect()
}

/// Optional codec pass for the degraded side of synthetic pairs.
pub struct SynthCodec<'a> {
    pub client: &'a CodecClient,
    pub rungs: Vec<(String, u32)>,
}

fn copy_file(from: &Path, to: &Path) -> Result<()> {
    std::fs::copy(from, to)
        .map(|_| ())
        .map_err(|e| Error::io(to, e))
}

/// Writes 7.2 s high-passed low-level noise excerpts (and optionally digital
/// silence) and returns label-5 entries for them: one self pair per excerpt
/// plus one coded pair per codec rung when a codec is supplied.
pub fn make_synthetic_pairs(
    specs: &[NoiseSpec],
    include_silence: bool,
    out_dir: &Path,
    codec: Option<&SynthCodec<'_>>,
) -> Result<Vec<DatasetEntry>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for s in specs {
        if s.target_level_db > SYNTH_MAX_LEVEL_DBFS {
            return Err(Error::Argument(format!(
                "synthetic noise level {} dBFS exceeds {SYNTH_MAX_LEVEL_DBFS} dBFS",
                s.target_level_db
            )));
        }
    }
    let excerpt_len = (EXCERPT_SECONDS * f64::from(SAMPLE_RATE)).round() as usize;
    let mut jobs: Vec<(String, ContentType, Option<NoiseSpec>)> = specs
        .iter()
        .map(|s| {
            (
                format!("noise_{}_{}", s.color.as_str(), s.seed),
                ContentType::Noise,
                Some(s.clone()),
            )
        })
        .collect();
    if include_silence {
        jobs.push(("silence".into(), ContentType::Silence, None));
    }
    let per_job: Vec<Result<Vec<DatasetEntry>>> = jobs
        .par_iter()
        .map(|(id, content, spec)| {
            let audio = match spec {
                Some(s) => generate_noise(&NoiseSpec {
                    duration_s: EXCERPT_SECONDS,
                    highpass_fc: Some(s.highpass_fc.unwrap_or(SYNTH_HIGHPASS_HZ)),
                    ..s.clone()
                })?,
                None => AudioBuffer::silence(excerpt_len),
            };
            let ref_path = out_dir.join(format!("{id}.wav"));
            write_wav(&ref_path, &audio, WavEncoding::Int24)?;
            let entry =
                |deg_path: PathBuf, codec: String, bitrate_kbps: Option<u32>| DatasetEntry {
                    ref_path: ref_path.clone(),
                    deg_path,
                    label: 5.0,
                    codec,
                    bitrate_kbps,
                    content_type: *content,
                    excerpt_id: format!("synth_{id}"),
                };
            let copy_path = out_dir.join(format!("{id}_copy.wav"));
            copy_file(&ref_path, &copy_path)?;
            let mut out = vec![entry(copy_path, NO_CODEC.into(), None)];
            if let Some(c) = codec {
                for (codec_id, kbps) in &c.rungs {
                    let deg = c
                        .client
                        .encode_decode(&ref_path, codec_id, *kbps, out_dir)?;
                    out.push(entry(deg, codec_id.clone(), Some(*kbps)));
                }
            }
            Ok(out)
        })
        .collect();
    let mut entries = Vec::new();
    for r in per_job {
        entries.extend(r?);
    }
    Ok(entries)
}

/// Settings of the fully synthetic toy corpus: tonal/noisy references
/// degraded by additive white noise at fixed SNRs, labelled linearly from 5
/// (cleanest) to 1 (noisiest).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub excerpts: usize,
    /// SNR ladder in dB, cleanest first.
    pub snr_db: Vec<f64>,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            excerpts: 40,
            snr_db: vec![30.0, 24.0, 18.0, 12.0, 6.0, 0.0],
            seed: 0,
        }
    }
}

impl ToyConfig {
    /// Label of SNR rung `i`.
    pub fn label(&self, i: usize) -> f64 {
        let steps = (self.snr_db.len().max(2) - 1) as f64;
        5.0 - 4.0 * i as f64 / steps
    }
}

/// A toy reference: a few slowly modulated tones over a coloured-noise bed, around −20 dBFS.
pub fn toy_reference(seed: u64) -> Result<AudioBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = NoiseColor::ALL[rng.random_range(0..3)];
    let bed = generate_noise(&NoiseSpec {
        color,
        duration_s: EXCERPT_SECONDS,
        seed: rng.random(),
        target_level_db: -45.0,
        highpass_fc: None,
    })?;
    let mut samples = bed.channel(0).to_vec();
    let sr = f64::from(SAMPLE_RATE);
    let tones = rng.random_range(2..=4);
    for _ in 0..tones {
        let freq = 10f64.powf(rng.random_range(2.0f64..3.9));
        let amp = rng.random_range(0.02..0.1);
        let rate = rng.random_range(0.3..3.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for (i, s) in samples.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (std::f64::consts::TAU * rate * t + phase).sin();
            *s += amp * env * (std::f64::consts::TAU * freq * t).sin();
        }
    }
    scale_to_level(&AudioBuffer::mono(samples, SAMPLE_RATE)?, -20.0)
}

/// `reference` plus white noise at `snr_db` relative to the reference RMS.
pub fn add_noise_at_snr(reference: &AudioBuffer, snr_db: f64, seed: u64) -> Result<AudioBuffer> {
    let level = reference.rms_dbfs() - snr_db;
    let noise = generate_noise(&NoiseSpec {
        color: NoiseColor::White,
        duration_s: reference.duration_s(),
        seed,
        target_level_db: level.min(0.0),
        highpass_fc: None,
    })?;
    let mixed = reference
        .channel(0)
        .iter()
        .zip(noise.channel(0))
        .map(|(a, b)| a + b)
        .collect();
    AudioBuffer::mono(mixed, reference.sample_rate())
}

/// Writes the toy corpus under `out_dir` and returns its entries. The SNR
/// (rounded to whole dB) is stored in the bitrate column so that ranking
/// checks see quality increase along it.
pub fn build_toy_dataset(out_dir: &Path, config: &ToyConfig) -> Result<Vec<DatasetEntry>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let per_excerpt: Vec<Result<Vec<DatasetEntry>>> = (0..config.excerpts)
        .into_par_iter()
        .map(|i| {
            let id = format!("toy_{i:03}");
            let excerpt_seed = config.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let reference = toy_reference(excerpt_seed)?;
            let ref_path = out_dir.join(format!("{id}_ref.wav"));
            write_wav(&ref_path, &reference, WavEncoding::Int24)?;
            config
                .snr_db
                .iter()
                .enumerate()
                .map(|(level, &snr)| {
                    let deg = add_noise_at_snr(
                        &reference,
                        snr,
                        excerpt_seed ^ (0x9e37_79b9 + level as u64),
                    )?;
                    let deg_path = out_dir.join(format!("{id}_snr{level}.wav"));
                    write_wav(&deg_path, &deg, WavEncoding::Int24)?;
                    Ok(DatasetEntry {
                        ref_path: ref_path.clone(),
                        deg_path,
                        label: config.label(level),
                        codec: "awgn".into(),
                        bitrate_kbps: Some(snr.max(0.0).round() as u32),
                        content_type: ContentType::Mixed,
                        excerpt_id: id.clone(),
                    })
                })
                .collect()
        })
        .collect();
    let mut entries = Vec::new();
    for r in per_excerpt {
        entries.extend(r?);
    }
    Ok(entries)
}
