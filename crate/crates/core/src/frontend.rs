//! Gammatone spectrogram frontend and paired model inputs.
//!
//! Frames are Hann-windowed, transformed with an FFT, and reduced to band
//! powers by weighting the power spectrum with 4th-order gammatone magnitude
//! responses centred on an ERB-rate grid. Values are stored in dB and clamped
//! at a fixed floor so silence is well defined.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::training::NormStats;

/// Bands in a model input.
pub const MODEL_BANDS: usize = 32;
/// Frames in a model input (7.2 s at a 20 ms hop).
pub const MODEL_FRAMES: usize = 360;

const GTSPEC_MAGIC: &[u8; 7] = b"GTSPEC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammatoneConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub db_floor: f64,
    pub filter_order: u32,
}

impl Default for GammatoneConfig {
    fn default() -> Self {
        Self {
            window_ms: 80.0,
            hop_ms: 20.0,
            n_bands: MODEL_BANDS,
            f_min: 50.0,
            f_max: 24_000.0,
            db_floor: -120.0,
            filter_order: 4,
        }
    }
}

impl GammatoneConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.window_ms > self.hop_ms && self.hop_ms > 0.0) {
            return Err(Error::Argument(format!(
                "need window_ms > hop_ms > 0, got {} / {}",
                self.window_ms, self.hop_ms
            )));
        }
        if !(self.f_min > 0.0
            && self.f_min < self.f_max
            && self.f_max <= f64::from(sample_rate) / 2.0)
        {
            return Err(Error::Argument(format!(
                "need 0 < f_min < f_max <= {} Hz, got {}..{}",
                sample_rate / 2,
                self.f_min,
                self.f_max
            )));
        }
        if self.n_bands < 2 {
            return Err(Error::Argument("n_bands must be at least 2".into()));
        }
        if self.filter_order == 0 {
            return Err(Error::Argument("filter_order must be positive".into()));
        }
        let (win, hop) = self.frame_samples(sample_rate);
        if (win - hop) % 2 != 0 {
            return Err(Error::Argument(
                "window minus hop must be an even number of samples".into(),
            ));
        }
        Ok(())
    }

    /// (window, hop) in samples.
    pub fn frame_samples(&self, sample_rate: u32) -> (usize, usize) {
        let sr = f64::from(sample_rate);
        (
            (self.window_ms * sr / 1000.0).round() as usize,
            (self.hop_ms * sr / 1000.0).round() as usize,
        )
    }
}

/// Glasberg–Moore ERB-rate (ERB number) of a frequency in Hz.
pub fn hz_to_erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.004_37 * f).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.004_37
}

/// Equivalent rectangular bandwidth at `f` Hz.
pub fn erb_bandwidth(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// `n_bands` centres equally spaced on the ERB-rate scale, starting at
/// `f_min`; the step is chosen so that one further step would land on `f_max`.
pub fn erb_center_frequencies(n_bands: usize, f_min: f64, f_max: f64) -> Result<Vec<f64>> {
    if n_bands < 2 {
        return Err(Error::Argument("n_bands must be at least 2".into()));
    }
    if !(f_min > 0.0 && f_min < f_max && f_max.is_finite()) {
        return Err(Error::Argument(format!(
            "invalid frequency range {f_min}..{f_max}"
        )));
    }
    let lo = hz_to_erb_rate(f_min);
    let step = (hz_to_erb_rate(f_max) - lo) / n_bands as f64;
    let mut centers: Vec<f64> = (0..n_bands)
        .map(|k| erb_rate_to_hz(lo + step * k as f64))
        .collect();
    centers[0] = f_min;
    Ok(centers)
}

/// Band × frame matrix of dB power values, row-major by band.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f32>,
    n_bands: usize,
    n_frames: usize,
    band_centers: Vec<f64>,
    frame_hop: f64,
}

impl Spectrogram {
    pub fn new(
        values: Vec<f32>,
        n_bands: usize,
        band_centers: Vec<f64>,
        frame_hop: f64,
    ) -> Result<Self> {
        if n_bands == 0 || !values.len().is_multiple_of(n_bands) || band_centers.len() != n_bands {
            return Err(Error::Shape(format!(
                "{} values / {} centres do not fit {n_bands} bands",
                values.len(),
                band_centers.len()
            )));
        }
        if band_centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument(
                "band centres must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            n_frames: values.len() / n_bands,
            values,
            n_bands,
            band_centers,
            frame_hop,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn band_centers(&self) -> &[f64] {
        &self.band_centers
    }

    pub fn frame_hop(&self) -> f64 {
        self.frame_hop
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn band(&self, b: usize) -> &[f32] {
        &self.values[b * self.n_frames..(b + 1) * self.n_frames]
    }

    pub fn get(&self, band: usize, frame: usize) -> f32 {
        self.values[band * self.n_frames + frame]
    }

    /// Frames `[start, start + len)` of every band.
    pub fn crop_frames(&self, start: usize, len: usize) -> Spectrogram {
        let mut values = Vec::with_capacity(self.n_bands * len);
        for b in 0..self.n_bands {
            values.extend_from_slice(&self.band(b)[start..start + len]);
        }
        Spectrogram {
            values,
            n_bands: self.n_bands,
            n_frames: len,
            band_centers: self.band_centers.clone(),
            frame_hop: self.frame_hop,
        }
    }

    /// Serialises to the GTSPEC1 container.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(GTSPEC_MAGIC)?;
        w.write_all(&(self.n_bands as u32).to_le_bytes())?;
        w.write_all(&(self.n_frames as u32).to_le_bytes())?;
        for &c in &self.band_centers {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Parses a GTSPEC1 container. The hop is not stored and is set to the
    /// default 20 ms.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: &str| Error::format("GTSPEC1 container", reason);
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != GTSPEC_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut word)
                .map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(word))
        };
        let n_bands = next_u32(&mut r)? as usize;
        let n_frames = next_u32(&mut r)? as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)
            .map_err(|_| bad("unreadable body"))?;
        if body.len() != 4 * (n_bands + n_bands * n_frames) {
            return Err(bad("body length does not match dimensions"));
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let centers = floats[..n_bands].iter().map(|&c| f64::from(c)).collect();
        Spectrogram::new(
            floats[n_bands..].to_vec(),
            n_bands,
            centers,
            GammatoneConfig::default().hop_ms / 1000.0,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[derive(Clone)]
struct BandWeights {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Reusable spectrogram engine: window, FFT plan and band weights are
/// computed once per configuration.
#[derive(Clone)]
pub struct GammatoneFrontend {
    config: GammatoneConfig,
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
    bands: Vec<BandWeights>,
    centers: Vec<f64>,
    power_scale: f64,
}

impl std::fmt::Debug for GammatoneFrontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GammatoneFrontend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl GammatoneFrontend {
    pub fn new(config: GammatoneConfig) -> Result<Self> {
        config.validate(SAMPLE_RATE)?;
        let (win, hop) = config.frame_samples(SAMPLE_RATE);
        // Symmetric Hann so that time reversal maps frames onto frames.
        let window: Vec<f64> = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (win - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(win);
        let centers = erb_center_frequencies(config.n_bands, config.f_min, config.f_max)?;
        let n_bins = win / 2 + 1;
        let bin_hz = f64::from(SAMPLE_RATE) / win as f64;
        let order = f64::from(config.filter_order);
        let bands = centers
            .iter()
            .map(|&fc| {
                let b = 1.019 * erb_bandwidth(fc);
                let full: Vec<f64> = (0..n_bins)
                    .map(|k| {
                        let x = (k as f64 * bin_hz - fc) / b;
                        (1.0 + x * x).powf(-order)
                    })
                    .collect();
                // Drop negligible tails; the response falls off polynomially.
                let keep = |w: &f64| *w > 1e-14;
                let first = full.iter().position(keep).unwrap_or(0);
                let last = full.iter().rposition(keep).unwrap_or(0);
                BandWeights {
                    first_bin: first,
                    weights: full[first..=last].to_vec(),
                }
            })
            .collect();
        let sum_w2: f64 = window.iter().map(|w| w * w).sum();
        Ok(Self {
            config,
            window,
            hop,
            fft,
            bands,
            centers,
            power_scale: 1.0 / (win as f64 * sum_w2),
        })
    }

    pub fn config(&self) -> &GammatoneConfig {
        &self.config
    }

    pub fn band_centers(&self) -> &[f64] {
        &self.centers
    }

    /// Frames produced for a signal of `n` samples.
    pub fn frame_count(&self, n: usize) -> usize {
        n.div_ceil(self.hop)
    }

    pub fn compute(&self, audio: &AudioBuffer) -> Result<Spectrogram> {
        audio.require_rate(SAMPLE_RATE)?;
        let x = audio.mono_samples()?;
        let win = self.window.len();
        if x.len() < win {
            return Err(Error::Length {
                samples: x.len(),
                required: win,
            });
        }
        let pad = (win - self.hop) / 2;
        let n_frames = self.frame_count(x.len());
        let total = (n_frames - 1) * self.hop + win;
        let mut padded = Vec::with_capacity(total);
        padded.extend((1..=pad).rev().map(|i| x[i]));
        padded.extend_from_slice(x);
        padded.extend((0..pad).map(|i| x[x.len() - 2 - i]));
        padded.resize(total, 0.0);

        let n_bands = self.bands.len();
        let floor_power = 10f64.powf(self.config.db_floor / 10.0);
        let mut values = vec![0f32; n_bands * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); win];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; win / 2 + 1];
        for frame in 0..n_frames {
            let start = frame * self.hop;
            for ((dst, &s), &w) in buf
                .iter_mut()
                .zip(&padded[start..start + win])
                .zip(&self.window)
            {
                *dst = Complex::new(s * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let last = power.len() - 1;
            for (k, p) in power.iter_mut().enumerate() {
                let one_sided = if k == 0 || (k == last && win.is_multiple_of(2)) {
                    1.0
                } else {
                    2.0
                };
                *p = one_sided * buf[k].norm_sqr() * self.power_scale;
            }
            for (b, band) in self.bands.iter().enumerate() {
                let e: f64 = band
                    .weights
                    .iter()
                    .zip(&power[band.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                values[b * n_frames + frame] = (10.0 * e.max(floor_power).log10()) as f32;
            }
        }
        Spectrogram::new(
            values,
            n_bands,
            self.centers.clone(),
            self.config.hop_ms / 1000.0,
        )
    }

    /// Reads a WAV file and analyses it; stereo files are downmixed to mid first.
    pub fn compute_file(&self, path: impl AsRef<Path>) -> Result<Spectrogram> {
        let path = path.as_ref();
        let audio = crate::audio::read_wav(path)?;
        if audio.num_channels() == 2 {
            log::info!("{}: stereo input downmixed to mid", path.display());
            return self.compute(&downmix_mid(&audio)?);
        }
        self.compute(&audio)
    }
}

/// One-shot spectrogram; build a [`GammatoneFrontend`] when processing many files.
pub fn gammatone_spectrogram(audio: &AudioBuffer, config: &GammatoneConfig) -> Result<Spectrogram> {
    GammatoneFrontend::new(config.clone())?.compute(audio)
}

/// Mono mid signal `(L + R) / 2`.
pub fn downmix_mid(stereo: &AudioBuffer) -> Result<AudioBuffer> {
    if stereo.num_channels() != 2 {
        return Err(Error::Argument(format!(
            "downmix expects 2 channels, got {}",
            stereo.num_channels()
        )));
    }
    let mid = stereo
        .channel(0)
        .iter()
        .zip(stereo.channel(1))
        .map(|(l, r)| (l + r) / 2.0)
        .collect();
    AudioBuffer::mono(mid, stereo.sample_rate())
}

/// Reference and degraded spectrograms stacked as a 2 × bands × frames tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedInput {
    data: Vec<f32>,
    n_bands: usize,
    n_frames: usize,
    normalized: bool,
}

impl PairedInput {
    /// Builds a pair from raw channel data (reference first).
    pub fn from_raw(
        data: Vec<f32>,
        n_bands: usize,
        n_frames: usize,
        normalized: bool,
    ) -> Result<Self> {
        if data.len() != 2 * n_bands * n_frames {
            return Err(Error::Shape(format!(
                "{} values do not fit 2x{n_bands}x{n_frames}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_bands,
            n_frames,
            normalized,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [2, self.n_bands, self.n_frames]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Channel 0 is the reference, channel 1 the degraded signal.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.n_bands * self.n_frames;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, channel: usize, band: usize, frame: usize) -> f32 {
        self.data[(channel * self.n_bands + band) * self.n_frames + frame]
    }

    /// Channels exchanged (degraded first).
    pub fn swapped(&self) -> PairedInput {
        let n = self.n_bands * self.n_frames;
        let mut data = self.data[n..].to_vec();
        data.extend_from_slice(&self.data[..n]);
        PairedInput { data, ..*self }
    }
}

fn check_compatible(reference: &Spectrogram, degraded: &Spectrogram) -> Result<()> {
    if reference.n_bands() != MODEL_BANDS || degraded.n_bands() != MODEL_BANDS {
        return Err(Error::Pairing(format!(
            "expected {MODEL_BANDS} bands, got {} and {}",
            reference.n_bands(),
            degraded.n_bands()
        )));
    }
    if reference.n_frames() != degraded.n_frames() {
        return Err(Error::Pairing(format!(
            "frame counts differ: {} vs {}",
            reference.n_frames(),
            degraded.n_frames()
        )));
    }
    if reference.band_centers() != degraded.band_centers() {
        return Err(Error::Pairing(
            "spectrograms use different band layouts".into(),
        ));
    }
    if reference.n_frames() < MODEL_FRAMES {
        return Err(Error::Pairing(format!(
            "{} frames, need {MODEL_FRAMES}",
            reference.n_frames()
        )));
    }
    Ok(())
}

fn stack(reference: &Spectrogram, degraded: &Spectrogram, start: usize) -> PairedInput {
    let mut data = Vec::with_capacity(2 * MODEL_BANDS * MODEL_FRAMES);
    for s in [reference, degraded] {
        for b in 0..MODEL_BANDS {
            data.extend_from_slice(&s.band(b)[start..start + MODEL_FRAMES]);
        }
    }
    PairedInput {
        data,
        n_bands: MODEL_BANDS,
        n_frames: MODEL_FRAMES,
        normalized: false,
    }
}

/// Stacks a reference/degraded pair into a 2×32×360 input. Longer inputs are
/// centre-cropped; shorter ones are rejected.
pub fn pair_spectrograms(reference: &Spectrogram, degraded: &Spectrogram) -> Result<PairedInput> {
    check_compatible(reference, degraded)?;
    let start = (reference.n_frames() - MODEL_FRAMES) / 2;
    Ok(stack(reference, degraded, start))
}

/// Splits an arbitrary-length pair into consecutive 360-frame windows; a
/// trailing partial window is replaced by one aligned to the last frame.
pub fn pair_windows(reference: &Spectrogram, degraded: &Spectrogram) -> Result<Vec<PairedInput>> {
    check_compatible(reference, degraded)?;
    let t = reference.n_frames();
    let mut starts: Vec<usize> = (0..t / MODEL_FRAMES).map(|i| i * MODEL_FRAMES).collect();
    if !t.is_multiple_of(MODEL_FRAMES) {
        starts.push(t - MODEL_FRAMES);
    }
    Ok(starts
        .into_iter()
        .map(|s| stack(reference, degraded, s))
        .collect())
}

/// Per-band standardisation shared by both channels. Bands with zero spread
/// are divided by one.
pub fn normalize_pair(pair: &PairedInput, stats: &NormStats) -> Result<PairedInput> {
    if pair.normalized {
        return Err(Error::State("pair is already normalized".into()));
    }
    if stats.mean.len() != pair.n_bands || stats.std.len() != pair.n_bands {
        return Err(Error::Shape(format!(
            "stats cover {} bands, pair has {}",
            stats.mean.len(),
            pair.n_bands
        )));
    }
    let mut data = pair.data.clone();
    for (row_idx, row) in data.chunks_mut(pair.n_frames).enumerate() {
        let b = row_idx % pair.n_bands;
        let mean = stats.mean[b];
        let std = if stats.std[b] > 0.0 {
            stats.std[b]
        } else {
            1.0
        };
        for v in row {
            *v = ((f64::from(*v) - mean) / std) as f32;
        }
    }
    Ok(PairedInput {
        data,
        normalized: true,
        ..*pair
    })
}
