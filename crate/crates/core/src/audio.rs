//! PCM buffers and WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE: u32 = 48_000;

/// Planar PCM audio, full scale ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn stereo(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![left, right], sample_rate)
    }

    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::Argument(format!(
                "expected 1 or 2 channels, got {}",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Argument("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::Argument("non-finite sample".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    /// Silent mono buffer at the pipeline rate.
    pub fn silence(len: usize) -> Self {
        Self {
            channels: vec![vec![0.0; len]],
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    /// Samples of a mono buffer; errors on stereo.
    pub fn mono_samples(&self) -> Result<&[f64]> {
        if self.channels.len() != 1 {
            return Err(Error::Argument(format!(
                "expected mono audio, got {} channels",
                self.channels.len()
            )));
        }
        Ok(&self.channels[0])
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::SampleRate {
                found: self.sample_rate,
                expected: rate,
            });
        }
        Ok(())
    }

    /// Root-mean-square level over all channels, in dBFS (−inf for silence).
    pub fn rms_dbfs(&self) -> f64 {
        let n: usize = self.channels.iter().map(Vec::len).sum();
        if n == 0 {
            return f64::NEG_INFINITY;
        }
        let ms: f64 = self.channels.iter().flatten().map(|s| s * s).sum::<f64>() / n as f64;
        10.0 * ms.log10()
    }

    /// Applies `f` to every sample of every channel.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&s| f(s)).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Copy of samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c[start..start + len].to_vec())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Bit depth used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Int16,
    Int24,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let n_ch = usize::from(spec.channels);
    if n_ch == 0 || n_ch > 2 {
        return Err(Error::format(
            path.display().to_string(),
            format!("unsupported channel count {n_ch}"),
        ));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = f64::from(1u32 << (bits - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
        (fmt, bits) => {
            return Err(Error::format(
                path.display().to_string(),
                format!("unsupported sample format {fmt:?}/{bits}-bit"),
            ))
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n_ch); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &s) in channels.iter_mut().zip(frame) {
            c.push(s);
        }
    }
    AudioBuffer::new(channels, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let (bits, format) = match encoding {
        WavEncoding::Int16 => (16, SampleFormat::Int),
        WavEncoding::Int24 => (24, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for i in 0..audio.len() {
        for c in 0..audio.num_channels() {
            let s = audio.channel(c)[i];
            match encoding {
                WavEncoding::Float32 => writer.write_sample(s as f32),
                _ => {
                    let max = f64::from((1u32 << (bits - 1)) - 1);
                    let v = (s * (max + 1.0)).round().clamp(-max - 1.0, max) as i32;
                    writer.write_sample(v)
                }
            }
            .map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)
}
