//! Shared inputs for the criterion benchmarks.

use inse_core::audio::{AudioBuffer, SAMPLE_RATE};
use inse_core::frontend::{PairedInput, MODEL_BANDS, MODEL_FRAMES};

/// A 7.2 s two-tone test signal.
pub fn excerpt() -> AudioBuffer {
    let sr = f64::from(SAMPLE_RATE);
    let n = (7.2 * sr) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            0.3 * (std::f64::consts::TAU * 440.0 * t).sin()
                + 0.1 * (std::f64::consts::TAU * 3100.0 * t).sin()
        })
        .collect();
    AudioBuffer::mono(samples, SAMPLE_RATE).expect("finite samples")
}

/// A normalised pair filled with a deterministic ramp.
pub fn paired_input() -> PairedInput {
    let len = 2 * MODEL_BANDS * MODEL_FRAMES;
    let data = (0..len).map(|i| ((i % 97) as f32 - 48.0) / 30.0).collect();
    PairedInput::from_raw(data, MODEL_BANDS, MODEL_FRAMES, true).expect("consistent shape")
}
