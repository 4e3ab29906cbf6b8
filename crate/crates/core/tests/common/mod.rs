//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use inse_core::audio::{AudioBuffer, SAMPLE_RATE};
use inse_core::dataset::DatasetEntry;
use inse_core::model::{Model, ModelSpec};
use inse_core::nn::{Parameterized, Tensor};
use inse_core::synth::{build_toy_dataset, ToyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// ERB-number scale, inverted at equal steps from `f_min`.
pub fn erb_centres_oracle(n: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let e = |f: f64| 21.4 * (1.0 + 0.00437 * f).log10();
    let inv = |x: f64| (10f64.powf(x / 21.4) - 1.0) / 0.00437;
    let step = (e(f_max) - e(f_min)) / n as f64;
    (0..n).map(|i| inv(e(f_min) + i as f64 * step)).collect()
}

/// Product-moment correlation straight from the definition.
pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

/// Average rank by counting: 1 + #smaller + (#equal − 1) / 2.
pub fn brute_force_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    naive_pearson(&brute_force_ranks(x), &brute_force_ranks(y))
}

/// Welch PSD (Hann, 50 % overlap) and the least-squares slope of
/// 10·log10(P) against log2(f) over `[f_lo, f_hi]`, in dB per octave.
/// Bins are averaged into 1/6-octave bands first so every octave weighs the same.
pub fn psd_slope_db_per_octave(x: &[f64], sample_rate: f64, f_lo: f64, f_hi: f64) -> f64 {
    let seg = 8192;
    let hop = seg / 2;
    let window: Vec<f64> = (0..seg)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / seg as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let mut psd = vec![0.0; seg / 2 + 1];
    let mut count = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let mut buf: Vec<Complex<f64>> = x[start..start + seg]
            .iter()
            .zip(&window)
            .map(|(s, w)| Complex::new(s * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (p, c) in psd.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    assert!(count > 0, "signal shorter than one Welch segment");
    let bin_hz = sample_rate / seg as f64;
    let mut pts = Vec::new();
    let mut lo = f_lo;
    while lo < f_hi {
        let hi = (lo * 2f64.powf(1.0 / 6.0)).min(f_hi);
        let bins: Vec<f64> = (0..psd.len())
            .filter(|&k| {
                let f = k as f64 * bin_hz;
                f >= lo && f < hi
            })
            .map(|k| psd[k] / count as f64)
            .collect();
        if !bins.is_empty() {
            let mean = bins.iter().sum::<f64>() / bins.len() as f64;
            pts.push((((lo * hi).sqrt()).log2(), 10.0 * mean.log10()));
        }
        lo = hi;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Output energy of a 4th-order time-domain gammatone filter
/// `t³·exp(−2π·1.019·ERB(fc)·t)·cos(2π·fc·t)` applied to `x`.
pub fn gammatone_energy(x: &[f64], fc: f64, sample_rate: f64) -> f64 {
    let erb = 24.7 * (4.37 * fc / 1000.0 + 1.0);
    let b = 1.019 * erb;
    let len = ((8.0 / (2.0 * std::f64::consts::PI * b)) * sample_rate).ceil() as usize + 1;
    let ir: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / sample_rate;
            t.powi(3)
                * (-2.0 * std::f64::consts::PI * b * t).exp()
                * (2.0 * std::f64::consts::PI * fc * t).cos()
        })
        .collect();
    let norm: f64 = ir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut energy = 0.0;
    for n in len..x.len() {
        let y: f64 = ir
            .iter()
            .enumerate()
            .map(|(k, h)| h * x[n - k])
            .sum::<f64>()
            / norm;
        energy += y * y;
    }
    energy
}

pub fn sine(freq: f64, seconds: f64, amplitude: f64) -> AudioBuffer {
    let sr = f64::from(SAMPLE_RATE);
    let n = (seconds * sr).round() as usize;
    let s = (0..n)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
        .collect();
    AudioBuffer::mono(s, SAMPLE_RATE).unwrap()
}

/// The toy corpus, generated once per test binary under the target directory.
pub fn toy_corpus() -> &'static (PathBuf, Vec<DatasetEntry>) {
    static CORPUS: OnceLock<(PathBuf, Vec<DatasetEntry>)> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let dir =
            Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("toy-{}", std::process::id()));
        let entries = build_toy_dataset(&dir, &ToyConfig::default()).expect("toy corpus");
        (dir, entries)
    })
}

/// Writes an executable shell script.
pub fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let p = dir.join(name);
    std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p
}

pub fn random_tensor_f64(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(
        shape,
        (0..shape.iter().product())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

/// Largest relative difference between back-propagated and central-difference
/// gradients over every trainable scalar of the miniature model.
pub fn max_gradient_error(step: f64, seed: u64) -> f64 {
    let spec = ModelSpec::miniature();
    let mut model = Model::<f64>::new(&spec, seed).unwrap();
    let [c, h, w] = spec.input_shape;
    let x = random_tensor_f64([3, c, h, w], seed + 100);
    let weights = [0.7, -1.3, 0.4];
    let objective = |m: &mut Model<f64>| -> f64 {
        m.forward(&x)
            .unwrap()
            .iter()
            .zip(&weights)
            .map(|(s, k)| s * k)
            .sum()
    };
    model.zero_grad();
    objective(&mut model);
    model.backward(&weights);
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|(_, p)| p.grad.clone()).collect();
    let trainable: Vec<bool> = model.params().iter().map(|(_, p)| p.trainable).collect();
    let mut worst: f64 = 0.0;
    for (pi, grads) in analytic.iter().enumerate() {
        if !trainable[pi] {
            continue;
        }
        for (k, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].1.value[k];
            model.params_mut()[pi].1.value[k] = orig + step;
            let up = objective(&mut model);
            model.params_mut()[pi].1.value[k] = orig - step;
            let down = objective(&mut model);
            model.params_mut()[pi].1.value[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// A small toy corpus in its own directory.
pub fn small_toy(dir: &Path, excerpts: usize) -> Vec<DatasetEntry> {
    build_toy_dataset(
        dir,
        &ToyConfig {
            excerpts,
            ..ToyConfig::default()
        },
    )
    .expect("toy corpus")
}

/// Random standardised pairs of model input shape.
pub fn random_pairs(n: usize, seed: u64) -> Vec<inse_core::frontend::PairedInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..2 * 32 * 360)
                .map(|_| rng.random_range(-1.5f32..1.5))
                .collect();
            inse_core::frontend::PairedInput::from_raw(data, 32, 360, true).unwrap()
        })
        .collect()
}
