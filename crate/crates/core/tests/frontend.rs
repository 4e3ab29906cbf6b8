mod common;

use inse_core::audio::{AudioBuffer, SAMPLE_RATE};
use inse_core::frontend::{
    downmix_mid, erb_center_frequencies, normalize_pair, pair_spectrograms, GammatoneConfig,
    GammatoneFrontend, PairedInput, Spectrogram, MODEL_BANDS, MODEL_FRAMES,
};
use inse_core::training::NormStats;
use inse_core::Error;
use proptest::prelude::*;
use std::sync::OnceLock;

fn frontend() -> &'static GammatoneFrontend {
    static F: OnceLock<GammatoneFrontend> = OnceLock::new();
    F.get_or_init(|| GammatoneFrontend::new(GammatoneConfig::default()).unwrap())
}

fn noise(len: usize, seed: u64, amp: f64) -> AudioBuffer {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::mono(
        (0..len)
            .map(|_| amp * rng.random_range(-1.0..1.0))
            .collect(),
        SAMPLE_RATE,
    )
    .unwrap()
}

#[test]
fn centres_match_closed_form() {
    let got = erb_center_frequencies(32, 50.0, 24_000.0).unwrap();
    let want = common::erb_centres_oracle(32, 50.0, 24_000.0);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-9 * w, "{g} vs {w}");
    }
}

#[test]
fn excerpt_shape_and_silence_floor() {
    let f = frontend();
    let s = f.compute(&common::sine(1000.0, 7.2, 0.5)).unwrap();
    assert_eq!((s.n_bands(), s.n_frames()), (MODEL_BANDS, MODEL_FRAMES));
    let quiet = f.compute(&AudioBuffer::silence(345_600)).unwrap();
    assert!(quiet.values().iter().all(|&v| v == -120.0));
}

#[test]
fn band_assignment_agrees_with_time_domain_gammatone() {
    let f = frontend();
    let centres = f.band_centers().to_vec();
    for &b in &[4usize, 12, 20] {
        // A tone between two centres lands in whichever band a direct
        // time-domain gammatone filter assigns it to.
        let tone = (centres[b] * centres[b + 1]).sqrt() * 1.02;
        let x = common::sine(tone, 1.0, 0.5);
        let spec = f.compute(&x).unwrap();
        let frame = spec.n_frames() / 2;
        let argmax = (0..spec.n_bands())
            .max_by(|&i, &j| spec.get(i, frame).total_cmp(&spec.get(j, frame)))
            .unwrap();
        let energies: Vec<f64> = [b, b + 1]
            .iter()
            .map(|&k| common::gammatone_energy(&x.channel(0)[..9600], centres[k], 48_000.0))
            .collect();
        let oracle = if energies[0] >= energies[1] { b } else { b + 1 };
        assert_eq!(argmax, oracle, "tone {tone:.1} Hz");
    }
}

#[test]
fn identical_inputs_give_identical_channels() {
    let f = frontend();
    let s = f.compute(&noise(345_600, 2, 0.3)).unwrap();
    let p = pair_spectrograms(&s, &s).unwrap();
    assert_eq!(p.channel(0), p.channel(1));
}

#[test]
fn too_few_frames_is_rejected() {
    let s = Spectrogram::new(
        vec![0.0; 32 * 357],
        32,
        frontend().band_centers().to_vec(),
        0.02,
    )
    .unwrap();
    assert!(matches!(pair_spectrograms(&s, &s), Err(Error::Pairing(_))));
}

#[test]
fn normalization_follows_formula() {
    let mut data = Vec::new();
    for c in 0..2 {
        for b in 0..MODEL_BANDS {
            for t in 0..MODEL_FRAMES {
                data.push((c * 7 + b) as f32 - t as f32 * 0.01);
            }
        }
    }
    let p = PairedInput::from_raw(data, MODEL_BANDS, MODEL_FRAMES, false).unwrap();
    let stats = NormStats {
        mean: (0..MODEL_BANDS).map(|b| -(b as f64)).collect(),
        std: (0..MODEL_BANDS)
            .map(|b| if b == 3 { 0.0 } else { 1.5 + b as f64 })
            .collect(),
    };
    let n = normalize_pair(&p, &stats).unwrap();
    assert!(n.is_normalized());
    for c in 0..2 {
        for b in 0..MODEL_BANDS {
            let sd = if stats.std[b] == 0.0 {
                1.0
            } else {
                stats.std[b]
            };
            for t in [0, 100, 359] {
                let want = (f64::from(p.get(c, b, t)) - stats.mean[b]) / sd;
                assert!((f64::from(n.get(c, b, t)) - want).abs() < 1e-5);
            }
        }
    }
    assert!(matches!(normalize_pair(&n, &stats), Err(Error::State(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn frame_count_is_ceiling_of_hops(n in 3840usize..60_000) {
        let s = frontend().compute(&noise(n, n as u64, 0.1)).unwrap();
        prop_assert_eq!(s.n_frames(), n.div_ceil(960));
    }

    #[test]
    fn louder_signal_has_more_energy(gain_db in 1.0f64..30.0, seed in 0u64..1000) {
        let quiet = noise(9600, seed, 0.01);
        let loud = quiet.map(|v| v * 10f64.powf(gain_db / 20.0));
        let a = frontend().compute(&quiet).unwrap();
        let b = frontend().compute(&loud).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn time_reversal_reverses_frames(hops in 4usize..20, seed in 0u64..1000) {
        let x = noise(hops * 960, seed, 0.2);
        let mut rev = x.channel(0).to_vec();
        rev.reverse();
        let r = AudioBuffer::mono(rev, SAMPLE_RATE).unwrap();
        let a = frontend().compute(&x).unwrap();
        let b = frontend().compute(&r).unwrap();
        prop_assert_eq!(a.n_frames(), b.n_frames());
        let t = a.n_frames();
        for band in 0..MODEL_BANDS {
            for f in 0..t {
                let (u, v) = (a.get(band, f), b.get(band, t - 1 - f));
                prop_assert!((u - v).abs() < 1e-3 * u.abs().max(1.0), "band {} frame {}: {} vs {}", band, f, u, v);
            }
        }
    }

    #[test]
    fn downmix_is_linear(a in -1.0f64..1.0, b in -1.0f64..1.0, seed in 0u64..1000) {
        let l = noise(1000, seed, 0.5);
        let r = noise(1000, seed + 1, 0.5);
        let st = |x: &AudioBuffer, y: &AudioBuffer| {
            AudioBuffer::stereo(x.channel(0).to_vec(), y.channel(0).to_vec(), SAMPLE_RATE).unwrap()
        };
        let combo = |k: f64, m: f64| {
            let lc: Vec<f64> = l.channel(0).iter().zip(r.channel(0)).map(|(p, q)| k * p + m * q).collect();
            AudioBuffer::mono(lc, SAMPLE_RATE).unwrap()
        };
        let left = combo(a, b);
        let right = combo(b, a);
        let lhs = downmix_mid(&st(&left, &right)).unwrap();
        let m1 = downmix_mid(&st(&l, &r)).unwrap();
        let m2 = downmix_mid(&st(&r, &l)).unwrap();
        for i in 0..1000 {
            let want = a * m1.channel(0)[i] + b * m2.channel(0)[i];
            prop_assert!((lhs.channel(0)[i] - want).abs() < 1e-12);
        }
    }
}
