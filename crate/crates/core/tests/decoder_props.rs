//! Decoder correctness and invariances.

use lbphy_core::channel::add_noise;
use lbphy_core::decoder::*;
use lbphy_core::waveform::{lb_waveform, lora_waveform, ModulationConfig, WaveformKind};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(sf: u32, n: u32) -> ModulationConfig {
    ModulationConfig::new(sf, n, 125e3).unwrap()
}

#[test]
fn noiseless_symbols_decode_correctly() {
    for n in 2..=4 {
        let c = cfg(7, n);
        for kind in [DecoderKind::Ml, DecoderKind::Fft] {
            let dec = Decoder::new(&c, kind);
            for a in 0..c.m() {
                let x = lb_waveform(a, &c).unwrap();
                assert_eq!(dec.decode(&x.samples).unwrap().decided_symbol, a, "n {n} {kind} a {a}");
            }
        }
    }
}

#[test]
fn batch_and_single_decisions_agree() {
    let c = cfg(8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut batch = Vec::new();
    for a in (0..c.m()).step_by(9) {
        let mut x = lb_waveform(a, &c).unwrap().samples;
        x.iter_mut().for_each(|v| *v *= 3.0);
        add_noise(&mut x, 0.05, &mut rng);
        batch.extend(x);
    }
    for kind in [DecoderKind::Ml, DecoderKind::Fft] {
        let dec = Decoder::new(&c, kind);
        let many = dec.decide_batch(&batch).unwrap();
        for (row, d) in batch.chunks(c.m()).zip(&many) {
            assert_eq!(dec.decode(row).unwrap().decided_symbol, *d);
        }
    }
}

#[test]
fn convenience_functions_match_decoder() {
    let c = cfg(7, 3);
    let x = lb_waveform(40, &c).unwrap();
    assert_eq!(ml_decode(&x.samples, &c).unwrap().decided_symbol, 40);
    let f = fft_decode(&x.samples, &c).unwrap();
    assert_eq!(f.decided_symbol, 40);
    assert_eq!(f.decoder_kind, DecoderKind::Fft);
    assert_eq!(f.bin_magnitudes.len(), 128);
}

#[test]
fn ml_and_fft_coincide_for_lora() {
    let c = cfg(7, 2);
    let ml = Decoder::for_family(&c, DecoderKind::Ml, WaveformKind::Lora);
    let fft = Decoder::new(&c, DecoderKind::Fft);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for a in 0..c.m() {
        let mut x = lora_waveform(a, &c).unwrap().samples;
        add_noise(&mut x, 0.08, &mut rng);
        let bm = ml.decode(&x).unwrap().bin_magnitudes;
        let bf = fft.decode(&x).unwrap().bin_magnitudes;
        for (p, q) in bm.iter().zip(&bf) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn length_and_name_errors() {
    let c = cfg(7, 2);
    assert!(Decoder::new(&c, DecoderKind::Ml).decode(&[Complex64::default(); 10]).is_err());
    assert!(fft_decode(&[Complex64::default(); 129], &c).is_err());
    assert_eq!("FFT".parse::<DecoderKind>().unwrap(), DecoderKind::Fft);
    assert!("viterbi".parse::<DecoderKind>().is_err());
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decisions_are_phase_and_scale_invariant(
        a in 0usize..128,
        theta in 0.0f64..std::f64::consts::TAU,
        scale_exp in -4i32..5,
        seed in any::<u64>(),
        ml in any::<bool>(),
    ) {
        let c = cfg(7, 2);
        let kind = if ml { DecoderKind::Ml } else { DecoderKind::Fft };
        let dec = Decoder::new(&c, kind);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = lb_waveform(a, &c).unwrap().samples;
        add_noise(&mut x, 0.2, &mut rng);
        // Power-of-two scaling is exact in floating point.
        let g = Complex64::from_polar(2f64.powi(scale_exp), theta);
        let y: Vec<Complex64> = x.iter().map(|v| v * g).collect();
        let bx = dec.decode(&x).unwrap();
        let by = dec.decode(&y).unwrap();
        prop_assert_eq!(bx.decided_symbol, by.decided_symbol);
        for (p, q) in bx.bin_magnitudes.iter().zip(&by.bin_magnitudes) {
            prop_assert!((p * g.norm() - q).abs() <= 1e-12 * q.max(1.0) * g.norm());
        }
    }
}
