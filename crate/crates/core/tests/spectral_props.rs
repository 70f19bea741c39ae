//! Closed-form spectrum against time-domain integration and sum rules.

mod common;

use common::{level_at, sa_oracle, same_phase, scanned_jumps};
use lbphy_core::spectral::*;
use lbphy_core::waveform::ModulationConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(sf: u32, n: u32) -> ModulationConfig {
    ModulationConfig::new(sf, n, 125e3).unwrap()
}

fn rel(a: num_complex::Complex64, b: num_complex::Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn breakpoints_match_a_dense_scan() {
    for (sf, n) in [(7, 1), (7, 2), (9, 3)] {
        let c = cfg(sf, n);
        let mut rng = ChaCha8Rng::seed_from_u64(sf as u64 * 10 + n as u64);
        for _ in 0..4 {
            let a = rng.random_range(0..c.m());
            let bp = breakpoints(a, &c).unwrap();
            let chips = bp.chips();
            assert_eq!(chips[0], 0.0);
            assert!((chips[chips.len() - 1] - c.m() as f64).abs() < 1e-12);
            assert!(chips.windows(2).all(|w| w[1] >= w[0]));
            // Jumps of the scan are a subset of the breakpoints; extra
            // breakpoints separate equal levels only.
            let jumps = scanned_jumps(a, &c);
            for j in &jumps {
                let d = chips.iter().map(|z| (z - j).abs()).fold(f64::INFINITY, f64::min);
                assert!(d < 1e-9, "sf {sf} n {n} a {a}: jump at {j} missing");
            }
            for (w, &lev) in chips.windows(2).zip(&bp.levels) {
                if w[1] - w[0] < 1e-9 {
                    continue;
                }
                for frac in [0.1, 0.5, 0.9] {
                    let s = w[0] + frac * (w[1] - w[0]);
                    assert!(same_phase(level_at(s, a, &c), lev), "sf {sf} n {n} a {a} s {s}");
                }
            }
        }
    }
}

#[test]
fn symbol_zero_breakpoints_count_level_changes() {
    let c = cfg(7, 1);
    let bp = breakpoints(0, &c).unwrap();
    let m = c.m() as f64;
    let samples = 1_000_000;
    let mut changes = 0;
    // s = 0 sits on a cell boundary; start just inside the first interval.
    let mut prev = level_at(0.5 * m / samples as f64, 0, &c);
    for k in 1..samples {
        let l = level_at(m * k as f64 / samples as f64, 0, &c);
        if l != prev {
            changes += 1;
        }
        prev = l;
    }
    let distinct = bp.levels.windows(2).filter(|w| !same_phase(w[0], w[1])).count();
    assert_eq!(distinct, changes);
}

#[test]
fn transform_matches_time_domain_integral() {
    for sf in [7, 9] {
        for n in 1..=4 {
            let c = cfg(sf, n);
            let b = c.bandwidth_hz;
            let mut rng = ChaCha8Rng::seed_from_u64(100 + sf as u64 * 8 + n as u64);
            for _ in 0..5 {
                let a = rng.random_range(0..c.m());
                let f = rng.random_range(-3.0..3.0) * b;
                let got = sa_fourier(a, &c, f).unwrap();
                let want = sa_oracle(a, &c, f);
                assert!(rel(got, want) < 1e-8, "sf {sf} n {n} a {a} f/B {}: {}", f / b, rel(got, want));
            }
        }
    }
}

#[test]
fn transform_fixed_examples() {
    let c = cfg(7, 2);
    for (a, nu) in [(0, 0.0), (0, 0.37), (5, -1.3), (64, 0.5)] {
        let f = nu * c.bandwidth_hz;
        let got = sa_fourier(a, &c, f).unwrap();
        assert!(rel(got, sa_oracle(a, &c, f)) < 1e-9, "a {a} nu {nu}");
    }
}

#[test]
fn transform_is_continuous_at_zero() {
    // Below the threshold the limit form is returned; above it
    // |Ŝ(ν) − Ŝ(0)| ≤ ∫_0^M |e^{−j2πνs} − 1| ds ≤ πνM².
    let c = cfg(7, 3);
    let b = c.bandwidth_hz;
    let m = c.m() as f64;
    for a in [0, 33, 100] {
        let s0 = sa_fourier(a, &c, 0.0).unwrap();
        assert_eq!(sa_fourier(a, &c, 0.999e-9 * b).unwrap(), s0);
        assert!(rel(sa_oracle(a, &c, 0.0), s0) < 1e-9);
        let mut prev = f64::INFINITY;
        for nu in [1e-6, 1e-7, 1e-8, 1.001e-9] {
            let d = (sa_fourier(a, &c, nu * b).unwrap() - s0).norm() * b;
            assert!(d <= std::f64::consts::PI * nu * m * m, "a {a} nu {nu}: {d}");
            assert!(d < prev);
            prev = d;
        }
    }
}

#[test]
fn grid_evaluation_matches_pointwise() {
    let c = cfg(8, 3);
    let bp = breakpoints(17, &c).unwrap();
    let b = c.bandwidth_hz;
    let grid = bp.fourier_grid_normalized(-2.0, 0.001, 4001);
    for k in (0..4001).step_by(97) {
        let nu = -2.0 + 0.001 * k as f64;
        let point = bp.fourier(nu * b) * b;
        assert!((grid[k] - point).norm() < 1e-9 * point.norm().max(1.0), "nu {nu}");
    }
}

#[test]
fn single_symbol_parseval() {
    // |Ŝ|² is the transform of an autocorrelation supported on |τ| < M, so a
    // grid of spacing 1/(2M) integrates it exactly apart from truncation.
    // Beyond |ν| = K the density decays as Σ|c|²/(4π²ν²) with c the phasor
    // steps (including the two edges), which gives the truncated tail.
    let c = cfg(7, 2);
    let m = c.m();
    let h = 1.0 / (2.0 * m as f64);
    let span = 50.0;
    let k = (span / h) as usize;
    for a in [0, 41] {
        let bp = breakpoints(a, &c).unwrap();
        let grid = bp.fourier_grid_normalized(-span, h, 2 * k + 1);
        let energy: f64 = grid.iter().map(|v| v.norm_sqr()).sum::<f64>() * h / m as f64;
        let jumps = scanned_jumps(a, &c);
        let steps: f64 = jumps
            .iter()
            .map(|&z| {
                let l = num_complex::Complex64::from_polar(1.0, level_at(z - 1e-9, a, &c));
                let r = num_complex::Complex64::from_polar(1.0, level_at(z + 1e-9, a, &c));
                (l - r).norm_sqr()
            })
            .sum::<f64>()
            + 2.0;
        let tail = steps / (2.0 * std::f64::consts::PI.powi(2) * span * m as f64);
        assert!(energy < 1.0 && 1.0 - energy < 3e-3, "a {a}: {energy}");
        assert!((energy + tail - 1.0).abs() < 1e-3, "a {a}: {energy} + {tail}");
    }
}

#[test]
fn total_power_is_unity() {
    let c = cfg(7, 2);
    let b = c.bandwidth_hz;
    let m = c.m() as f64;
    let h = 1.0 / (2.0 * m);
    let span = 50.0;
    let n = (2.0 * span / h) as usize + 1;
    let g = psd_continuous_grid(&c, -span * b, h * b, n).unwrap();
    let cont: f64 = g.iter().sum::<f64>() * h * b;
    let l = (span * m) as i64;
    let lines: f64 = psd_discrete_lines(&c, -l, l).unwrap().iter().map(|x| x.1).sum();
    let total = cont + lines;
    assert!((total - 1.0).abs() < 0.01, "{cont} + {lines}");
}

#[test]
fn spectrum_is_symmetric_and_nonnegative() {
    let c = cfg(8, 2);
    let b = c.bandwidth_hz;
    let spec = psd_analytic(&c, 2.0 * b, 801).unwrap();
    let n = spec.freqs.len();
    for i in 0..n {
        let (p, q) = (spec.continuous_psd[i], spec.continuous_psd[n - 1 - i]);
        assert!(p >= 0.0);
        assert!((p - q).abs() <= 1e-9 * p.max(q) + 1e-300, "f {}", spec.freqs[i]);
    }
    let lines = &spec.discrete_lines;
    let k = lines.len();
    for i in 0..k {
        assert!(lines[i].1 >= 0.0);
        assert!((lines[i].0 + lines[k - 1 - i].0).abs() < 1e-6);
        assert!((lines[i].1 - lines[k - 1 - i].1).abs() <= 1e-9 * lines[i].1.max(1e-30));
    }
    let p = psd_continuous(&c, 0.7 * b).unwrap();
    let q = psd_continuous(&c, -0.7 * b).unwrap();
    assert!((p - q).abs() <= 1e-9 * p);
}

#[test]
fn staircase_between_one_and_two_bandwidths() {
    let c = cfg(9, 2);
    let b = c.bandwidth_hz;
    let db = |f: f64| 10.0 * (psd_continuous(&c, f * b).unwrap() * b).log10();
    let (g05, g15, g20) = (db(0.5), db(1.5), db(2.0));
    assert!(g05 - g15 > 10.0, "{g05} {g15}");
    assert!((g15 - g20).abs() < 3.0, "{g15} {g20}");
}

#[test]
fn quantized_spectrum_approaches_lora() {
    let b = 125e3;
    let lora = cfg(7, 2);
    let lora_db = |f: f64| {
        let (g, _) = lora_psd_point(&lora, f * b).unwrap();
        10.0 * (g * b).log10()
    };
    let lb_db = |n: u32, f: f64| 10.0 * (psd_continuous(&cfg(7, n), f * b).unwrap() * b).log10();
    let at_b = lora_db(1.0);
    assert!(lb_db(2, 1.0) - at_b > 20.0);
    assert!(lb_db(4, 1.0) - at_b < 5.0);
    for f in [-0.5, -0.3, -0.1, 0.05, 0.2, 0.4, 0.5] {
        let gap = (lb_db(5, f) - lora_db(f)).abs();
        assert!(gap < 0.5, "f/B {f}: {gap}");
    }
}

#[test]
fn binned_spectrum_carries_the_total_power() {
    let c = cfg(7, 2);
    let b = c.bandwidth_hz;
    let bin = b / 64.0;
    let spec = psd_binned(&c, bin, 40.0 * b, 8).unwrap();
    let total: f64 = spec.continuous_psd.iter().sum::<f64>() * bin;
    assert!((total - 1.0).abs() < 0.01, "{total}");
}

#[test]
fn welch_is_deterministic_and_unbiased_in_band() {
    let c = cfg(7, 2);
    let b = c.bandwidth_hz;
    let x = mc_psd(&c, 2048, 4).unwrap();
    let y = mc_psd(&c, 2048, 4).unwrap();
    assert_eq!(x.continuous_psd, y.continuous_psd);
    assert!(mc_psd(&c, 100, 4).is_err());
    let g = psd_continuous(&c, 0.3 * b).unwrap();
    let i = x.freqs.iter().position(|&f| f >= 0.3 * b).unwrap();
    // Average a few neighbouring Welch bins around 0.3B.
    let w: f64 = x.continuous_psd[i - 8..i + 8].iter().sum::<f64>() / 16.0;
    assert!((10.0 * (w / g).log10()).abs() < 1.0);
}

#[test]
fn welch_variance_falls_with_more_symbols() {
    let c = cfg(7, 2);
    let b = c.bandwidth_hz;
    let small = mc_psd(&c, 1024, 9).unwrap();
    let large = mc_psd(&c, 4096, 9).unwrap();
    let var = |s: &SpectrumResult| {
        let v: Vec<f64> = s
            .freqs
            .iter()
            .zip(&s.continuous_psd)
            .filter(|(f, _)| f.abs() > 0.1 * b && f.abs() < 0.4 * b)
            .map(|(_, &g)| g * b)
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x / mean - 1.0).powi(2)).sum::<f64>() / v.len() as f64
    };
    assert!(var(&large) < var(&small));
}

#[test]
fn unlimited_mask_passes_with_infinite_margin() {
    let c = ModulationConfig::new(7, 2, 250e3).unwrap();
    let r = mask_check(&c, 14.0, 1000.0, &MaskSpec::unlimited()).unwrap();
    assert!(r.pass);
    assert_eq!(r.worst_margin_db, f64::INFINITY);
    assert!(r.violations.is_empty());
}

#[test]
fn mask_parsing_and_interpolation() {
    let m = MaskSpec::parse(ETSI_G1_MASK).unwrap();
    assert_eq!(m.limit_dbm(0.0), f64::INFINITY);
    assert_eq!(m.limit_dbm(125e3), 0.0);
    assert!((m.limit_dbm(375e3) + 18.0).abs() < 1e-12);
    assert_eq!(m.limit_dbm(-800e3), -36.0);
    assert_eq!(m.limit_dbm(5e6), -36.0);
    assert!(MaskSpec::parse("vertices = [[10.0, 0.0], [5.0, 0.0]]").is_err());
    assert!(MaskSpec::parse("vertices = []").is_err());
    assert!(MaskSpec::parse("name = 'x'\nvertices = [[0.0, 1.0]]\nextra = 1").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn continuous_psd_nonnegative(nu in -4.0f64..4.0, n in 1u32..5) {
        let c = cfg(7, n);
        prop_assert!(psd_continuous(&c, nu * c.bandwidth_hz).unwrap() >= 0.0);
    }
}
