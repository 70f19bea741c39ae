//! Monte Carlo estimation, scenario parsing and artifact writing.

use lbphy_core::decoder::DecoderKind;
use lbphy_core::harness::*;
use lbphy_core::waveform::{ModulationConfig, WaveformKind};
use lbphy_core::Error;
use proptest::prelude::*;

fn job(sf: u32, n: u32, snr_db: Vec<f64>, trials: u64, seed: u64) -> SerJob {
    SerJob {
        cfg: ModulationConfig::new(sf, n, 125e3).unwrap(),
        family: WaveformKind::Lb,
        channel: ChannelSpec::Awgn,
        decoders: vec![DecoderKind::Ml, DecoderKind::Fft],
        snr_db,
        budget: TrialBudget { trials, min_errors: 0, max_trials: trials },
        seed,
    }
}

fn temp_dir(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("lbphy-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn wilson_reference_values() {
    // Closed-form values of the score interval.
    let (lo, hi) = wilson_interval(0, 10, Z95);
    assert_eq!(lo, 0.0);
    assert!((hi - Z95 * Z95 / (10.0 + Z95 * Z95)).abs() < 1e-15);
    let (lo, hi) = wilson_interval(5, 10, Z95);
    assert!((lo - 0.236593090512564).abs() < 1e-12 && (hi - 0.763406909487436).abs() < 1e-12);
    let (lo, hi) = wilson_interval(10, 10, Z95);
    assert!(hi == 1.0 && (lo - 10.0 / (10.0 + Z95 * Z95)).abs() < 1e-15);
}

#[test]
fn trial_seeds_are_distinct() {
    let mut seen = std::collections::HashSet::new();
    for p in 0..8 {
        for t in 0..1000 {
            assert!(seen.insert(trial_seed(7, p, t)));
        }
    }
    assert_ne!(trial_seed(1, 0, 0), trial_seed(2, 0, 0));
}

#[test]
fn noiseless_limit_has_no_errors() {
    let j = job(7, 4, vec![40.0], 100_000, 3);
    let pts = mc_ser(&j).unwrap();
    for e in &pts[0].estimates {
        assert_eq!(e.errors_count, 0);
        assert_eq!(e.trials, 100_000);
        assert_eq!(e.ser_hat, 0.0);
    }
}

#[test]
fn equal_seeds_give_identical_counts() {
    let a = mc_ser(&job(7, 2, vec![-16.0, -12.0], 20_000, 42)).unwrap();
    let b = mc_ser(&job(7, 2, vec![-16.0, -12.0], 20_000, 42)).unwrap();
    let c = mc_ser(&job(7, 2, vec![-16.0, -12.0], 20_000, 43)).unwrap();
    for (p, q) in a.iter().zip(&b) {
        for (x, y) in p.estimates.iter().zip(&q.estimates) {
            assert_eq!(x.errors_count, y.errors_count);
            assert_eq!(x.ser_hat.to_bits(), y.ser_hat.to_bits());
        }
    }
    assert_ne!(a[0].estimates[0].errors_count, c[0].estimates[0].errors_count);
}

#[test]
fn dumped_bins_reproduce_the_decision() {
    let j = job(7, 2, vec![-14.0], 1000, 5);
    let t = trial_bins(&j, 0, 17).unwrap();
    assert_eq!(t.bins.len(), 2);
    for (d, bins) in t.decided.iter().zip(&t.bins) {
        assert_eq!(bins.len(), 128);
        assert_eq!(*d, lbphy_core::decoder::argmax(bins));
    }
    assert_eq!(trial_bins(&j, 0, 17).unwrap().sent, t.sent);
}

#[test]
fn escalation_reaches_the_error_target() {
    let mut j = job(7, 2, vec![-8.0], 5_000, 1);
    j.decoders = vec![DecoderKind::Ml];
    j.budget = TrialBudget { trials: 5_000, min_errors: 100, max_trials: 200_000 };
    let p = &mc_ser(&j).unwrap()[0];
    let e = &p.estimates[0];
    assert!(e.errors_count >= 100 || e.trials == 200_000);
    assert_eq!(e.trials % 5_000, 0);
    assert!(e.trials > 5_000);
}

#[test]
fn quadrupling_trials_halves_the_interval() {
    let mut j = job(7, 2, vec![-14.0], 40_000, 11);
    j.decoders = vec![DecoderKind::Fft];
    let small = mc_ser(&j).unwrap()[0].estimates[0];
    j.budget = TrialBudget { trials: 160_000, min_errors: 0, max_trials: 160_000 };
    let large = mc_ser(&j).unwrap()[0].estimates[0];
    let ratio = (small.ci_hi - small.ci_lo) / (large.ci_hi - large.ci_lo);
    assert!((ratio / 2.0 - 1.0).abs() < 0.1, "{ratio}");
}

#[test]
fn invalid_jobs_name_the_key() {
    let mut j = job(7, 2, vec![], 100, 1);
    assert!(matches!(mc_ser(&j), Err(Error::Config { ref key, .. }) if key == "snr_db"));
    j.snr_db = vec![-10.0, -12.0];
    assert!(matches!(mc_ser(&j), Err(Error::Config { ref key, .. }) if key == "snr_db"));
    j.snr_db = vec![-10.0];
    j.decoders.clear();
    assert!(matches!(mc_ser(&j), Err(Error::Config { ref key, .. }) if key == "decoders"));
    j.decoders = vec![DecoderKind::Ml];
    j.budget.trials = 0;
    assert!(matches!(mc_ser(&j), Err(Error::Config { ref key, .. }) if key == "trials"));
}

#[test]
fn ranges_parse() {
    assert_eq!(parse_range("-2:1:1").unwrap(), vec![-2.0, -1.0, 0.0, 1.0]);
    assert_eq!(parse_range("5:6:0.5").unwrap(), vec![5.0, 5.5, 6.0]);
    assert!(parse_range("1:0:1").is_err());
    assert!(parse_range("1:2").is_err());
    assert!(parse_range("a:b:c").is_err());
}

#[test]
fn unknown_keys_are_reported_by_name() {
    let base = "name = \"x\"\n[cross_corr]\nsf = [7]\nn = [2]\n";
    assert!(parse_scenario(base).is_ok());
    for (text, key) in [
        (format!("{base}bogus = 1\n"), "bogus"),
        ("name = \"x\"\nspeed = 2\n[cross_corr]\nsf = [7]\nn = [2]\n".to_string(), "speed"),
        ("name = \"x\"\n[cross_corr]\nsf = [7]\n".to_string(), "n"),
        (
            "name = \"x\"\n[ser]\nsf = [7]\nn = [2]\ndecoders = [\"ml\"]\nsnr_db = \"0:1:1\"\nchannels = [{ kind = \"nakagami\", m1 = 2.0, m2 = 1.0, q = 3 }]\n"
                .to_string(),
            "q",
        ),
    ] {
        match parse_scenario(&text) {
            Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
            other => panic!("expected config error for {key}, got {other:?}"),
        }
    }
    match parse_scenario("name = \"x\"\n") {
        Err(Error::Config { key, .. }) => assert_eq!(key, "task"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn presets_parse() {
    for (id, _) in PRESETS {
        let sc = preset(id).unwrap();
        assert_eq!(&sc.name, id);
        sc.task().unwrap();
    }
    assert!(preset("fig99").is_err());
}

#[test]
fn scenario_runs_write_identical_plot_data() {
    let text = r#"
name = "small"
[ser]
sf = [7]
n = [2]
decoders = ["ml", "fft"]
channels = [{ kind = "awgn" }]
snr_db = [-16.0, -14.0]
seed = 3
lora_reference = true
[ser.budget]
trials = 3000
min_errors = 0
max_trials = 3000
"#;
    let sc = parse_scenario(text).unwrap();
    let d1 = temp_dir("a");
    let d2 = temp_dir("b");
    let r1 = run_scenario(&sc, Some(&d1)).unwrap();
    let r2 = run_scenario(&sc, Some(&d2)).unwrap();
    assert!(r1.sidecar.exists());
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&r1.sidecar).unwrap()).unwrap();
    assert!(meta.get("scenario").is_some() && meta.get("git_describe").is_some());
    assert_eq!(r1.files.len(), r2.files.len());
    assert!(r1.files.len() >= 5);
    for (a, b) in r1.files.iter().zip(&r2.files) {
        assert_eq!(a.file_name(), b.file_name());
        let (x, y) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        assert_eq!(x, y, "{}", a.display());
        let text = String::from_utf8(x).unwrap();
        for line in text.lines() {
            assert_eq!(line.split(' ').count(), 2, "{line}");
        }
    }
    let _ = std::fs::remove_dir_all(&d1);
    let _ = std::fs::remove_dir_all(&d2);
}

#[test]
fn small_presets_run() {
    let d = temp_dir("kappa");
    let r = run_scenario(&preset("table3").unwrap(), Some(&d)).unwrap();
    let kappa = std::fs::read_to_string(&r.files[0]).unwrap();
    assert_eq!(kappa.lines().filter(|l| !l.starts_with('#')).count(), 4);
    let _ = std::fs::remove_dir_all(&d);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wilson_interval_contains_estimate(trials in 1u64..100_000, frac in 0.0f64..1.0) {
        let errors = ((trials as f64) * frac).floor() as u64;
        let e = MCEstimate::from_counts(errors, trials);
        prop_assert!(e.ci_lo <= e.ser_hat && e.ser_hat <= e.ci_hi);
        prop_assert!(e.ci_lo >= 0.0 && e.ci_hi <= 1.0);
        prop_assert!(e.errors_count <= e.trials);
    }
}
