//! Monte Carlo SER campaigns, scenario files, result artifacts and the
//! shipped reproduction presets.
//!
//! Every trial draws from its own ChaCha8 stream keyed by
//! `(seed, point, trial)`, so results do not depend on thread count or
//! batch scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    lora_ser_reference, ser_awgn_with, ser_fading_fixed, ser_fading_waterfill, waterfill_outage, AnalyticOptions,
    BinStatistics, SerPoint,
};
use crate::channel::{add_noise, sample_channel, ChannelMode, FadingParams};
use crate::decoder::{Decoder, DecoderKind};
use crate::error::{Error, Result};
use crate::spectral::{lora_psd_point, mask_check, mc_psd, psd_analytic, psd_binned, MaskSpec, ETSI_G1_MASK};
use crate::waveform::{cross_corr, max_cross_corr, waveform_table, ModulationConfig, WaveformKind};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

const BATCH: usize = 128;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the stream used by one trial.
pub fn trial_seed(seed: u64, point: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ point) ^ trial)
}

/// Wilson score interval for `errors` out of `trials` at normal quantile `z`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// Monte Carlo SER estimate with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub ser_hat: f64,
    pub trials: u64,
    pub errors_count: u64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl MCEstimate {
    pub fn from_counts(errors: u64, trials: u64) -> Self {
        let (ci_lo, ci_hi) = wilson_interval(errors, trials, Z95);
        let ser_hat = if trials == 0 { 0.0 } else { errors as f64 / trials as f64 };
        Self { ser_hat, trials, errors_count: errors, ci_lo, ci_hi }
    }

    pub fn contains(&self, p: f64) -> bool {
        p >= self.ci_lo && p <= self.ci_hi
    }
}

/// Fading link description: spreads given directly or from distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingSpec {
    pub m1: f64,
    pub m2: f64,
    pub omega1: Option<f64>,
    pub omega2: Option<f64>,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    #[serde(default)]
    pub mode: ChannelMode,
}

impl FadingSpec {
    pub fn params(&self) -> Result<FadingParams> {
        match (self.omega1, self.omega2, self.d1, self.d2) {
            (Some(o1), Some(o2), None, None) => FadingParams::new(self.m1, o1, self.m2, o2),
            (None, None, Some(d1), Some(d2)) => FadingParams::from_distances(self.m1, self.m2, d1, d2),
            (None, None, None, None) => FadingParams::new(self.m1, 1.0, self.m2, 1.0),
            _ => Err(Error::Config { key: "channel".into(), msg: "give either omega1 and omega2 or d1 and d2".into() }),
        }
    }

    fn label(&self) -> String {
        let mut s = format!("m{}-{}", self.m1, self.m2);
        if let (Some(d1), Some(d2)) = (self.d1, self.d2) {
            write!(s, "_r{}", d2 / d1).unwrap();
        }
        if let (Some(o1), Some(o2)) = (self.omega1, self.omega2) {
            write!(s, "_o{o1}-{o2}").unwrap();
        }
        s
    }
}

/// Propagation model of an SER scenario. Fading SNRs are `γ̃ = E_s/(2σ²M)`
/// before the channel gain; water-filling SNRs refer to `Ē_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    Awgn,
    Nakagami(FadingSpec),
    Waterfill(FadingSpec),
}

impl ChannelSpec {
    fn label(&self) -> String {
        match self {
            Self::Awgn => "awgn".into(),
            Self::Nakagami(f) => format!("nak_{}", f.label()),
            Self::Waterfill(f) => format!("wf_{}", f.label()),
        }
    }
}

/// Trial budget of one SNR point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialBudget {
    /// Trials per escalation step, and the minimum per point.
    pub trials: u64,
    /// Escalation stops once every decoder has this many errors.
    pub min_errors: u64,
    pub max_trials: u64,
}

impl Default for TrialBudget {
    fn default() -> Self {
        Self { trials: 100_000, min_errors: 100, max_trials: 10_000_000 }
    }
}

/// SER Monte Carlo job for one modulation and channel.
#[derive(Debug, Clone)]
pub struct SerJob {
    pub cfg: ModulationConfig,
    pub family: WaveformKind,
    pub channel: ChannelSpec,
    pub decoders: Vec<DecoderKind>,
    pub snr_db: Vec<f64>,
    pub budget: TrialBudget,
    pub seed: u64,
}

/// Outcome of one SNR point of [`mc_ser`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McPoint {
    pub snr_db: f64,
    /// One estimate per decoder of the job, in order.
    pub estimates: Vec<MCEstimate>,
    /// Channel draws including outages (water-filling only).
    pub draws: u64,
    /// Mean allocated energy over all draws relative to `Ē_s`.
    pub mean_energy: f64,
    pub gamma0: Option<f64>,
}

#[derive(Default, Clone)]
struct Tally {
    errors: Vec<u64>,
    draws: u64,
    energy: f64,
}

enum Draw {
    Fixed,
    Fading(FadingParams, ChannelMode),
    Waterfill(FadingParams, ChannelMode, f64),
}

/// Runs the Monte Carlo SER of every decoder of `job` at each SNR point.
/// All decoders see the same trials.
pub fn mc_ser(job: &SerJob) -> Result<Vec<McPoint>> {
    validate_job(job)?;
    let m = job.cfg.m();
    let table = waveform_table(job.family, &job.cfg);
    let decoders: Vec<Decoder> = job.decoders.iter().map(|&k| Decoder::for_family(&job.cfg, k, job.family)).collect();
    let mut out = Vec::with_capacity(job.snr_db.len());
    for (pi, &db) in job.snr_db.iter().enumerate() {
        let gamma = 10f64.powf(db / 10.0);
        let (draw, gamma0) = point_draw(&job.channel, gamma)?;
        let mut total = Tally { errors: vec![0; decoders.len()], ..Default::default() };
        let mut done = 0u64;
        loop {
            let n = job.budget.trials.min(job.budget.max_trials - done);
            let t = run_trials(job, &table, &decoders, &draw, gamma, pi as u64, done, n, m)?;
            for (a, b) in total.errors.iter_mut().zip(&t.errors) {
                *a += b;
            }
            total.draws += t.draws;
            total.energy += t.energy;
            done += n;
            let enough = total.errors.iter().all(|&e| e >= job.budget.min_errors);
            if enough || done >= job.budget.max_trials {
                break;
            }
        }
        log::debug!("snr {db} dB: {done} trials, errors {:?}", total.errors);
        out.push(McPoint {
            snr_db: db,
            estimates: total.errors.iter().map(|&e| MCEstimate::from_counts(e, done)).collect(),
            draws: total.draws,
            mean_energy: if total.draws > 0 { total.energy / total.draws as f64 } else { 0.0 },
            gamma0,
        });
    }
    Ok(out)
}

fn validate_job(job: &SerJob) -> Result<()> {
    if job.decoders.is_empty() {
        return Err(Error::Config { key: "decoders".into(), msg: "at least one decoder is required".into() });
    }
    check_grid(&job.snr_db)?;
    let b = &job.budget;
    if b.trials == 0 || b.max_trials < b.trials {
        return Err(Error::Config { key: "trials".into(), msg: "need 1 <= trials <= max_trials".into() });
    }
    Ok(())
}

fn check_grid(snr_db: &[f64]) -> Result<()> {
    if snr_db.is_empty() {
        return Err(Error::Config { key: "snr_db".into(), msg: "grid is empty".into() });
    }
    if snr_db.iter().any(|x| !x.is_finite()) || snr_db.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config { key: "snr_db".into(), msg: "grid must be finite and sorted".into() });
    }
    Ok(())
}

/// Synthesizes one received symbol into `row`. Returns the sent symbol, the
/// channel draws used and the allocated energy relative to `Ē_s`.
fn synth_trial(
    seed: u64,
    point: u64,
    trial: u64,
    table: &[Complex64],
    draw: &Draw,
    gamma: f64,
    row: &mut [Complex64],
) -> (usize, u64, f64) {
    let m = row.len();
    let es = 2.0 * m as f64 * gamma;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, point, trial));
    let a = rng.random_range(0..m);
    let mut draws = 1;
    let mut energy = 1.0;
    let g = match draw {
        Draw::Fixed => Complex64::new(es.sqrt(), 0.0),
        Draw::Fading(p, mode) => sample_channel(p, *mode, &mut rng).gain() * es.sqrt(),
        Draw::Waterfill(p, mode, g0) => {
            draws = 0;
            loop {
                let d = sample_channel(p, *mode, &mut rng);
                draws += 1;
                let inst = gamma * d.h_amp * d.h_amp;
                if inst > *g0 {
                    energy = 1.0 / g0 - 1.0 / inst;
                    break d.gain() * (es * energy).sqrt();
                }
            }
        }
    };
    for (r, s) in row.iter_mut().zip(&table[a * m..(a + 1) * m]) {
        *r = g * s;
    }
    add_noise(row, 1.0, &mut rng);
    (a, draws, energy)
}

fn point_draw(channel: &ChannelSpec, gamma: f64) -> Result<(Draw, Option<f64>)> {
    Ok(match channel {
        ChannelSpec::Awgn => (Draw::Fixed, None),
        ChannelSpec::Nakagami(f) => (Draw::Fading(f.params()?, f.mode), None),
        ChannelSpec::Waterfill(f) => {
            let p = f.params()?;
            let g0 = waterfill_outage(gamma, &p)?.gamma0;
            (Draw::Waterfill(p, f.mode, g0), Some(g0))
        }
    })
}

/// Sent symbol and per-decoder bin magnitudes of one trial of a job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialBins {
    pub snr_db: f64,
    pub trial: u64,
    pub sent: usize,
    pub decided: Vec<usize>,
    pub bins: Vec<Vec<f64>>,
}

/// Regenerates trial `trial` of SNR point `point` exactly as [`mc_ser`]
/// draws it and returns the decoder bin magnitudes.
pub fn trial_bins(job: &SerJob, point: usize, trial: u64) -> Result<TrialBins> {
    validate_job(job)?;
    let db = *job.snr_db.get(point).ok_or_else(|| Error::Domain(format!("no SNR point {point}")))?;
    let gamma = 10f64.powf(db / 10.0);
    let (draw, _) = point_draw(&job.channel, gamma)?;
    let table = waveform_table(job.family, &job.cfg);
    let mut row = vec![Complex64::new(0.0, 0.0); job.cfg.m()];
    let (sent, _, _) = synth_trial(job.seed, point as u64, trial, &table, &draw, gamma, &mut row);
    let mut bins = Vec::new();
    let mut decided = Vec::new();
    for &k in &job.decoders {
        let out = Decoder::for_family(&job.cfg, k, job.family).decode(&row)?;
        decided.push(out.decided_symbol);
        bins.push(out.bin_magnitudes);
    }
    Ok(TrialBins { snr_db: db, trial, sent, decided, bins })
}

#[allow(clippy::too_many_arguments)]
fn run_trials(
    job: &SerJob,
    table: &[Complex64],
    decoders: &[Decoder],
    draw: &Draw,
    gamma: f64,
    point: u64,
    first: u64,
    n: u64,
    m: usize,
) -> Result<Tally> {
    let batches = n.div_ceil(BATCH as u64);
    let per_batch: Vec<Result<Tally>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let start = first + b * BATCH as u64;
            let count = (n - b * BATCH as u64).min(BATCH as u64) as usize;
            let mut rx = vec![Complex64::new(0.0, 0.0); count * m];
            let mut sent = Vec::with_capacity(count);
            let mut tally = Tally { errors: vec![0; decoders.len()], ..Default::default() };
            for (q, row) in rx.chunks_mut(m).enumerate() {
                let (a, draws, energy) = synth_trial(job.seed, point, start + q as u64, table, draw, gamma, row);
                tally.draws += draws;
                tally.energy += energy;
                sent.push(a);
            }
            for (d, dec) in decoders.iter().enumerate() {
                let decided = dec.decide_batch(&rx)?;
                tally.errors[d] += decided.iter().zip(&sent).filter(|(x, y)| x != y).count() as u64;
            }
            Ok(tally)
        })
        .collect();
    let mut total = Tally { errors: vec![0; decoders.len()], ..Default::default() };
    for t in per_batch {
        let t = t?;
        for (a, b) in total.errors.iter_mut().zip(&t.errors) {
            *a += b;
        }
        total.draws += t.draws;
        total.energy += t.energy;
    }
    Ok(total)
}

/// Analytic SER of one decoder over a grid of SNRs in dB.
pub fn analytic_curve(
    cfg: &ModulationConfig,
    kind: DecoderKind,
    channel: &ChannelSpec,
    snr_db: &[f64],
    opts: &AnalyticOptions,
) -> Result<Vec<SerPoint>> {
    let rule = crate::analytic::hermite_rule(opts.gh_order)?;
    snr_db
        .iter()
        .map(|&db| {
            let g = 10f64.powf(db / 10.0);
            match channel {
                ChannelSpec::Awgn => ser_awgn_with(g, cfg, kind, &rule, opts.symbol_stride),
                ChannelSpec::Nakagami(f) => ser_fading_fixed(g, cfg, kind, &f.params()?, opts),
                ChannelSpec::Waterfill(f) => ser_fading_waterfill(g, cfg, kind, &f.params()?, opts),
            }
        })
        .collect()
}

/// Accepts either a list of values or a `"start:stop:step"` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range(String),
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            Self::List(v) => Ok(v.clone()),
            Self::Range(s) => parse_range(s),
        }
    }
}

/// Parses `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config { key: "snr_db".into(), msg: format!("expected start:stop:step, got {s:?}") };
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> =
        parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
    let (a, b, h) = (v[0], v[1], v[2]);
    if !(h > 0.0) || b < a {
        return Err(bad());
    }
    let n = ((b - a) / h + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| a + k as f64 * h).collect())
}

fn default_bandwidth() -> f64 {
    125e3
}
fn default_true() -> bool {
    true
}
fn default_seed() -> u64 {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// SER scenario: analytic and/or Monte Carlo curves for every combination
/// of spreading factor, level count, channel and decoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerScenario {
    pub sf: Vec<u32>,
    pub n: Vec<u32>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default)]
    pub waveform: WaveformKindSpec,
    pub decoders: Vec<DecoderKind>,
    pub channels: Vec<ChannelSpec>,
    pub snr_db: Grid,
    #[serde(default = "default_true")]
    pub analytic: bool,
    #[serde(default = "default_true")]
    pub monte_carlo: bool,
    /// Also emit the orthogonal LoRa reference curve (AWGN only).
    #[serde(default)]
    pub lora_reference: bool,
    #[serde(default)]
    pub budget: TrialBudget,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub analytic_options: AnalyticOptions,
}

/// Waveform family as written in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WaveformKindSpec {
    #[default]
    Lb,
    Lora,
}

impl From<WaveformKindSpec> for WaveformKind {
    fn from(w: WaveformKindSpec) -> Self {
        match w {
            WaveformKindSpec::Lb => WaveformKind::Lb,
            WaveformKindSpec::Lora => WaveformKind::Lora,
        }
    }
}

/// Spectrum scenario: closed-form continuous part and lines, optionally the
/// binned total, a Welch estimate and the LoRa baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdScenario {
    pub sf: Vec<u32>,
    pub n: Vec<u32>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    /// Half-width of the frequency range in units of `B`.
    pub fmax: f64,
    pub points: usize,
    /// Bin width in units of `B` for the binned total; 0 disables it.
    #[serde(default)]
    pub bin: f64,
    /// Welch symbols; 0 disables the estimate.
    #[serde(default)]
    pub welch_symbols: usize,
    /// Number of points of the LoRa baseline; 0 disables it.
    #[serde(default)]
    pub lora_points: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

/// Spectral-mask scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskScenario {
    pub sf: Vec<u32>,
    pub n: Vec<u32>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    pub power_dbm: f64,
    pub rbw_hz: f64,
    /// Mask file, or `etsi_g1` for the shipped mask.
    pub mask: String,
}

/// Maximum off-diagonal ML cross-correlation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossCorrScenario {
    pub sf: Vec<u32>,
    pub n: Vec<u32>,
}

/// Correct-bin Rician statistics at one SNR.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaScenario {
    pub sf: u32,
    pub n: Vec<u32>,
    pub snr_db: f64,
    #[serde(default)]
    pub symbol: usize,
    /// Noise variance per real dimension used for the raw moments.
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
}

fn default_sigma2() -> f64 {
    1.0
}

/// A scenario file: a name, an output directory and exactly one task table
/// (`[ser]`, `[psd]`, `[mask]`, `[cross_corr]` or `[kappa]`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ser: Option<SerScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psd: Option<PsdScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_corr: Option<CrossCorrScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaScenario>,
}

/// The task of a scenario.
#[derive(Debug, Clone, Copy)]
pub enum Task<'a> {
    Ser(&'a SerScenario),
    Psd(&'a PsdScenario),
    Mask(&'a MaskScenario),
    CrossCorr(&'a CrossCorrScenario),
    Kappa(&'a KappaScenario),
}

impl Scenario {
    /// The single task table, or a configuration error.
    pub fn task(&self) -> Result<Task<'_>> {
        let mut tasks = Vec::new();
        if let Some(s) = &self.ser {
            tasks.push(Task::Ser(s));
        }
        if let Some(s) = &self.psd {
            tasks.push(Task::Psd(s));
        }
        if let Some(s) = &self.mask {
            tasks.push(Task::Mask(s));
        }
        if let Some(s) = &self.cross_corr {
            tasks.push(Task::CrossCorr(s));
        }
        if let Some(s) = &self.kappa {
            tasks.push(Task::Kappa(s));
        }
        match tasks.as_slice() {
            [t] => Ok(*t),
            _ => Err(Error::Config {
                key: "task".into(),
                msg: format!(
                    "expected exactly one of [ser], [psd], [mask], [cross_corr], [kappa]; found {}",
                    tasks.len()
                ),
            }),
        }
    }
}

/// Parses a scenario. Unknown or malformed keys yield [`Error::Config`]
/// naming the key.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let sc: Scenario = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let key = offending_key(&msg)
            .or_else(|| e.span().map(|sp| text[sp].trim().to_string()))
            .unwrap_or_else(|| "<scenario>".into());
        Error::Config { key, msg }
    })?;
    sc.task()?;
    Ok(sc)
}

fn offending_key(msg: &str) -> Option<String> {
    for prefix in ["unknown field `", "missing field `"] {
        if let Some(i) = msg.find(prefix) {
            let rest = &msg[i + prefix.len()..];
            return rest.find('`').map(|j| rest[..j].to_string());
        }
    }
    None
}

fn config(sf: u32, n: u32, b: f64) -> Result<ModulationConfig> {
    ModulationConfig::new(sf, n, b)
}

/// Files written by a scenario run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub files: Vec<PathBuf>,
    pub sidecar: PathBuf,
    pub elapsed_s: f64,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
    meta: BTreeMap<String, serde_json::Value>,
}

impl Artifacts {
    fn write_dat(&mut self, name: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut s = String::new();
        for r in rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:.10e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        let path = self.dir.join(name);
        std::fs::write(&path, s)?;
        self.files.push(path);
        Ok(())
    }

    fn record(&mut self, key: impl Into<String>, value: impl Serialize) {
        self.meta.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Reads, runs and writes one scenario file. The output directory is taken
/// relative to the current directory.
pub fn run_scenario_file(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path)?;
    let sc = parse_scenario(&text)?;
    run_scenario(&sc, None)
}

/// Runs a parsed scenario, optionally overriding its output directory.
pub fn run_scenario(sc: &Scenario, out_dir: Option<&Path>) -> Result<RunReport> {
    let started = Instant::now();
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| sc.output.clone());
    std::fs::create_dir_all(&dir)?;
    let mut art = Artifacts { dir: dir.clone(), files: Vec::new(), meta: BTreeMap::new() };
    art.record("scenario", sc);
    art.record("git_describe", git_describe());
    art.record("crate_version", env!("CARGO_PKG_VERSION"));
    match sc.task()? {
        Task::Ser(s) => run_ser(s, &mut art)?,
        Task::Psd(p) => run_psd(p, &mut art)?,
        Task::Mask(m) => run_mask(m, &mut art)?,
        Task::CrossCorr(c) => run_cross_corr(c, &mut art)?,
        Task::Kappa(k) => run_kappa(k, &mut art)?,
    }
    let elapsed_s = started.elapsed().as_secs_f64();
    art.record("elapsed_s", elapsed_s);
    art.record(
        "finished_unix",
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    );
    let sidecar = dir.join(format!("{}.json", sc.name));
    std::fs::write(&sidecar, serde_json::to_string_pretty(&art.meta).map_err(|e| Error::Parse(e.to_string()))?)?;
    Ok(RunReport { name: sc.name.clone(), files: art.files, sidecar, elapsed_s })
}

fn run_ser(s: &SerScenario, art: &mut Artifacts) -> Result<()> {
    let grid = s.snr_db.values()?;
    check_grid(&grid)?;
    let family: WaveformKind = s.waveform.into();
    let fam = if family == WaveformKind::Lora { "_lora" } else { "" };
    let mut timings = BTreeMap::new();
    let mut mc_meta = BTreeMap::new();
    for &sf in &s.sf {
        if s.lora_reference {
            let t = Instant::now();
            let pts: Vec<Vec<f64>> = grid
                .iter()
                .map(|&db| lora_ser_reference(10f64.powf(db / 10.0), sf).map(|p| vec![db, p.ser]))
                .collect::<Result<_>>()?;
            art.write_dat(&format!("ser_sf{sf}_lora_ref.dat"), pts)?;
            timings.insert(format!("sf{sf}_lora_ref"), t.elapsed().as_secs_f64());
        }
        for &n in &s.n {
            let cfg = config(sf, n, s.bandwidth_hz)?;
            for ch in &s.channels {
                let tag = format!("sf{sf}_n{n}{fam}_{}", ch.label());
                if s.analytic {
                    for &d in &s.decoders {
                        let t = Instant::now();
                        let curve = analytic_curve(&cfg, d, ch, &grid, &s.analytic_options)?;
                        art.write_dat(&format!("ser_{tag}_{d}.dat"), curve.iter().map(|p| vec![p.snr_db(), p.ser]))?;
                        timings.insert(format!("{tag}_{d}_analytic"), t.elapsed().as_secs_f64());
                    }
                }
                if s.monte_carlo {
                    let t = Instant::now();
                    let job = SerJob {
                        cfg,
                        family,
                        channel: *ch,
                        decoders: s.decoders.clone(),
                        snr_db: grid.clone(),
                        budget: s.budget,
                        seed: s.seed,
                    };
                    let pts = mc_ser(&job)?;
                    for (di, d) in s.decoders.iter().enumerate() {
                        art.write_dat(
                            &format!("ser_{tag}_{d}_mc.dat"),
                            pts.iter().map(|p| vec![p.snr_db, p.estimates[di].ser_hat]),
                        )?;
                    }
                    mc_meta.insert(tag.clone(), serde_json::to_value(&pts).unwrap_or_default());
                    timings.insert(format!("{tag}_mc"), t.elapsed().as_secs_f64());
                }
            }
        }
    }
    art.record("monte_carlo", mc_meta);
    art.record("timings_s", timings);
    Ok(())
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn run_psd(p: &PsdScenario, art: &mut Artifacts) -> Result<()> {
    let mut timings = BTreeMap::new();
    let mut welch_meta = BTreeMap::new();
    for &sf in &p.sf {
        for &n in &p.n {
            let cfg = config(sf, n, p.bandwidth_hz)?;
            let b = cfg.bandwidth_hz;
            let t = Instant::now();
            let spec = psd_analytic(&cfg, p.fmax * b, p.points)?;
            art.write_dat(
                &format!("psd_sf{sf}_n{n}.dat"),
                spec.freqs.iter().zip(&spec.continuous_psd).map(|(f, g)| vec![f / b, db(g * b)]),
            )?;
            art.write_dat(
                &format!("lines_sf{sf}_n{n}.dat"),
                spec.discrete_lines.iter().map(|(f, pw)| vec![f / b, db(*pw)]),
            )?;
            if p.bin > 0.0 {
                let binned = psd_binned(&cfg, p.bin * b, p.fmax * b, 2)?;
                art.write_dat(
                    &format!("psd_binned_sf{sf}_n{n}.dat"),
                    binned.freqs.iter().zip(&binned.continuous_psd).map(|(f, g)| vec![f / b, db(g * b)]),
                )?;
            }
            timings.insert(format!("sf{sf}_n{n}_analytic"), t.elapsed().as_secs_f64());
            if p.welch_symbols > 0 {
                let t = Instant::now();
                let w = mc_psd(&cfg, p.welch_symbols, p.seed)?;
                let bin = if p.bin > 0.0 { p.bin * b } else { b / 1024.0 };
                let binned = crate::spectral::bin_spectrum(&w.freqs, &w.continuous_psd, bin, p.fmax * b);
                art.write_dat(
                    &format!("psd_welch_sf{sf}_n{n}.dat"),
                    binned.iter().map(|(f, g)| vec![f / b, db(g * b)]),
                )?;
                welch_meta.insert(format!("sf{sf}_n{n}"), serde_json::to_value(&w.meta).unwrap_or_default());
                timings.insert(format!("sf{sf}_n{n}_welch"), t.elapsed().as_secs_f64());
            }
        }
        if p.lora_points > 0 {
            let cfg = config(sf, 1, p.bandwidth_hz)?;
            let b = cfg.bandwidth_hz;
            let t = Instant::now();
            let k = p.lora_points;
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|i| {
                    let f = -p.fmax * b + 2.0 * p.fmax * b * i as f64 / (k.max(2) - 1) as f64;
                    lora_psd_point(&cfg, f).map(|(g, _)| vec![f / b, db(g * b)])
                })
                .collect::<Result<_>>()?;
            art.write_dat(&format!("psd_sf{sf}_lora.dat"), rows)?;
            timings.insert(format!("sf{sf}_lora"), t.elapsed().as_secs_f64());
        }
    }
    art.record("welch", welch_meta);
    art.record("timings_s", timings);
    Ok(())
}

/// Loads a mask by file path or the name `etsi_g1`.
pub fn load_mask(name: &str) -> Result<MaskSpec> {
    if name == "etsi_g1" || name == "etsi_g1.toml" && !Path::new(name).exists() {
        MaskSpec::parse(ETSI_G1_MASK)
    } else {
        MaskSpec::from_file(Path::new(name))
    }
}

fn run_mask(m: &MaskScenario, art: &mut Artifacts) -> Result<()> {
    let mask = load_mask(&m.mask)?;
    let mut results = BTreeMap::new();
    for &sf in &m.sf {
        for &n in &m.n {
            let cfg = config(sf, n, m.bandwidth_hz)?;
            let r = mask_check(&cfg, m.power_dbm, m.rbw_hz, &mask)?;
            art.write_dat(
                &format!("mask_sf{sf}_n{n}.dat"),
                r.bins.iter().filter(|(f, _)| *f >= 0.0).map(|(f, l)| vec![*f, *l]),
            )?;
            results.insert(
                format!("sf{sf}_n{n}"),
                serde_json::json!({
                    "pass": r.pass,
                    "worst_margin_db": r.worst_margin_db,
                    "worst_offset_hz": r.worst_offset_hz,
                    "violations": r.violations.len(),
                }),
            );
        }
    }
    let extent = mask.extent_hz();
    let steps = 1000;
    art.write_dat(
        "mask_limit.dat",
        (0..=steps).map(|i| {
            let f = extent * i as f64 / steps as f64;
            vec![f, mask.limit_dbm(f)]
        }),
    )?;
    art.record("mask", &mask);
    art.record("results", results);
    Ok(())
}

fn run_cross_corr(c: &CrossCorrScenario, art: &mut Artifacts) -> Result<()> {
    let mut rows = Vec::new();
    let mut timings = BTreeMap::new();
    for &sf in &c.sf {
        for &n in &c.n {
            let t = Instant::now();
            let cfg = config(sf, n, default_bandwidth())?;
            rows.push(vec![sf as f64, n as f64, max_cross_corr(&cfg)]);
            timings.insert(format!("sf{sf}_n{n}"), t.elapsed().as_secs_f64());
        }
    }
    art.write_dat("max_cross_corr.dat", rows)?;
    art.record("timings_s", timings);
    Ok(())
}

/// Correct-bin statistics of symbol `a` for both decoders.
pub fn kappa_row(cfg: &ModulationConfig, a: usize, gamma: f64, sigma2: f64) -> Result<[BinStatistics; 2]> {
    let mut out = [BinStatistics::from_kappa(0.0, 1.0); 2];
    for (i, kind) in [DecoderKind::Ml, DecoderKind::Fft].into_iter().enumerate() {
        let xi = cross_corr(cfg, kind)?;
        out[i] = BinStatistics::at_snr(xi.get(a, a).norm(), cfg.m(), gamma, sigma2.sqrt());
    }
    Ok(out)
}

fn run_kappa(k: &KappaScenario, art: &mut Artifacts) -> Result<()> {
    let gamma = 10f64.powf(k.snr_db / 10.0);
    let mut rows = Vec::new();
    for &n in &k.n {
        let cfg = config(k.sf, n, default_bandwidth())?;
        let [ml, fft] = kappa_row(&cfg, k.symbol, gamma, k.sigma2)?;
        rows.push(vec![n as f64, ml.kappa, fft.kappa, ml.mu_a, ml.sigma_a2, fft.mu_a, fft.sigma_a2]);
    }
    art.write_dat("kappa.dat", rows)?;
    art.record("columns", ["n", "kappa_ml", "kappa_fft", "mu_ml", "sigma2_ml", "mu_fft", "sigma2_fft"]);
    Ok(())
}

/// Shipped reproduction presets as `(id, scenario text)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5", include_str!("../presets/fig5.toml")),
    ("fig6", include_str!("../presets/fig6.toml")),
    ("fig7", include_str!("../presets/fig7.toml")),
    ("fig8a", include_str!("../presets/fig8a.toml")),
    ("fig8b", include_str!("../presets/fig8b.toml")),
    ("fig9", include_str!("../presets/fig9.toml")),
    ("fig10", include_str!("../presets/fig10.toml")),
    ("table2", include_str!("../presets/table2.toml")),
    ("table3", include_str!("../presets/table3.toml")),
];

/// Parsed preset by id.
pub fn preset(id: &str) -> Result<Scenario> {
    PRESETS.iter().find(|(k, _)| *k == id).map(|(_, text)| parse_scenario(text)).unwrap_or_else(|| {
        let ids: Vec<&str> = PRESETS.iter().map(|(k, _)| *k).collect();
        Err(Error::Config { key: "preset".into(), msg: format!("unknown id {id:?}; known: {}", ids.join(", ")) })
    })
}

/// Caps the global thread pool at `LBPHY_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("LBPHY_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Config {
            key: "LBPHY_THREADS".into(),
            msg: format!("expected a positive integer, got {v:?}"),
        })?;
        if n == 0 {
            return Err(Error::Config { key: "LBPHY_THREADS".into(), msg: "must be positive".into() });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config { key: "LBPHY_THREADS".into(), msg: e.to_string() })?;
    }
    Ok(())
}
