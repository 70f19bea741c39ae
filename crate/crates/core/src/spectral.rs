//! Power spectrum of the LB symbol process: phase breakpoints, symbol
//! Fourier transforms, the continuous and discrete PSD parts, a Welch
//! Monte Carlo estimator and spectral-mask checks.
//!
//! Internally time is measured in chips (`s = Bt`) and frequency in units
//! of `B` (`ν = f/B`). In those units `S_a(f) = Ŝ_a(ν)/B` and the
//! normalized continuous density is `G_c·B = (1/M)[⟨|Ŝ|²⟩ − |⟨Ŝ⟩|²]`.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::integrate;
use crate::waveform::{chirp_argument, midrise_quantize, ModulationConfig};

/// Relative frequency below which `S_a` is evaluated by its `f → 0` limit.
pub const F_EPS_REL: f64 = 1e-9;

/// Relative tolerance for merging coincident roots, in units of `T_s`.
pub const DEDUP_REL: f64 = 1e-15;

const MAX_BREAKPOINT_ROOTS: i128 = 50_000_000;
const REANCHOR: usize = 256;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - (PI * x).powi(2) / 6.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn floor_div(a: i128, b: i128) -> i128 {
    a.div_euclid(b)
}

fn ceil_div(a: i128, b: i128) -> i128 {
    -(-a).div_euclid(b)
}

/// Times at which the quantized phase of one symbol changes level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakpointSet {
    pub symbol: usize,
    pub config: ModulationConfig,
    /// Sorted breakpoints in seconds, from 0 to `T_s`.
    pub times: Vec<f64>,
    /// Quantized phase on each interval `(t_m, t_{m+1})`.
    pub levels: Vec<f64>,
}

impl BreakpointSet {
    /// Number of intervals `ψ`.
    pub fn intervals(&self) -> usize {
        self.levels.len()
    }

    /// Breakpoints in chips.
    pub fn chips(&self) -> Vec<f64> {
        self.times.iter().map(|t| t * self.config.bandwidth_hz).collect()
    }

    /// Symbol Fourier transform `S_a(f)` in seconds.
    pub fn fourier(&self, f: f64) -> Complex64 {
        let b = self.config.bandwidth_hz;
        let nu = f / b;
        let s = self.chips();
        let mut acc = Complex64::new(0.0, 0.0);
        if nu.abs() < F_EPS_REL {
            for (m, &phi) in self.levels.iter().enumerate() {
                acc += Complex64::from_polar(s[m + 1] - s[m], phi);
            }
        } else {
            // Each term equals e^{jφ}(e^{−j2πf t_{m+1}} − e^{−j2πf t_m})·j/(2πf).
            for (m, &phi) in self.levels.iter().enumerate() {
                let ds = s[m + 1] - s[m];
                let mid = s[m + 1] + s[m];
                acc += Complex64::from_polar(ds * sinc(nu * ds), phi - PI * nu * mid);
            }
        }
        acc / b
    }

    /// Jumps `c_m` of the piecewise-constant envelope at each breakpoint,
    /// so that `Ŝ(ν) = (j/(2πν)) Σ_m c_m e^{−j2πν s_m}`. Zero jumps are dropped.
    fn jumps(&self) -> (Vec<f64>, Vec<Complex64>) {
        let s = self.chips();
        let phasor: Vec<Complex64> = self.levels.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
        let psi = phasor.len();
        let mut pos = Vec::with_capacity(psi + 1);
        let mut c = Vec::with_capacity(psi + 1);
        pos.push(s[0]);
        c.push(-phasor[0]);
        for m in 1..psi {
            let d = phasor[m - 1] - phasor[m];
            if d.norm_sqr() > 1e-30 {
                pos.push(s[m]);
                c.push(d);
            }
        }
        pos.push(s[psi]);
        c.push(phasor[psi - 1]);
        (pos, c)
    }

    /// `Ŝ(ν_k)` for `ν_k = ν_0 + k·Δν`, `k < n` (chip-normalized, `Ŝ = B·S`).
    pub fn fourier_grid_normalized(&self, nu0: f64, dnu: f64, n: usize) -> Vec<Complex64> {
        let (pos, c) = self.jumps();
        let np = pos.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let step: Vec<Complex64> = pos.iter().map(|&s| Complex64::from_polar(1.0, -TAU * dnu * s)).collect();
        let (mut wr, mut wi) = (vec![0.0; np], vec![0.0; np]);
        let (zr, zi): (Vec<f64>, Vec<f64>) = step.iter().map(|z| (z.re, z.im)).unzip();
        let small = 1e-3;
        for (k, slot) in out.iter_mut().enumerate() {
            let nu = nu0 + k as f64 * dnu;
            if k % REANCHOR == 0 {
                for p in 0..np {
                    let w = c[p] * Complex64::from_polar(1.0, -TAU * nu * pos[p]);
                    wr[p] = w.re;
                    wi[p] = w.im;
                }
            }
            if nu.abs() < small {
                *slot = self.fourier(nu * self.config.bandwidth_hz) * self.config.bandwidth_hz;
            } else {
                let (sr, si) = (wr.iter().sum::<f64>(), wi.iter().sum::<f64>());
                *slot = Complex64::new(0.0, 1.0 / (TAU * nu)) * Complex64::new(sr, si);
            }
            for p in 0..np {
                let (a, b) = (wr[p], wi[p]);
                wr[p] = a * zr[p] - b * zi[p];
                wi[p] = a * zi[p] + b * zr[p];
            }
        }
        out
    }
}

/// Breakpoints of LB symbol `a` from the roots of `f₁(t) = iπ/2^{N−1}`.
pub fn breakpoints(a: usize, cfg: &ModulationConfig) -> Result<BreakpointSet> {
    cfg.check_symbol(a)?;
    let m = cfg.m() as i128;
    let ai = a as i128;
    let d = m - 2 * ai;
    let scale = 1i128 << cfg.n_levels_exp;
    let i_lo = ceil_div(-d * d * scale, 8 * m);
    let i_hi = floor_div(ai * (m - ai) * scale, 2 * m);
    if i_hi - i_lo > MAX_BREAKPOINT_ROOTS {
        return Err(Error::TooLarge(format!("{} phase boundaries per symbol", i_hi - i_lo)));
    }
    let mf = m as f64;
    let df = d as f64;
    let c = mf * 8.0 / scale as f64;
    let (lo, hi) = (-(a as f64), mf - a as f64);
    let tol = 1e-12 * mf;
    let mut s: Vec<f64> = Vec::with_capacity(2 * (i_hi - i_lo + 1) as usize + 2);
    for i in i_lo..=i_hi {
        let disc = df * df + i as f64 * c;
        if disc < 0.0 {
            continue;
        }
        let r = disc.sqrt();
        for z in [(df - r) / 2.0, (df + r) / 2.0] {
            if z >= lo - tol && z <= hi + tol {
                let z = if z < 0.0 { z + mf } else { z };
                if z > 0.0 && z < mf {
                    s.push(z);
                }
            }
        }
    }
    s.push(0.0);
    s.push(mf);
    s.sort_by(|x, y| x.total_cmp(y));
    let dedup = DEDUP_REL * mf;
    let mut chips: Vec<f64> = Vec::with_capacity(s.len());
    for z in s {
        match chips.last() {
            Some(&last) if z - last <= dedup => {}
            _ => chips.push(z),
        }
    }
    *chips.last_mut().unwrap() = mf;
    let levels = chips
        .windows(2)
        .map(|w| midrise_quantize(chirp_argument(0.5 * (w[0] + w[1]), a, cfg.m()), cfg.n_levels_exp))
        .collect();
    let b = cfg.bandwidth_hz;
    Ok(BreakpointSet { symbol: a, config: *cfg, times: chips.iter().map(|z| z / b).collect(), levels })
}

/// `S_a(f)` of LB symbol `a`, in seconds.
pub fn sa_fourier(a: usize, cfg: &ModulationConfig, f: f64) -> Result<Complex64> {
    Ok(breakpoints(a, cfg)?.fourier(f))
}

fn all_breakpoints(cfg: &ModulationConfig) -> Result<Vec<BreakpointSet>> {
    (0..cfg.m()).into_par_iter().map(|a| breakpoints(a, cfg)).collect()
}

/// Symbol averages `⟨Ŝ(ν_k)⟩` and `⟨|Ŝ(ν_k)|²⟩` on a uniform normalized grid.
fn symbol_moments(sets: &[BreakpointSet], nu0: f64, dnu: f64, n: usize) -> (Vec<Complex64>, Vec<f64>) {
    let zero = || (vec![Complex64::new(0.0, 0.0); n], vec![0.0; n]);
    let (sum, sq) = sets
        .par_iter()
        .fold(zero, |(mut sum, mut sq), bp| {
            for (k, v) in bp.fourier_grid_normalized(nu0, dnu, n).into_iter().enumerate() {
                sum[k] += v;
                sq[k] += v.norm_sqr();
            }
            (sum, sq)
        })
        .reduce(zero, |(mut s1, mut q1), (s2, q2)| {
            for k in 0..n {
                s1[k] += s2[k];
                q1[k] += q2[k];
            }
            (s1, q1)
        });
    let mf = sets.len() as f64;
    (sum.into_iter().map(|v| v / mf).collect(), sq.into_iter().map(|v| v / mf).collect())
}

fn continuous_from_moments(mean: Complex64, sq: f64, m: usize) -> f64 {
    let g = (sq - mean.norm_sqr()) / m as f64;
    if g < 0.0 {
        0.0
    } else {
        g
    }
}

/// Continuous PSD part `G_c(f)` in 1/Hz.
pub fn psd_continuous(cfg: &ModulationConfig, f: f64) -> Result<f64> {
    let sets = all_breakpoints(cfg)?;
    let b = cfg.bandwidth_hz;
    let (mean, sq) = symbol_moments(&sets, f / b, 0.0, 1);
    Ok(continuous_from_moments(mean[0], sq[0], cfg.m()) / b)
}

/// Continuous PSD part on the grid `f_k = f_0 + k·Δf`, in 1/Hz.
pub fn psd_continuous_grid(cfg: &ModulationConfig, f0: f64, df: f64, n: usize) -> Result<Vec<f64>> {
    let sets = all_breakpoints(cfg)?;
    let b = cfg.bandwidth_hz;
    let (mean, sq) = symbol_moments(&sets, f0 / b, df / b, n);
    Ok(mean.iter().zip(&sq).map(|(&mu, &q)| continuous_from_moments(mu, q, cfg.m()) / b).collect())
}

/// Spectral lines at `f = lB/M` for `l_min ≤ l ≤ l_max`, as `(Hz, power)`.
pub fn psd_discrete_lines(cfg: &ModulationConfig, l_min: i64, l_max: i64) -> Result<Vec<(f64, f64)>> {
    if l_max < l_min {
        return Ok(Vec::new());
    }
    let sets = all_breakpoints(cfg)?;
    lines_from_sets(&sets, cfg, l_min, l_max)
}

fn lines_from_sets(sets: &[BreakpointSet], cfg: &ModulationConfig, l_min: i64, l_max: i64) -> Result<Vec<(f64, f64)>> {
    let m = cfg.m() as f64;
    let n = (l_max - l_min + 1) as usize;
    let (mean, _) = symbol_moments(sets, l_min as f64 / m, 1.0 / m, n);
    Ok(mean
        .iter()
        .enumerate()
        .map(|(k, mu)| ((l_min + k as i64) as f64 * cfg.bandwidth_hz / m, mu.norm_sqr() / (m * m)))
        .collect())
}

/// How a spectrum was obtained.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumMeta {
    /// Closed form; `continuous_psd` is `G_c` at `freqs`.
    Analytic,
    /// Closed form averaged over bins of `bin_hz`; lines are folded into
    /// the bin densities.
    Binned { bin_hz: f64, subpoints: usize },
    /// Welch estimate of the total density at `freqs`.
    Welch {
        n_symbols: usize,
        seed: u64,
        oversampling: usize,
        segment_samples: usize,
        overlap: f64,
        window: String,
        segments: usize,
    },
}

/// A power spectrum with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub config: ModulationConfig,
    pub freqs: Vec<f64>,
    /// Densities in 1/Hz.
    pub continuous_psd: Vec<f64>,
    /// `(Hz, power)` pairs.
    pub discrete_lines: Vec<(f64, f64)>,
    pub meta: SpectrumMeta,
}

impl SpectrumResult {
    /// `10 log10(G·B)` for each frequency.
    pub fn normalized_db(&self) -> Vec<f64> {
        self.continuous_psd.iter().map(|g| 10.0 * (g * self.config.bandwidth_hz).log10()).collect()
    }
}

/// Closed-form spectrum on `n` uniformly spaced points over `[−f_max, f_max]`,
/// with lines for `|lB/M| ≤ f_max`.
pub fn psd_analytic(cfg: &ModulationConfig, f_max: f64, n: usize) -> Result<SpectrumResult> {
    let sets = all_breakpoints(cfg)?;
    let b = cfg.bandwidth_hz;
    let df = if n > 1 { 2.0 * f_max / (n - 1) as f64 } else { 0.0 };
    let (mean, sq) = symbol_moments(&sets, -f_max / b, df / b, n);
    let freqs = (0..n).map(|k| -f_max + k as f64 * df).collect();
    let continuous_psd = mean.iter().zip(&sq).map(|(&mu, &q)| continuous_from_moments(mu, q, cfg.m()) / b).collect();
    let l_max = (f_max / b * cfg.m() as f64).floor() as i64;
    let discrete_lines = lines_from_sets(&sets, cfg, -l_max, l_max)?;
    Ok(SpectrumResult { config: *cfg, freqs, continuous_psd, discrete_lines, meta: SpectrumMeta::Analytic })
}

/// Total closed-form spectrum averaged over bins `[kΔ − Δ/2, kΔ + Δ/2)` for
/// `|k| ≤ ⌊f_max/Δ⌋`. Each bin density is the continuous part averaged at
/// `subpoints` sub-bin centres plus the line power in the bin divided by `Δ`.
pub fn psd_binned(cfg: &ModulationConfig, bin_hz: f64, f_max: f64, subpoints: usize) -> Result<SpectrumResult> {
    if !(bin_hz > 0.0) || subpoints == 0 {
        return Err(Error::Domain("bin width and subpoints must be positive".into()));
    }
    let sets = all_breakpoints(cfg)?;
    let b = cfg.bandwidth_hz;
    let kmax = (f_max / bin_hz).floor() as i64;
    let nbins = (2 * kmax + 1) as usize;
    let sub = bin_hz / subpoints as f64;
    let f0 = -(kmax as f64) * bin_hz - 0.5 * bin_hz + 0.5 * sub;
    let (mean, sq) = symbol_moments(&sets, f0 / b, sub / b, nbins * subpoints);
    let mut density: Vec<f64> = (0..nbins)
        .map(|j| {
            (0..subpoints)
                .map(|q| {
                    let k = j * subpoints + q;
                    continuous_from_moments(mean[k], sq[k], cfg.m())
                })
                .sum::<f64>()
                / subpoints as f64
                / b
        })
        .collect();
    let edge = (kmax as f64 + 0.5) * bin_hz;
    let m = cfg.m() as f64;
    let l_max = (edge / b * m).ceil() as i64;
    let lines = lines_from_sets(&sets, cfg, -l_max, l_max)?;
    for &(f, p) in &lines {
        let j = ((f + edge) / bin_hz).floor();
        if j >= 0.0 && (j as usize) < nbins {
            density[j as usize] += p / bin_hz;
        }
    }
    let freqs = (0..nbins).map(|j| (j as i64 - kmax) as f64 * bin_hz).collect();
    Ok(SpectrumResult {
        config: *cfg,
        freqs,
        continuous_psd: density,
        discrete_lines: lines,
        meta: SpectrumMeta::Binned { bin_hz, subpoints },
    })
}

/// Averages a spectrum's densities into bins `[kΔ − Δ/2, kΔ + Δ/2)`,
/// `|k| ≤ ⌊f_max/Δ⌋`. Empty bins yield NaN.
pub fn bin_spectrum(freqs: &[f64], density: &[f64], bin_hz: f64, f_max: f64) -> Vec<(f64, f64)> {
    let kmax = (f_max / bin_hz).floor() as i64;
    let nbins = (2 * kmax + 1) as usize;
    let edge = (kmax as f64 + 0.5) * bin_hz;
    let mut acc = vec![(0.0, 0usize); nbins];
    for (&f, &g) in freqs.iter().zip(density) {
        let j = ((f + edge) / bin_hz).floor();
        if j >= 0.0 && (j as usize) < nbins {
            acc[j as usize].0 += g;
            acc[j as usize].1 += 1;
        }
    }
    acc.iter()
        .enumerate()
        .map(|(j, &(s, c))| ((j as i64 - kmax) as f64 * bin_hz, if c > 0 { s / c as f64 } else { f64::NAN }))
        .collect()
}

/// Welch estimator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchOptions {
    /// Samples per chip; each sample integrates the envelope over its period.
    pub oversampling: usize,
    /// Symbols per segment; `0` selects `max(4, 16384/M)`.
    pub segment_symbols: usize,
    pub overlap: f64,
}

impl Default for WelchOptions {
    fn default() -> Self {
        Self { oversampling: 16, segment_symbols: 0, overlap: 0.5 }
    }
}

/// Samples of one LB symbol integrated over `L` sub-chip periods:
/// `x[n] = L ∫_{n/L}^{(n+1)/L} e^{jφ(s)} ds`.
fn integrated_samples(bp: &BreakpointSet, l: usize, out: &mut [Complex64]) {
    let s = bp.chips();
    let lf = l as f64;
    for v in out.iter_mut() {
        *v = Complex64::new(0.0, 0.0);
    }
    for (m, &phi) in bp.levels.iter().enumerate() {
        let p = Complex64::from_polar(1.0, phi);
        let (mut a, b) = (s[m] * lf, s[m + 1] * lf);
        while a < b {
            let n = (a.floor() as usize).min(out.len() - 1);
            let end = b.min(n as f64 + 1.0);
            out[n] += p * (end - a);
            if end <= a {
                break;
            }
            a = end;
        }
    }
}

/// Welch estimate of the PSD of the i.i.d. LB symbol process over `n_symbols`
/// symbols. Symbols are drawn in blocks of half a segment, each block from
/// its own stream derived from `seed`. The boxcar response of the sampling
/// is divided out.
pub fn mc_psd(cfg: &ModulationConfig, n_symbols: usize, seed: u64) -> Result<SpectrumResult> {
    mc_psd_with(cfg, n_symbols, seed, &WelchOptions::default())
}

pub fn mc_psd_with(cfg: &ModulationConfig, n_symbols: usize, seed: u64, opts: &WelchOptions) -> Result<SpectrumResult> {
    if n_symbols < 256 {
        return Err(Error::Domain(format!("n_symbols = {n_symbols} < 256")));
    }
    if opts.oversampling == 0 || !(0.0..1.0).contains(&opts.overlap) {
        return Err(Error::Domain("invalid Welch options".into()));
    }
    let m = cfg.m();
    let l = opts.oversampling;
    let seg_sym = if opts.segment_symbols == 0 { (16384 / m).max(4) } else { opts.segment_symbols };
    let hop_sym = ((seg_sym as f64 * (1.0 - opts.overlap)).round() as usize).max(1);
    if seg_sym > n_symbols {
        return Err(Error::Domain(format!("segment of {seg_sym} symbols exceeds {n_symbols}")));
    }
    let sets = all_breakpoints(cfg)?;
    let per_sym = m * l;
    let nseg_samples = seg_sym * per_sym;
    let segments = (n_symbols - seg_sym) / hop_sym + 1;
    let symbols = symbol_stream(m, n_symbols, hop_sym, seed);
    let window: Vec<f64> =
        (0..nseg_samples).map(|n| 0.5 - 0.5 * (TAU * n as f64 / nseg_samples as f64).cos()).collect();
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(nseg_samples);
    let acc = (0..segments)
        .into_par_iter()
        .fold(
            || vec![0.0; nseg_samples],
            |mut acc, j| {
                let mut buf = vec![Complex64::new(0.0, 0.0); nseg_samples];
                for (q, chunk) in buf.chunks_mut(per_sym).enumerate() {
                    integrated_samples(&sets[symbols[j * hop_sym + q]], l, chunk);
                }
                for (v, w) in buf.iter_mut().zip(&window) {
                    *v *= *w;
                }
                fft.process(&mut buf);
                for (a, v) in acc.iter_mut().zip(&buf) {
                    *a += v.norm_sqr();
                }
                acc
            },
        )
        .reduce(
            || vec![0.0; nseg_samples],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );
    let fs = cfg.bandwidth_hz * l as f64;
    let norm = 1.0 / (fs * wpow * segments as f64);
    let half = nseg_samples / 2;
    let mut freqs = Vec::with_capacity(nseg_samples);
    let mut psd = Vec::with_capacity(nseg_samples);
    for k in 0..nseg_samples {
        let idx = (k + half) % nseg_samples;
        let f = (k as f64 - half as f64) * fs / nseg_samples as f64;
        let h = sinc(f / fs);
        freqs.push(f);
        psd.push(acc[idx] * norm / (h * h));
    }
    Ok(SpectrumResult {
        config: *cfg,
        freqs,
        continuous_psd: psd,
        discrete_lines: Vec::new(),
        meta: SpectrumMeta::Welch {
            n_symbols,
            seed,
            oversampling: l,
            segment_samples: nseg_samples,
            overlap: opts.overlap,
            window: "hann".into(),
            segments,
        },
    })
}

fn symbol_stream(m: usize, n: usize, block: usize, seed: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut j = 0u64;
    while out.len() < n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j);
        for _ in 0..block.min(n - out.len()) {
            out.push(rng.random_range(0..m));
        }
        j += 1;
    }
    out
}

/// Continuous and discrete parts of the conventional LoRa spectrum at `f`,
/// by numerical integration of each symbol transform. Returns
/// `(G_c in 1/Hz, ⟨Ŝ⟩)`; lines at `lB/M` carry `|⟨Ŝ⟩|²/M²`.
pub fn lora_psd_point(cfg: &ModulationConfig, f: f64) -> Result<(f64, Complex64)> {
    let m = cfg.m();
    let nu = f / cfg.bandwidth_hz;
    let (sum, sq) = (0..m)
        .into_par_iter()
        .map(|a| {
            let v = lora_symbol_transform(a, m, nu);
            (v, v.norm_sqr())
        })
        .reduce(|| (Complex64::new(0.0, 0.0), 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
    let mean = sum / m as f64;
    Ok((continuous_from_moments(mean, sq / m as f64, m) / cfg.bandwidth_hz, mean))
}

fn lora_symbol_transform(a: usize, m: usize, nu: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    let pieces = 4 * m;
    let h = m as f64 / pieces as f64;
    for p in 0..pieces {
        let (lo, hi) = (p as f64 * h, (p + 1) as f64 * h);
        let re = integrate(|s| (chirp_argument(s, a, m) - TAU * nu * s).cos(), lo, hi, 1e-13, 1e-12);
        let im = integrate(|s| (chirp_argument(s, a, m) - TAU * nu * s).sin(), lo, hi, 1e-13, 1e-12);
        acc += Complex64::new(re.value, im.value);
    }
    acc
}

/// Piecewise-linear emission mask in dBm versus offset from the carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    #[serde(default)]
    pub name: String,
    /// `[offset_hz, limit_dbm]` vertices sorted by offset; a repeated offset
    /// is a step and the stricter value applies exactly at it.
    pub vertices: Vec<[f64; 2]>,
}

impl MaskSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: MaskSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Mask with an infinite limit everywhere.
    pub fn unlimited() -> Self {
        Self { name: "unlimited".into(), vertices: vec![[0.0, f64::INFINITY]] }
    }

    fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(Error::Parse("mask has no vertices".into()));
        }
        for w in self.vertices.windows(2) {
            if !(w[1][0] >= w[0][0]) {
                return Err(Error::Parse("mask offsets must be nondecreasing".into()));
            }
        }
        if self.vertices.iter().any(|v| v[0].is_nan() || v[0] < 0.0 || v[1].is_nan()) {
            return Err(Error::Parse("mask offsets must be nonnegative numbers".into()));
        }
        Ok(())
    }

    /// Limit in dBm at an absolute offset.
    pub fn limit_dbm(&self, offset_hz: f64) -> f64 {
        let x = offset_hz.abs();
        let v = &self.vertices;
        let mut best = f64::INFINITY;
        let mut found = false;
        for w in v.windows(2) {
            let ([x0, y0], [x1, y1]) = (w[0], w[1]);
            if x >= x0 && x <= x1 {
                let y = if x1 == x0 {
                    y0.min(y1)
                } else if y0 == y1 {
                    y0
                } else {
                    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
                };
                best = best.min(y);
                found = true;
            }
        }
        if found {
            best
        } else if x < v[0][0] {
            v[0][1]
        } else {
            v[v.len() - 1][1]
        }
    }

    /// Largest offset listed.
    pub fn extent_hz(&self) -> f64 {
        self.vertices.last().map(|v| v[0]).unwrap_or(0.0)
    }
}

/// ETSI EN 300 220 G1 mask shipped with the crate.
pub const ETSI_G1_MASK: &str = include_str!("../presets/etsi_g1.toml");

/// One RBW bin above the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskViolation {
    pub offset_hz: f64,
    pub level_dbm: f64,
    pub limit_dbm: f64,
}

/// Outcome of a mask check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskReport {
    pub pass: bool,
    /// Smallest `limit − level` over all bins, in dB.
    pub worst_margin_db: f64,
    pub worst_offset_hz: f64,
    pub violations: Vec<MaskViolation>,
    /// `(offset, level dBm)` per RBW bin.
    pub bins: Vec<(f64, f64)>,
}

/// Compares RBW-integrated emission power with a mask, over offsets up to
/// `max(mask extent, 4B)`.
pub fn mask_check(cfg: &ModulationConfig, tx_power_dbm: f64, rbw_hz: f64, mask: &MaskSpec) -> Result<MaskReport> {
    let f_max = mask.extent_hz().max(4.0 * cfg.bandwidth_hz);
    let sub = ((rbw_hz * cfg.m() as f64 / cfg.bandwidth_hz * 8.0).ceil() as usize).clamp(2, 64);
    let spec = psd_binned(cfg, rbw_hz, f_max, sub)?;
    let p_mw = 10f64.powf(tx_power_dbm / 10.0);
    let mut report = MaskReport {
        pass: true,
        worst_margin_db: f64::INFINITY,
        worst_offset_hz: f64::NAN,
        violations: Vec::new(),
        bins: Vec::with_capacity(spec.freqs.len()),
    };
    for (&f, &g) in spec.freqs.iter().zip(&spec.continuous_psd) {
        let level = 10.0 * (p_mw * g * rbw_hz).log10();
        let limit = mask.limit_dbm(f);
        report.bins.push((f, level));
        let margin = if limit == f64::INFINITY || level == f64::NEG_INFINITY { f64::INFINITY } else { limit - level };
        if margin < report.worst_margin_db {
            report.worst_margin_db = margin;
            report.worst_offset_hz = f;
        }
        if margin < 0.0 {
            report.pass = false;
            report.violations.push(MaskViolation { offset_hz: f, level_dbm: level, limit_dbm: limit });
        }
    }
    Ok(report)
}
