//! Quantized-phase chirp (LB) and conventional LoRa baseband waveforms and
//! their cross-correlation matrices.
//!
//! Discrete sample phases are computed in integer arithmetic: the chirp
//! argument `kπ(2a−M+k)/M` equals `πp/M` with `p = k(2a−M+k) mod 2M`, so the
//! mid-rise cell index is an exact floor division and every sample lands
//! bit-exactly on the quantizer grid.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderKind;
use crate::error::{domain, Error, Result};

/// Largest `M` for which a full cross-correlation matrix is materialized.
pub const MAX_MATRIX_M: usize = 4096;

/// Spreading factor, phase resolution and bandwidth of a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationConfig {
    /// Spreading factor; `M = 2^sf`.
    pub sf: u32,
    /// Exponent `N` of the number of tag phase levels `2^N`.
    pub n_levels_exp: u32,
    /// Bandwidth `B` in Hz.
    pub bandwidth_hz: f64,
}

impl ModulationConfig {
    /// Validates and builds a configuration. Spreading factors outside 7..=12
    /// are accepted (1..=16) and flagged by [`Self::is_nonstandard`].
    pub fn new(sf: u32, n_levels_exp: u32, bandwidth_hz: f64) -> Result<Self> {
        if !(1..=16).contains(&sf) {
            return Err(Error::Config { key: "sf".into(), msg: format!("must be in 1..=16, got {sf}") });
        }
        if !(1..=40).contains(&n_levels_exp) {
            return Err(Error::Config { key: "n".into(), msg: format!("must be in 1..=40, got {n_levels_exp}") });
        }
        if !(bandwidth_hz > 0.0) || !bandwidth_hz.is_finite() {
            return Err(Error::Config {
                key: "bandwidth_hz".into(),
                msg: format!("must be positive, got {bandwidth_hz}"),
            });
        }
        let cfg = Self { sf, n_levels_exp, bandwidth_hz };
        if cfg.is_nonstandard() {
            log::warn!("spreading factor {sf} is outside the usual range 7..=12");
        }
        Ok(cfg)
    }

    /// True for spreading factors outside 7..=12.
    pub fn is_nonstandard(&self) -> bool {
        !(7..=12).contains(&self.sf)
    }

    /// Number of chips and symbols, `M = 2^SF`.
    pub fn m(&self) -> usize {
        1usize << self.sf
    }

    /// Number of phase levels `2^N`.
    pub fn levels(&self) -> u64 {
        1u64 << self.n_levels_exp
    }

    /// Symbol duration `T_s = M/B` in seconds.
    pub fn symbol_duration(&self) -> f64 {
        self.m() as f64 / self.bandwidth_hz
    }

    /// Chip duration `T_c = 1/B` in seconds.
    pub fn chip_duration(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    pub fn check_symbol(&self, a: usize) -> Result<()> {
        if a >= self.m() {
            return domain(format!("symbol {a} out of range for M = {}", self.m()));
        }
        Ok(())
    }
}

/// Which waveform family a sample vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WaveformKind {
    /// Tag waveform with `2^N` quantized phases.
    Lb,
    /// Unquantized LoRa chirp.
    Lora,
}

/// One symbol's `M` baseband samples with unit total energy.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub symbol: usize,
    pub config: ModulationConfig,
    pub kind: WaveformKind,
}

impl Waveform {
    /// `Σ |x[k]|²`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }
}

/// Mid-rise quantizer with `2^N` levels at odd multiples of `π/2^N`,
/// extended 2π-periodically from `(−π, π]`.
pub fn midrise_quantize(x: f64, n_levels_exp: u32) -> f64 {
    let mut r = x.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    let step = PI / (1u64 << (n_levels_exp - 1)) as f64;
    ((r / step).floor() + 0.5) * step
}

/// Chirp argument numerator `p` with `kπ(2a−M+k)/M ≡ πp/M`, reduced to
/// `(−M, M]`.
fn chirp_numerator(a: usize, k: usize, m: usize) -> i64 {
    let m = m as i64;
    let k = k as i64;
    let mut p = (k * (2 * a as i64 - m + k)).rem_euclid(2 * m);
    if p > m {
        p -= 2 * m;
    }
    p
}

/// Mid-rise cell of `πp/M`: the quantized phase is `(cell + 1/2)·π/2^{N−1}`.
fn quantizer_cell(p: i64, m: usize, n_levels_exp: u32) -> i64 {
    let scaled = (p as i128) << (n_levels_exp - 1);
    scaled.div_euclid(m as i128) as i64
}

fn cell_phase(cell: i64, n_levels_exp: u32) -> f64 {
    (cell as f64 + 0.5) * PI / (1u64 << (n_levels_exp - 1)) as f64
}

/// Quantized phase of sample `k` of LB symbol `a`.
pub fn lb_sample_phase(a: usize, k: usize, cfg: &ModulationConfig) -> f64 {
    let m = cfg.m();
    cell_phase(quantizer_cell(chirp_numerator(a, k, m), m, cfg.n_levels_exp), cfg.n_levels_exp)
}

/// Index `n` of the level `(2n−1)π/2^N` taken by sample `k` of symbol `a`,
/// reduced to `0..2^N`.
pub fn lb_level_index(a: usize, k: usize, cfg: &ModulationConfig) -> u64 {
    let m = cfg.m();
    let cell = quantizer_cell(chirp_numerator(a, k, m), m, cfg.n_levels_exp);
    (cell + 1).rem_euclid(cfg.levels() as i64) as u64
}

/// Continuous-time quantized phase `Q̃_N[2πBt(a/M − 1/2 + Bt/(2M) − u(t−τ_a))]`
/// with `τ_a = (M−a)/B` and `u(0) = 1`.
pub fn lb_phase(t: f64, a: usize, cfg: &ModulationConfig) -> Result<f64> {
    cfg.check_symbol(a)?;
    let ts = cfg.symbol_duration();
    if !(0.0..=ts).contains(&t) {
        return domain(format!("t = {t} outside [0, {ts}]"));
    }
    let s = cfg.bandwidth_hz * t;
    let k = s.round();
    if (s - k).abs() < 1e-9 && (k as usize) < cfg.m() {
        return Ok(lb_sample_phase(a, k as usize, cfg));
    }
    Ok(midrise_quantize(chirp_argument(s, a, cfg.m()), cfg.n_levels_exp))
}

/// Unquantized chirp phase at chip time `s = Bt`, including the wrap term.
pub fn chirp_argument(s: f64, a: usize, m: usize) -> f64 {
    let mf = m as f64;
    let wrap = if s >= (m - a) as f64 { 1.0 } else { 0.0 };
    TAU * s * (a as f64 / mf - 0.5 + s / (2.0 * mf) - wrap)
}

/// LB symbol `a`: `x_a[k] = M^{-1/2} exp(j Q̃_N[kπ(2a−M+k)/M])`.
pub fn lb_waveform(a: usize, cfg: &ModulationConfig) -> Result<Waveform> {
    cfg.check_symbol(a)?;
    let m = cfg.m();
    let amp = 1.0 / (m as f64).sqrt();
    let samples = (0..m).map(|k| Complex64::from_polar(amp, lb_sample_phase(a, k, cfg))).collect();
    Ok(Waveform { samples, symbol: a, config: *cfg, kind: WaveformKind::Lb })
}

/// Conventional LoRa symbol `a`: the same chirp without quantization.
pub fn lora_waveform(a: usize, cfg: &ModulationConfig) -> Result<Waveform> {
    cfg.check_symbol(a)?;
    let m = cfg.m();
    let amp = 1.0 / (m as f64).sqrt();
    let samples = (0..m).map(|k| Complex64::from_polar(amp, PI * chirp_numerator(a, k, m) as f64 / m as f64)).collect();
    Ok(Waveform { samples, symbol: a, config: *cfg, kind: WaveformKind::Lora })
}

/// Waveform of the requested family.
pub fn waveform(kind: WaveformKind, a: usize, cfg: &ModulationConfig) -> Result<Waveform> {
    match kind {
        WaveformKind::Lb => lb_waveform(a, cfg),
        WaveformKind::Lora => lora_waveform(a, cfg),
    }
}

/// All `M` waveforms of a family, row-major `M × M`.
pub fn waveform_table(kind: WaveformKind, cfg: &ModulationConfig) -> Vec<Complex64> {
    let m = cfg.m();
    let mut out = Vec::with_capacity(m * m);
    for a in 0..m {
        out.extend(waveform(kind, a, cfg).expect("symbol in range").samples);
    }
    out
}

/// Down-chirp `x_d[k] = M^{-1/2} exp(−j2πk²/(2M) + jπk)`.
pub fn downchirp(m: usize) -> Vec<Complex64> {
    let amp = 1.0 / (m as f64).sqrt();
    (0..m)
        .map(|k| {
            // k² − Mk mod 2M keeps the argument small.
            let k = k as i64;
            let mm = m as i64;
            let p = (k * k - mm * k).rem_euclid(2 * mm);
            Complex64::from_polar(amp, -PI * p as f64 / m as f64)
        })
        .collect()
}

/// Row-major complex products `X · Yᴴ` for `X` (`r × len`) and `Y`
/// (`c × len`), evaluated as one real matrix product.
pub fn correlate_batch(x: &[Complex64], y: &[Complex64], len: usize) -> Vec<Complex64> {
    let r = x.len() / len;
    let c = y.len() / len;
    let lhs = DMatrix::<f64>::from_fn(2 * r, 2 * len, |i, j| {
        let (row, neg) = if i < r { (i, false) } else { (i - r, true) };
        let v = x[row * len + (j % len)];
        match (neg, j < len) {
            (false, true) => v.re,
            (false, false) => v.im,
            (true, true) => v.im,
            (true, false) => -v.re,
        }
    });
    let rhs = DMatrix::<f64>::from_fn(2 * len, c, |j, col| {
        let v = y[col * len + (j % len)];
        if j < len {
            v.re
        } else {
            v.im
        }
    });
    let prod = lhs * rhs;
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(Complex64::new(prod[(i, j)], prod[(i + r, j)]));
        }
    }
    out
}

/// Correlation of every symbol against every candidate bin.
#[derive(Debug, Clone)]
pub struct CrossCorrMatrix {
    pub config: ModulationConfig,
    pub decoder_kind: DecoderKind,
    pub waveform_kind: WaveformKind,
    m: usize,
    xi: Vec<Complex64>,
}

impl CrossCorrMatrix {
    /// `ξ_{(a,i)}`.
    pub fn get(&self, a: usize, i: usize) -> Complex64 {
        self.xi[a * self.m + i]
    }

    /// Row `a`: the noiseless decoder bins for transmitted symbol `a`.
    pub fn row(&self, a: usize) -> &[Complex64] {
        &self.xi[a * self.m..(a + 1) * self.m]
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Largest `|ξ_{(a,i)}|` over `a ≠ i`.
    pub fn max_offdiag_abs(&self) -> f64 {
        let mut best: f64 = 0.0;
        for a in 0..self.m {
            for (i, v) in self.row(a).iter().enumerate() {
                if i != a {
                    best = best.max(v.norm());
                }
            }
        }
        best
    }
}

type CacheKey = (u32, u32, u64, DecoderKind, WaveformKind);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<CrossCorrMatrix>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<CrossCorrMatrix>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cross-correlation matrix of the LB waveforms for the given decoder,
/// cached per configuration.
///
/// ML: `ξ_{(a,i)} = Σ_k x_a[k] x_i*[k]`. FFT: `ξ_{(a,i)}` is DFT bin `i` of
/// the dechirped `x_a`.
pub fn cross_corr(cfg: &ModulationConfig, kind: DecoderKind) -> Result<Arc<CrossCorrMatrix>> {
    cross_corr_of(cfg, kind, WaveformKind::Lb)
}

/// [`cross_corr`] for either waveform family.
pub fn cross_corr_of(cfg: &ModulationConfig, kind: DecoderKind, family: WaveformKind) -> Result<Arc<CrossCorrMatrix>> {
    let m = cfg.m();
    if m > MAX_MATRIX_M {
        return Err(Error::TooLarge(format!(
            "cross-correlation matrix for M = {m} exceeds the {MAX_MATRIX_M} guard; \
             use max_cross_corr for a streaming maximum"
        )));
    }
    let key = (cfg.sf, cfg.n_levels_exp, cfg.bandwidth_hz.to_bits(), kind, family);
    if let Some(hit) = cache().lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let table = waveform_table(family, cfg);
    let xi = match kind {
        DecoderKind::Ml => correlate_batch(&table, &table, m),
        DecoderKind::Fft => fft_bins_batch(&table, m),
    };
    let mat = Arc::new(CrossCorrMatrix { config: *cfg, decoder_kind: kind, waveform_kind: family, m, xi });
    cache().lock().unwrap().insert(key, mat.clone());
    Ok(mat)
}

/// Dechirp-and-DFT of every length-`m` row of `rows`.
pub fn fft_bins_batch(rows: &[Complex64], m: usize) -> Vec<Complex64> {
    let down = downchirp(m);
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut out: Vec<Complex64> = rows.iter().zip(down.iter().cycle()).map(|(r, d)| r * d).collect();
    fft.process(&mut out);
    out
}

/// Largest off-diagonal `|ξ^ML|` without materializing the matrix.
///
/// `|ξ|` is invariant under `(a, i) → (−a, −i)` and `(a, i) → (a+M/2, i+M/2)`
/// (mod `M`): negation reverses the sample order and the half shift
/// multiplies sample `k` by `(−1)^k`. Rows `0..=M/4` therefore cover every
/// orbit; they are processed in blocks against all columns.
pub fn max_cross_corr(cfg: &ModulationConfig) -> f64 {
    let m = cfg.m();
    let table = waveform_table(WaveformKind::Lb, cfg);
    let reps = if m >= 4 { m / 4 + 1 } else { m };
    let block = 256.min(reps).max(1);
    let mut best: f64 = 0.0;
    let mut start = 0;
    while start < reps {
        let end = (start + block).min(reps);
        let prod = correlate_batch(&table[start * m..end * m], &table, m);
        for (r, row) in prod.chunks(m).enumerate() {
            let a = start + r;
            for (i, v) in row.iter().enumerate() {
                if i != a {
                    best = best.max(v.norm());
                }
            }
        }
        start = end;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantizer_examples() {
        assert_eq!(midrise_quantize(0.0, 2), PI / 4.0);
        assert_eq!(midrise_quantize(-0.3, 2), -PI / 4.0);
        assert_eq!(midrise_quantize(0.3 + TAU, 3), midrise_quantize(0.3, 3));
    }

    #[test]
    fn integer_and_float_phases_agree_off_boundaries() {
        let cfg = ModulationConfig::new(7, 3, 125e3).unwrap();
        let m = cfg.m();
        for a in [0, 5, 64, 127] {
            for k in 0..m {
                let p = chirp_numerator(a, k, m);
                if (p << 2) % m as i64 == 0 {
                    continue;
                }
                let arg = PI * k as f64 * (2.0 * a as f64 - m as f64 + k as f64) / m as f64;
                let q = midrise_quantize(arg, 3);
                let d = (q - lb_sample_phase(a, k, &cfg)).rem_euclid(TAU);
                assert!(!(1e-9..=TAU - 1e-9).contains(&d));
            }
        }
    }
}
