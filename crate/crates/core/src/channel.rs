//! AWGN, double Nakagami-m fading and SNR bookkeeping.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::specfun::{
    bessel_ke_approx, bessel_ke_half_integer, bessel_ke_numeric, integrate, integrate_to_inf, is_half_integer,
};
use crate::waveform::Waveform;

/// Shape and spread parameters of the Tx-tag and tag-Rx Nakagami-m links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingParams {
    pub m1: f64,
    pub omega1: f64,
    pub m2: f64,
    pub omega2: f64,
}

impl FadingParams {
    pub fn new(m1: f64, omega1: f64, m2: f64, omega2: f64) -> Result<Self> {
        for (key, m) in [("m1", m1), ("m2", m2)] {
            if !(m >= 0.5) || !m.is_finite() {
                return Err(Error::Config { key: key.into(), msg: format!("shape must be >= 0.5, got {m}") });
            }
        }
        for (key, o) in [("omega1", omega1), ("omega2", omega2)] {
            if !(o > 0.0) || !o.is_finite() {
                return Err(Error::Config { key: key.into(), msg: format!("spread must be > 0, got {o}") });
            }
        }
        Ok(Self { m1, omega1, m2, omega2 })
    }

    /// Spreads from link distances with `Ω_i = (d/(2 d_i))²`, `d = d₁ + d₂`.
    ///
    /// The unit constant places the tag midway at `Ω₁ = Ω₂ = 1`, so the mean
    /// channel power gain `Ω₁Ω₂` measures the placement gain over the
    /// symmetric position.
    pub fn from_distances(m1: f64, m2: f64, d1: f64, d2: f64) -> Result<Self> {
        if !(d1 > 0.0 && d2 > 0.0) {
            return Err(Error::Config { key: "distance".into(), msg: format!("need d1, d2 > 0, got {d1}, {d2}") });
        }
        let d = d1 + d2;
        Self::new(m1, (d / (2.0 * d1)).powi(2), m2, (d / (2.0 * d2)).powi(2))
    }

    pub fn r1(&self) -> f64 {
        self.m1 / self.omega1
    }

    pub fn r2(&self) -> f64 {
        self.m2 / self.omega2
    }

    /// `v = m₁ + m₂`.
    pub fn v(&self) -> f64 {
        self.m1 + self.m2
    }

    /// Bessel order `n = |m₁ − m₂|`.
    pub fn n(&self) -> f64 {
        (self.m1 - self.m2).abs()
    }

    /// Mean power gain `E|h|² = Ω₁Ω₂`.
    pub fn mean_power(&self) -> f64 {
        self.omega1 * self.omega2
    }
}

/// Symbol energy, noise level and the SNR they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Symbol energy `E_s` (or the average `Ē_s` under power control).
    pub symbol_energy: f64,
    /// Noise variance per real dimension, `σ²`.
    pub noise_var_per_dim: f64,
    /// Samples per symbol, `M`.
    pub m: usize,
}

impl LinkBudget {
    /// Budget with `σ² = 1` and the energy that yields the given `γ̃`.
    pub fn from_snr(snr: f64, m: usize) -> Self {
        Self { symbol_energy: snr * 2.0 * m as f64, noise_var_per_dim: 1.0, m }
    }

    /// `γ̃ = E_s / (2σ²M)`.
    pub fn snr_scale(&self) -> f64 {
        self.symbol_energy / (2.0 * self.noise_var_per_dim * self.m as f64)
    }

    /// Instantaneous `γ = |h|² E_s / (2σ²M)`.
    pub fn snr(&self, h_amp: f64) -> f64 {
        h_amp * h_amp * self.snr_scale()
    }
}

/// `r[k] = h √E_s x[k] + w[k]` with `w[k] ~ CN(0, 2σ²)`.
pub fn awgn_apply<R: Rng + ?Sized>(
    x: &Waveform,
    h: Complex64,
    symbol_energy: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if !(sigma2 >= 0.0) || !(symbol_energy >= 0.0) {
        return domain(format!("need E_s >= 0 and sigma2 >= 0, got {symbol_energy}, {sigma2}"));
    }
    let g = h * symbol_energy.sqrt();
    let mut out: Vec<Complex64> = x.samples.iter().map(|s| g * s).collect();
    add_noise(&mut out, sigma2.sqrt(), rng);
    Ok(out)
}

/// Adds i.i.d. `CN(0, 2σ²)` samples in place; `sigma` is per real dimension.
pub fn add_noise<R: Rng + ?Sized>(buf: &mut [Complex64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    for v in buf.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
}

/// One channel realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    pub h1_amp: f64,
    pub h2_amp: f64,
    pub h_amp: f64,
    pub phase: f64,
}

impl ChannelDraw {
    /// Complex gain `|h| e^{jθ}`.
    pub fn gain(&self) -> Complex64 {
        Complex64::from_polar(self.h_amp, self.phase)
    }
}

/// Link geometry of the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// Independent Tx-tag and tag-Rx links.
    #[default]
    Bistatic,
    /// Co-located Tx and Rx: one link traversed twice, `h₁ = h₂`.
    Monostatic,
}

fn nakagami<R: Rng + ?Sized>(m: f64, omega: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(m, omega / m).expect("validated shape and scale");
    g.sample(rng).sqrt()
}

/// Draws `|h₁|`, `|h₂|` from Nakagami(m_i, Ω_i), `|h| = |h₁||h₂|`, and a
/// uniform phase.
pub fn sample_double_nakagami<R: Rng + ?Sized>(params: &FadingParams, rng: &mut R) -> ChannelDraw {
    sample_channel(params, ChannelMode::Bistatic, rng)
}

/// [`sample_double_nakagami`] with an explicit link geometry. Monostatic
/// draws only the first link.
pub fn sample_channel<R: Rng + ?Sized>(params: &FadingParams, mode: ChannelMode, rng: &mut R) -> ChannelDraw {
    let h1 = nakagami(params.m1, params.omega1, rng);
    let h2 = match mode {
        ChannelMode::Bistatic => nakagami(params.m2, params.omega2, rng),
        ChannelMode::Monostatic => h1,
    };
    let phase = rng.random::<f64>() * TAU;
    ChannelDraw { h1_amp: h1, h2_amp: h2, h_amp: h1 * h2, phase }
}

/// How `K_n` is evaluated inside the double Nakagami-m density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    /// Closed form for half-integer `n`, numeric integral otherwise.
    #[default]
    Exact,
    /// Closed form for half-integer `n`, half-integer interpolation for other
    /// `n > 1/2`, numeric integral for `n <= 1/2`.
    Interpolated,
}

/// `e^{z} K_n(z)` as selected by `mode`.
pub fn kernel_ke(n: f64, z: f64, mode: KernelMode) -> f64 {
    if is_half_integer(n) {
        return bessel_ke_half_integer(n.floor() as u32, z);
    }
    match mode {
        KernelMode::Interpolated if n > 0.5 => bessel_ke_approx(n, z).expect("valid order"),
        _ => bessel_ke_numeric(n, z).expect("valid argument"),
    }
}

/// `ln(4 (r₁r₂)^{v/2} / (Γ(m₁)Γ(m₂)))`.
fn ln_pdf_prefactor(p: &FadingParams) -> f64 {
    4f64.ln() + 0.5 * p.v() * (p.r1() * p.r2()).ln() - ln_gamma(p.m1) - ln_gamma(p.m2)
}

/// Density of `|h| = |h₁||h₂|`:
/// `4(r₁r₂)^{v/2}/(Γ(m₁)Γ(m₂)) |h|^{v−1} K_n(2√(r₁r₂)|h|)`.
pub fn double_nakagami_pdf(h_amp: f64, params: &FadingParams) -> Result<f64> {
    double_nakagami_pdf_with(h_amp, params, KernelMode::Exact)
}

/// [`double_nakagami_pdf`] with a chosen Bessel kernel.
pub fn double_nakagami_pdf_with(h_amp: f64, params: &FadingParams, mode: KernelMode) -> Result<f64> {
    if !(h_amp >= 0.0) || h_amp.is_nan() {
        return domain(format!("amplitude must be >= 0, got {h_amp}"));
    }
    if h_amp.is_infinite() {
        return Ok(0.0);
    }
    let n = params.n();
    let v = params.v();
    let s = 2.0 * (params.r1() * params.r2()).sqrt();
    if h_amp == 0.0 {
        // |h|^{v−1} K_n(s|h|) ~ Γ(n) 2^{n−1} s^{−n} |h|^{v−1−n}, v−1−n = 2 min(m) − 1.
        let e = v - 1.0 - n;
        if e > 0.0 {
            return Ok(0.0);
        }
        if n == 0.0 {
            return Ok(f64::INFINITY);
        }
        let ln = ln_pdf_prefactor(params) + ln_gamma(n) + (n - 1.0) * 2f64.ln() - n * s.ln();
        return Ok(ln.exp());
    }
    let z = s * h_amp;
    let ln = ln_pdf_prefactor(params) + (v - 1.0) * h_amp.ln() + kernel_ke(n, z, mode).ln() - z;
    Ok(ln.exp())
}

/// Density of the instantaneous SNR `γ = γ̃|h|²`:
/// `2(r₁r₂/γ̃)^{v/2}/(Γ(m₁)Γ(m₂)) γ^{v/2−1} K_n(2√(r₁r₂γ/γ̃))`.
pub fn snr_pdf(gamma: f64, params: &FadingParams, gamma_scale: f64) -> Result<f64> {
    if !(gamma >= 0.0) || !(gamma_scale > 0.0) {
        return domain(format!("need gamma >= 0 and gamma_scale > 0, got {gamma}, {gamma_scale}"));
    }
    if gamma == 0.0 {
        let e = params.v() / 2.0 - 1.0 - params.n() / 2.0;
        if e > 0.0 {
            return Ok(0.0);
        }
        return Ok(f64::INFINITY);
    }
    let v = params.v();
    let rr = params.r1() * params.r2() / gamma_scale;
    let z = 2.0 * (rr * gamma).sqrt();
    let ln = 2f64.ln() + 0.5 * v * rr.ln() - ln_gamma(params.m1) - ln_gamma(params.m2)
        + (0.5 * v - 1.0) * gamma.ln()
        + kernel_ke(params.n(), z, KernelMode::Exact).ln()
        - z;
    Ok(ln.exp())
}

/// `P(|H| > h0)` by adaptive integration of the density.
pub fn double_nakagami_survival(h0: f64, params: &FadingParams) -> f64 {
    let pdf = |h: f64| double_nakagami_pdf(h, params).unwrap_or(0.0);
    let scale = params.mean_power().sqrt();
    if h0 <= 0.0 {
        return 1.0;
    }
    // Integrate the smaller side.
    if h0 < scale {
        let below = integrate(pdf, 0.0, h0, 1e-15, 1e-12).value;
        (1.0 - below).clamp(0.0, 1.0)
    } else {
        integrate_to_inf(pdf, h0, 1e-300, 1e-12).value.clamp(0.0, 1.0)
    }
}
