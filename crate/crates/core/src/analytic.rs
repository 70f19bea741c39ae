//! Quadrature evaluation of the symbol error rate over AWGN, double
//! Nakagami-m fading with fixed power, and water-filling power control,
//! plus the orthogonal LoRa reference.
//!
//! All evaluations normalize the noise to `σ = 1` per real dimension, so
//! the bin noncentralities are `√(2Mγ)|ξ_{(a,i)}|`.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::channel::{double_nakagami_pdf, double_nakagami_survival, kernel_ke, FadingParams, KernelMode};
use crate::decoder::DecoderKind;
use crate::error::{domain, Error, Result};
use crate::specfun::{
    bessel_i0e, bessel_k_approx_constant, integrate, integrate_to_inf, is_half_integer, laguerre_half,
    marcum_q1_pair_with, psi_half, psi_un, quadrature_nodes, QuadratureKind, QuadratureRule,
};
use crate::waveform::{cross_corr, CrossCorrMatrix, ModulationConfig};

/// Rician statistics of the correct-symbol bin and its Gaussian
/// approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStatistics {
    /// Shape parameter `κ = |h√E_s ξ_{(a,a)}|² / (2σ²)`.
    pub kappa: f64,
    /// Noise standard deviation per real dimension.
    pub sigma: f64,
    /// Mean `σ√(π/2) L_{1/2}(−κ)`.
    pub mu_a: f64,
    /// Variance `2σ²(1+κ) − μ_a²`.
    pub sigma_a2: f64,
}

impl BinStatistics {
    pub fn from_kappa(kappa: f64, sigma: f64) -> Self {
        let mu_a = sigma * FRAC_PI_2.sqrt() * laguerre_half(-kappa).expect("kappa >= 0");
        let sigma_a2 = (2.0 * sigma * sigma * (1.0 + kappa) - mu_a * mu_a).max(0.0);
        Self { kappa, sigma, mu_a, sigma_a2 }
    }

    /// Statistics at SNR `γ` for a diagonal correlation `|ξ_{(a,a)}|`,
    /// `κ = |ξ_{(a,a)}|² M γ`.
    pub fn at_snr(xi_aa_abs: f64, m: usize, gamma: f64, sigma: f64) -> Self {
        Self::from_kappa(xi_aa_abs * xi_aa_abs * m as f64 * gamma, sigma)
    }
}

/// How an SER value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SerMethod {
    AnalyticAwgn,
    AnalyticFading,
    Waterfill,
    LoraReference,
    MonteCarlo,
}

/// Branch used to integrate over the fading amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FadingBranch {
    /// `n = u + 1/2`: closed-form `K_n`.
    HalfInteger,
    /// `n > 1/2` otherwise: half-integer interpolation of `K_n`.
    Interpolated,
    /// `n < 1/2`, or an exact kernel was requested: numeric `K_n`.
    Numeric,
}

/// One point of an SER curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerPoint {
    /// Linear SNR.
    pub snr: f64,
    pub ser: f64,
    pub method: SerMethod,
    pub config: Option<ModulationConfig>,
    pub decoder: Option<DecoderKind>,
    pub branch: Option<FadingBranch>,
}

impl SerPoint {
    pub fn snr_db(&self) -> f64 {
        10.0 * self.snr.log10()
    }
}

/// How the outer fading integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FadingQuadrature {
    /// Globally adaptive Gauss-Kronrod, split at the deep-fade transition.
    #[default]
    Adaptive,
    /// Generalized Gauss-Laguerre rule of order `gl_order`.
    GaussLaguerre,
}

/// Quadrature orders and symbol subsampling used by the analytic SER.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticOptions {
    /// Gauss-Hermite order over the correct-bin Gaussian.
    pub gh_order: usize,
    /// Generalized Gauss-Laguerre order over the fading amplitude.
    pub gl_order: usize,
    /// Average over every `symbol_stride`-th symbol only.
    pub symbol_stride: usize,
    pub fading_quadrature: FadingQuadrature,
    /// `K_n` evaluation for non-half-integer orders above 1/2.
    pub fading_kernel: KernelMode,
}

impl Default for AnalyticOptions {
    fn default() -> Self {
        Self {
            gh_order: 64,
            gl_order: 64,
            symbol_stride: 1,
            fading_quadrature: FadingQuadrature::Adaptive,
            fading_kernel: KernelMode::Interpolated,
        }
    }
}

/// One distinct correlation row: the magnitudes seen by a transmitted symbol.
#[derive(Debug, Clone)]
pub struct RowGroup {
    /// Number of symbols sharing this row (up to permutation).
    pub count: usize,
    /// `|ξ_{(a,a)}|`.
    pub diag: f64,
    /// Distinct off-diagonal `|ξ_{(a,i)}|` with multiplicities.
    pub off: Vec<(f64, u32)>,
}

/// Correlation rows of all symbols, grouped by identical magnitude multisets.
#[derive(Debug, Clone)]
pub struct RowSet {
    pub m: usize,
    /// Number of symbols averaged over.
    pub symbols: usize,
    pub groups: Vec<RowGroup>,
}

fn mag_key(v: f64) -> i64 {
    (v * (1u64 << 40) as f64).round() as i64
}

impl RowSet {
    /// Groups the rows of a cross-correlation matrix, using every
    /// `stride`-th symbol.
    pub fn from_matrix(xi: &CrossCorrMatrix, stride: usize) -> Self {
        let m = xi.m();
        let stride = stride.max(1);
        let mut index: HashMap<Vec<(i64, u32)>, usize> = HashMap::new();
        let mut groups: Vec<RowGroup> = Vec::new();
        let mut symbols = 0;
        for a in (0..m).step_by(stride) {
            symbols += 1;
            let row = xi.row(a);
            let mut counts: HashMap<i64, (f64, u32)> = HashMap::new();
            for (i, v) in row.iter().enumerate() {
                if i != a {
                    let mag = v.norm();
                    counts.entry(mag_key(mag)).or_insert((mag, 0)).1 += 1;
                }
            }
            let diag = row[a].norm();
            let mut sig: Vec<(i64, u32)> = counts.iter().map(|(k, v)| (*k, v.1)).collect();
            sig.push((mag_key(diag), u32::MAX));
            sig.sort_unstable();
            match index.get(&sig) {
                Some(&g) => groups[g].count += 1,
                None => {
                    let mut off: Vec<(f64, u32)> = counts.into_values().collect();
                    off.sort_by(|x, y| y.0.total_cmp(&x.0));
                    index.insert(sig, groups.len());
                    groups.push(RowGroup { count: 1, diag, off });
                }
            }
        }
        Self { m, symbols, groups }
    }

    /// Orthogonal signaling: unit diagonal, all cross terms zero.
    pub fn orthogonal(m: usize) -> Self {
        Self { m, symbols: m, groups: vec![RowGroup { count: m, diag: 1.0, off: vec![(0.0, (m - 1) as u32)] }] }
    }
}

/// `P(max_{i≠a} L_i ≤ l)`: `Π_{i≠a}[1 − Q₁(|h√E_s ξ_{(a,i)}|/σ, l/σ)]`,
/// accumulated in log space.
pub fn max_bin_cdf(
    l: f64,
    a: usize,
    h_amp: f64,
    symbol_energy: f64,
    sigma2: f64,
    xi_row: &[num_complex::Complex64],
) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    let sigma = sigma2.sqrt();
    let g = h_amp * symbol_energy.sqrt() / sigma;
    let mut seq = Vec::new();
    let mut log_cdf = 0.0;
    for (i, xi) in xi_row.iter().enumerate() {
        if i == a {
            continue;
        }
        let (q, p) = marcum_q1_pair_with(g * xi.norm(), l / sigma, &mut seq);
        log_cdf += if q < 0.5 { (-q).ln_1p() } else { p.ln() };
        if log_cdf == f64::NEG_INFINITY {
            return 0.0;
        }
    }
    log_cdf.exp()
}

/// `1 − F̂(l)` for one row group at noncentrality scale `s = √(2Mγ)`.
fn max_bin_survival(l: f64, s: f64, off: &[(f64, u32)], seq: &mut Vec<f64>) -> f64 {
    if l <= 0.0 {
        return 1.0;
    }
    let mut log_cdf = 0.0;
    for &(mag, mult) in off {
        let (q, p) = marcum_q1_pair_with(s * mag, l, seq);
        let lp = if q < 0.5 { (-q).ln_1p() } else { p.ln() };
        log_cdf += mult as f64 * lp;
        if log_cdf < -745.0 {
            return 1.0;
        }
    }
    -log_cdf.exp_m1()
}

/// Conditional error probability of one row group, Gauss-Hermite over the
/// Gaussian approximation of the correct bin.
fn group_error(gamma: f64, m: usize, group: &RowGroup, rule: &QuadratureRule, seq: &mut Vec<f64>) -> f64 {
    let s = (2.0 * m as f64 * gamma).sqrt();
    let stats = BinStatistics::at_snr(group.diag, m, gamma, 1.0);
    let sd = (2.0 * stats.sigma_a2).sqrt();
    let mut acc = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        if w == 0.0 {
            continue;
        }
        acc += w * max_bin_survival(sd * x + stats.mu_a, s, &group.off, seq);
    }
    acc / PI.sqrt()
}

/// Average SER at linear SNR `γ` over a grouped row set.
pub fn ser_rowset(gamma: f64, rows: &RowSet, rule: &QuadratureRule) -> f64 {
    if gamma <= 0.0 {
        return (rows.m - 1) as f64 / rows.m as f64;
    }
    let mut seq = Vec::new();
    let total: f64 = rows.groups.iter().map(|g| g.count as f64 * group_error(gamma, rows.m, g, rule, &mut seq)).sum();
    (total / rows.symbols as f64).clamp(0.0, 1.0)
}

fn check_snr(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return domain(format!("SNR must be positive and finite, got {gamma}"));
    }
    Ok(())
}

/// Gauss-Hermite rule of the requested order.
pub fn hermite_rule(order: usize) -> Result<QuadratureRule> {
    quadrature_nodes(QuadratureKind::GaussHermite, order)
}

/// Analytic SER over AWGN at linear SNR `γ = E_s/(2σ²M)`.
pub fn ser_awgn(gamma: f64, cfg: &ModulationConfig, kind: DecoderKind, rule: &QuadratureRule) -> Result<SerPoint> {
    ser_awgn_with(gamma, cfg, kind, rule, 1)
}

/// [`ser_awgn`] averaging over every `stride`-th symbol.
pub fn ser_awgn_with(
    gamma: f64,
    cfg: &ModulationConfig,
    kind: DecoderKind,
    rule: &QuadratureRule,
    stride: usize,
) -> Result<SerPoint> {
    check_snr(gamma)?;
    let rows = RowSet::from_matrix(&*cross_corr(cfg, kind)?, stride);
    let min_kappa = rows.groups.iter().map(|g| g.diag * g.diag).fold(f64::INFINITY, f64::min) * cfg.m() as f64 * gamma;
    if min_kappa < 2.0 {
        log::debug!("shape parameter {min_kappa:.3} < 2: Gaussian approximation is loose");
    }
    Ok(SerPoint {
        snr: gamma,
        ser: ser_rowset(gamma, &rows, rule),
        method: SerMethod::AnalyticAwgn,
        config: Some(*cfg),
        decoder: Some(kind),
        branch: None,
    })
}

/// Exact SER of orthogonal non-coherent signaling with `M = 2^sf`:
/// `∫ [1 − (1 − e^{−l²/2})^{M−1}] f_Rice(l) dl` with shape `κ = Mγ`.
pub fn lora_ser_reference(gamma: f64, sf: u32) -> Result<SerPoint> {
    check_snr(gamma)?;
    let m = (1u64 << sf) as f64;
    let nu = (2.0 * m * gamma).sqrt();
    let integrand = |l: f64| {
        if l <= 0.0 {
            return 0.0;
        }
        let rice = l * (-0.5 * (l - nu) * (l - nu)).exp() * bessel_i0e(nu * l);
        let tail = -((m - 1.0) * (-(-0.5 * l * l).exp()).ln_1p()).exp_m1();
        rice * tail
    };
    let hi = nu + 40.0;
    let mut ser = 0.0;
    let cuts = [0.0, (nu - 8.0).max(0.0), nu, nu + 8.0, hi];
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            ser += integrate(integrand, w[0], w[1], 1e-16, 1e-11).value;
        }
    }
    Ok(SerPoint {
        snr: gamma,
        ser: ser.clamp(0.0, 1.0),
        method: SerMethod::LoraReference,
        config: None,
        decoder: None,
        branch: None,
    })
}

/// Branch selected by the Bessel order `n = |m₁ − m₂|`.
pub fn fading_branch(fading: &FadingParams) -> FadingBranch {
    let n = fading.n();
    if is_half_integer(n) {
        FadingBranch::HalfInteger
    } else if n > 0.5 {
        FadingBranch::Interpolated
    } else {
        FadingBranch::Numeric
    }
}

/// Average SER over double Nakagami-m fading with fixed symbol energy.
///
/// `gamma_scale` is `γ̃ = E_s/(2σ²M)`; the instantaneous SNR is `γ̃|h|²`.
/// With `|h| = h̃/(2√(r₁r₂))` the average is
/// `2^{2−v}/(Γ(m₁)Γ(m₂)) ∫ P(γ̃h̃²/(4r₁r₂)) h̃^{v−1} K_n(h̃) dh̃`, where `P` is
/// the AWGN expression. The integrand is split into the weight
/// `h̃^{v−1−n} e^{−h̃}` and the smooth factor `h̃^n K_n(h̃) e^{h̃}`, with `K_n`
/// chosen by [`fading_branch`]. `opts.fading_quadrature` integrates the
/// product adaptively or with a generalized Gauss-Laguerre rule on the weight.
pub fn ser_fading_fixed(
    gamma_scale: f64,
    cfg: &ModulationConfig,
    kind: DecoderKind,
    fading: &FadingParams,
    opts: &AnalyticOptions,
) -> Result<SerPoint> {
    check_snr(gamma_scale)?;
    let rows = RowSet::from_matrix(&*cross_corr(cfg, kind)?, opts.symbol_stride);
    let gh = hermite_rule(opts.gh_order)?;
    let (ser, branch) = ser_fading_rowset(gamma_scale, &rows, &gh, fading, opts)?;
    Ok(SerPoint {
        snr: gamma_scale,
        ser,
        method: SerMethod::AnalyticFading,
        config: Some(*cfg),
        decoder: Some(kind),
        branch: Some(branch),
    })
}

/// Fading average over a grouped row set; see [`ser_fading_fixed`].
pub fn ser_fading_rowset(
    gamma_scale: f64,
    rows: &RowSet,
    gh: &QuadratureRule,
    fading: &FadingParams,
    opts: &AnalyticOptions,
) -> Result<(f64, FadingBranch)> {
    let v = fading.v();
    let n = fading.n();
    let four_rr = 4.0 * fading.r1() * fading.r2();
    let ln_pre = (2.0 - v) * 2f64.ln() - ln_gamma(fading.m1) - ln_gamma(fading.m2);
    let mut branch = fading_branch(fading);
    if branch == FadingBranch::Interpolated && opts.fading_kernel == KernelMode::Exact {
        branch = FadingBranch::Numeric;
    }
    let cond = |x: f64| ser_rowset(gamma_scale * x * x / four_rr, rows, gh);
    // Smooth factor h̃^n e^{h̃} K_n(h̃) left after the weight h̃^{v−1−n} e^{−h̃}.
    let kernel: Box<dyn Fn(f64) -> f64> = match branch {
        FadingBranch::HalfInteger => {
            let u = n.floor() as u32;
            Box::new(move |x: f64| FRAC_PI_2.sqrt() * x.powi(u as i32) * psi_half(u, x))
        }
        FadingBranch::Interpolated => {
            let (u, c) = bessel_k_approx_constant(n)?;
            Box::new(move |x: f64| c * FRAC_PI_2.sqrt() * x.powf(n - 0.5) * psi_un(u, n, x))
        }
        FadingBranch::Numeric => Box::new(move |x: f64| x.powf(n) * kernel_ke(n, x, KernelMode::Exact)),
    };
    let alpha = v - 1.0 - n;
    let total = match opts.fading_quadrature {
        FadingQuadrature::GaussLaguerre => {
            let gl = quadrature_nodes(QuadratureKind::GaussLaguerre { alpha }, opts.gl_order)?;
            gl.integrate(|x| cond(x) * kernel(x))
        }
        FadingQuadrature::Adaptive => {
            let f = |x: f64| {
                if x <= 0.0 {
                    return if alpha == 0.0 { cond(0.0) * kernel(0.0) } else { 0.0 };
                }
                let w = (alpha * x.ln() - x).exp();
                if w == 0.0 {
                    0.0
                } else {
                    w * kernel(x) * cond(x)
                }
            };
            let mut cuts: Vec<f64> = [1e-3, 1e-2, 0.1, 1.0, 10.0]
                .iter()
                .map(|g| (four_rr * g / gamma_scale).sqrt())
                .chain([1.0, 10.0, 40.0])
                .filter(|&x| x < 200.0)
                .collect();
            cuts.sort_by(|a, b| a.total_cmp(b));
            let mut total = 0.0;
            let mut lo = 0.0;
            for &c in &cuts {
                total += integrate(f, lo, c, 1e-300, 1e-7).value;
                lo = c;
            }
            total + integrate_to_inf(f, lo, 1e-300, 1e-7).value
        }
    };
    Ok(((ln_pre.exp() * total).clamp(0.0, 1.0), branch))
}

/// Outage threshold of the water-filling allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterfillSolution {
    /// Outage SNR `γ₀`.
    pub gamma0: f64,
    /// `|∫_{γ₀}^∞ (1/γ₀ − 1/γ) p(γ) dγ − 1|` at the returned root.
    pub residual: f64,
    pub iterations: usize,
}

impl WaterfillSolution {
    /// Outage amplitude `h₀ = √(γ₀/γ̃)`.
    pub fn h0(&self, gamma_scale: f64) -> f64 {
        (self.gamma0 / gamma_scale).sqrt()
    }
}

/// `∫_{γ₀}^∞ (1/γ₀ − 1/γ) p(γ) dγ − 1`, integrated over `|h|`.
pub fn waterfill_constraint(gamma0: f64, gamma_scale: f64, fading: &FadingParams) -> f64 {
    let h0 = (gamma0 / gamma_scale).sqrt();
    let f = |h: f64| {
        let alloc = 1.0 / gamma0 - 1.0 / (gamma_scale * h * h);
        if alloc <= 0.0 {
            0.0
        } else {
            alloc * double_nakagami_pdf(h, fading).unwrap_or(0.0)
        }
    };
    let scale = fading.mean_power().sqrt();
    let mut total = 0.0;
    if h0 < scale {
        total += integrate(f, h0, scale, 0.0, 1e-13).value;
        total += integrate_to_inf(f, scale, 0.0, 1e-13).value;
    } else {
        total += integrate_to_inf(f, h0, 0.0, 1e-13).value;
    }
    total - 1.0
}

/// Solves the water-filling constraint for `γ₀` by bisection in `ln γ₀`.
///
/// The left side is decreasing in `γ₀` and is at most `P(Γ > 1) ≤ 1` at
/// `γ₀ = 1`, so the root lies in `(0, 1]`.
pub fn waterfill_outage(gamma_scale: f64, fading: &FadingParams) -> Result<WaterfillSolution> {
    check_snr(gamma_scale)?;
    let g = |x: f64| waterfill_constraint(x, gamma_scale, fading);
    let mut hi = 1.0;
    let g_hi = g(hi);
    if g_hi > 0.0 {
        return Err(Error::Solver(format!("constraint at gamma0 = 1 is {g_hi:e} > 0; no root in (0, 1]")));
    }
    let mut lo = 0.5;
    let mut tries = 0;
    while g(lo) <= 0.0 {
        lo *= 0.25;
        tries += 1;
        if tries > 200 {
            return Err(Error::Solver(format!("cannot bracket water-filling root for gamma_scale = {gamma_scale:e}")));
        }
    }
    let mut iterations = 0;
    while hi / lo - 1.0 > 1e-15 && iterations < 200 {
        let mid = (lo * hi).sqrt();
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let gamma0 = (lo * hi).sqrt();
    Ok(WaterfillSolution { gamma0, residual: g(gamma0).abs(), iterations })
}

/// Average SER under water-filling, conditioned on the channel exceeding
/// the outage threshold.
///
/// Above `h₀` the allocated energy gives the effective AWGN SNR
/// `γ̃|h|²/γ₀ − 1`.
pub fn ser_fading_waterfill(
    gamma_scale: f64,
    cfg: &ModulationConfig,
    kind: DecoderKind,
    fading: &FadingParams,
    opts: &AnalyticOptions,
) -> Result<SerPoint> {
    check_snr(gamma_scale)?;
    let sol = waterfill_outage(gamma_scale, fading)?;
    let rows = RowSet::from_matrix(&*cross_corr(cfg, kind)?, opts.symbol_stride);
    let gh = hermite_rule(opts.gh_order)?;
    let ser = ser_waterfill_rowset(gamma_scale, sol.gamma0, &rows, &gh, fading);
    Ok(SerPoint {
        snr: gamma_scale,
        ser,
        method: SerMethod::Waterfill,
        config: Some(*cfg),
        decoder: Some(kind),
        branch: None,
    })
}

/// Conditional water-filling SER for a given outage threshold.
pub fn ser_waterfill_rowset(
    gamma_scale: f64,
    gamma0: f64,
    rows: &RowSet,
    gh: &QuadratureRule,
    fading: &FadingParams,
) -> f64 {
    let h0 = (gamma0 / gamma_scale).sqrt();
    let f = |h: f64| {
        let pdf = double_nakagami_pdf(h, fading).unwrap_or(0.0);
        if pdf == 0.0 {
            return 0.0;
        }
        let eff = gamma_scale * h * h / gamma0 - 1.0;
        pdf * ser_rowset(eff, rows, gh)
    };
    let num = integrate_to_inf(f, h0, 1e-14, 1e-5).value;
    let den = double_nakagami_survival(h0, fading);
    if den <= 0.0 {
        return 0.0;
    }
    (num / den).clamp(0.0, 1.0)
}
