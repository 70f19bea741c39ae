//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use lbphy_core::analytic::{hermite_rule, ser_rowset, RowSet};
use lbphy_core::channel::FadingParams;
use lbphy_core::specfun::{bessel_i0e, integrate, integrate_to_inf, marcum_q1_pair};
use lbphy_core::waveform::ModulationConfig;
use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

/// Quantizer cell of symbol `a` at chip time `s`.
///
/// With `s = k + r` the chirp numerator `s(2a − M + s) − 2Ms·u` splits into
/// the integer `k(c + k)`, reduced exactly modulo `2M`, plus
/// `r(c + 2k) + r²`, which stays small near the vertex of the parabola where
/// tangencies with a cell boundary occur.
pub fn cell_at(s: f64, a: usize, cfg: &ModulationConfig) -> i64 {
    let m = cfg.m() as i64;
    let wrap = if s >= (m - a as i64) as f64 { 1 } else { 0 };
    let c = 2 * a as i64 - m - 2 * m * wrap;
    let k = s.floor() as i64;
    let r = s - k as f64;
    let p = (k * (c + k)).rem_euclid(2 * m) as f64 + r * (c + 2 * k) as f64 + r * r;
    let half = 1i64 << (cfg.n_levels_exp - 1);
    let cell = ((p * half as f64 / m as f64).floor() as i64).rem_euclid(2 * half);
    if cell >= half {
        cell - 2 * half
    } else {
        cell
    }
}

/// Quantized phase of symbol `a` at chip time `s`, in `[−π, π)`.
pub fn level_at(s: f64, a: usize, cfg: &ModulationConfig) -> f64 {
    let half = (1u64 << (cfg.n_levels_exp - 1)) as f64;
    (cell_at(s, a, cfg) as f64 + 0.5) * std::f64::consts::PI / half
}

/// True if two phases coincide modulo `2π`.
pub fn same_phase(x: f64, y: f64) -> bool {
    let d = (x - y).rem_euclid(std::f64::consts::TAU);
    d < 1e-12 || std::f64::consts::TAU - d < 1e-12
}

fn refine(lo: f64, hi: f64, l_lo: f64, l_hi: f64, a: usize, cfg: &ModulationConfig, out: &mut Vec<f64>) {
    if hi - lo < 1e-13 {
        if l_lo != l_hi {
            out.push(0.5 * (lo + hi));
        }
        return;
    }
    let mid = 0.5 * (lo + hi);
    let l_mid = level_at(mid, a, cfg);
    if l_lo == l_hi && l_lo == l_mid && hi - lo <= 1.0 / 256.0 {
        return;
    }
    refine(lo, mid, l_lo, l_mid, a, cfg, out);
    refine(mid, hi, l_mid, l_hi, a, cfg, out);
}

/// Level changes of one symbol in chips, found by a scan at 256 points per
/// chip followed by bisection.
pub fn scanned_jumps(a: usize, cfg: &ModulationConfig) -> Vec<f64> {
    let m = cfg.m();
    let steps = 64 * m;
    let h = m as f64 / steps as f64;
    let mut out = Vec::new();
    let mut prev = level_at(0.0, a, cfg);
    for k in 0..steps {
        let lo = k as f64 * h;
        let hi = if k + 1 == steps { m as f64 * (1.0 - 1e-16) } else { (k + 1) as f64 * h };
        let l_hi = level_at(hi, a, cfg);
        refine(lo, hi, prev, l_hi, a, cfg, &mut out);
        prev = l_hi;
    }
    out
}

/// `∫_0^{T_s} e^{jφ(t)} e^{−j2πft} dt` with `φ` piecewise constant between
/// scanned jumps and each piece integrated by adaptive quadrature.
pub fn sa_oracle(a: usize, cfg: &ModulationConfig, f: f64) -> Complex64 {
    let nu = f / cfg.bandwidth_hz;
    let m = cfg.m() as f64;
    let mut edges = vec![0.0];
    edges.extend(scanned_jumps(a, cfg));
    edges.push(m);
    let mut acc = Complex64::new(0.0, 0.0);
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let phi = level_at(0.5 * (lo + hi), a, cfg);
        // Pieces whose integral nearly cancels need an absolute floor.
        let tol = 1e-13 * (hi - lo);
        let re = integrate(|s| (phi - std::f64::consts::TAU * nu * s).cos(), lo, hi, tol, 1e-13).value;
        let im = integrate(|s| (phi - std::f64::consts::TAU * nu * s).sin(), lo, hi, tol, 1e-13).value;
        acc += Complex64::new(re, im);
    }
    acc / cfg.bandwidth_hz
}

/// `K_ν(z)` from `∫_0^∞ e^{-z cosh t} cosh(νt) dt` by adaptive quadrature.
pub fn bessel_k_oracle(nu: f64, z: f64) -> f64 {
    let upper = (2.0 * (40.0 + nu.abs() * 10.0) / z).ln().max(1.0) + 5.0;
    let r = integrate(|t| (-z * (t.cosh() - 1.0)).exp() * (nu * t).cosh(), 0.0, upper, 0.0, 1e-13);
    r.value * (-z).exp()
}

/// `Q_1(a, b)` by integrating the Rician density over `[b, ∞)`.
pub fn marcum_oracle(a: f64, b: f64) -> f64 {
    let pdf = |x: f64| x * (-0.5 * (x * x + a * a)).exp() * bessel_i_series_big(a * x);
    let hi = (a.max(b) + 40.0).max(b + 40.0);
    integrate(pdf, b, hi, 1e-300, 1e-13).value
}

/// Power series for `I_0` with enough terms for arguments up to a few hundred.
pub fn bessel_i_series_big(x: f64) -> f64 {
    let h = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-18 * sum || k < x {
        term *= h / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Nakagami-m amplitude density.
pub fn nakagami_pdf(x: f64, m: f64, omega: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln = 2f64.ln() + m * (m / omega).ln() - ln_gamma(m) + (2.0 * m - 1.0) * x.ln() - m * x * x / omega;
    ln.exp()
}

/// Density of `|h₁||h₂|` as `∫ f₁(x) f₂(h/x) / x dx`, integrated in `ln x`.
pub fn product_pdf(h: f64, p: &FadingParams) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    let g = |u: f64| {
        let x = u.exp();
        nakagami_pdf(x, p.m1, p.omega1) * nakagami_pdf(h / x, p.m2, p.omega2)
    };
    let c = 0.5 * h.ln();
    let cuts = [c - 40.0, c - 8.0, c - 2.0, c, c + 2.0, c + 8.0, c + 40.0];
    cuts.windows(2).map(|w| integrate(g, w[0], w[1], 1e-300, 1e-11).value).sum()
}

/// Average SER over double Nakagami fading: the AWGN row-set SER integrated
/// against [`product_pdf`] by nested adaptive quadrature.
pub fn fading_ser_oracle(gamma_scale: f64, rows: &RowSet, p: &FadingParams) -> f64 {
    let rule = hermite_rule(64).unwrap();
    let f = |h: f64| {
        let d = product_pdf(h, p);
        if d == 0.0 {
            0.0
        } else {
            d * ser_rowset(gamma_scale * h * h, rows, &rule)
        }
    };
    let s = p.mean_power().sqrt();
    let mut cuts = vec![0.0];
    for g in [1e-3, 1e-2, 0.1, 1.0] {
        let h = (g / gamma_scale).sqrt();
        if h < s {
            cuts.push(h);
        }
    }
    cuts.push(s);
    let body: f64 = cuts.windows(2).map(|w| integrate(f, w[0], w[1], 1e-300, 1e-8).value).sum();
    body + integrate_to_inf(f, s, 1e-300, 1e-8).value
}

/// AWGN SER with the exact Rician density of the correct bin and independent
/// Rician competitors, integrated adaptively for each row group.
pub fn rician_ser_oracle(gamma: f64, rows: &RowSet) -> f64 {
    let s = (2.0 * rows.m as f64 * gamma).sqrt();
    let mut total = 0.0;
    for g in &rows.groups {
        let nu = s * g.diag;
        let f = |x: f64| {
            let pdf = x * (-0.5 * (x - nu) * (x - nu)).exp() * bessel_i0e(nu * x);
            let mut log_cdf = 0.0;
            for &(mag, mult) in &g.off {
                let (q, p) = marcum_q1_pair(s * mag, x);
                log_cdf += mult as f64 * if q < 0.5 { (-q).ln_1p() } else { p.ln() };
            }
            pdf * -log_cdf.exp_m1()
        };
        total += g.count as f64 * integrate(f, 0.0, nu + 12.0, 1e-14, 1e-10).value;
    }
    total / rows.symbols as f64
}
