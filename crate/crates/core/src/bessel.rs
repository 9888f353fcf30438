//! Log-domain modified Bessel functions of the first kind.
//!
//! `ln I_ν(x)` uses the Debye uniform expansion for `ν >= 50`. Lower orders
//! are reached by the backward ratio recurrence
//! `I_{ν-1}/I_ν = I_{ν+1}/I_ν + 2ν/x` seeded from two Debye values; every
//! step adds positive terms, so no cancellation occurs at any argument.

use std::sync::OnceLock;

const DEBYE_MIN_ORDER: f64 = 50.0;
const DEBYE_TERMS: usize = 13;

/// Coefficients of the Debye polynomials `u_k(t)`, lowest degree first.
fn debye_polys() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut polys = vec![vec![1.0]];
        for k in 0..DEBYE_TERMS - 1 {
            let u = &polys[k];
            let mut next = vec![0.0; u.len() + 3];
            // ½ t² (1 − t²) u'(t)
            for (j, &c) in u.iter().enumerate().skip(1) {
                let d = c * j as f64 * 0.5;
                next[j + 1] += d;
                next[j + 3] -= d;
            }
            // ⅛ ∫₀ᵗ (1 − 5 s²) u(s) ds
            for (j, &c) in u.iter().enumerate() {
                next[j + 1] += c / (8.0 * (j + 1) as f64);
                next[j + 3] -= 5.0 * c / (8.0 * (j + 3) as f64);
            }
            polys.push(next);
        }
        polys
    })
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Debye expansion of `ln I_ν(x)`, accurate for large `ν` at every `x > 0`.
fn log_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = z.hypot(1.0);
    let t = 1.0 / root;
    // ln(z / (1 + √(1+z²))) written to stay accurate for small and large z
    let eta = root + (z / (1.0 + root)).ln();
    let mut series = 0.0;
    let mut scale = 1.0;
    for u in debye_polys() {
        series += horner(u, t) * scale;
        scale /= nu;
    }
    nu * eta - 0.5 * (2.0 * std::f64::consts::PI * nu).ln() + 0.5 * t.ln() + series.ln()
}

/// `ln I_ν(x)` for real order `ν >= 0` and `x >= 0`.
///
/// Returns `-inf` for `x = 0, ν > 0` and `NaN` for invalid input.
pub fn log_bessel_i(nu: f64, x: f64) -> f64 {
    if !(nu >= 0.0) || !(x >= 0.0) || nu.is_infinite() {
        return f64::NAN;
    }
    if x == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    if nu >= DEBYE_MIN_ORDER {
        return log_debye(nu, x);
    }
    let steps = (DEBYE_MIN_ORDER - nu).ceil();
    let top = nu + steps;
    let log_top = log_debye(top, x);
    // q = I_{μ+1}/I_μ, starting at μ = top
    let mut q = (log_debye(top + 1.0, x) - log_top).exp();
    let mut log_i = log_top;
    let mut mu = top;
    for _ in 0..steps as usize {
        let back = q + 2.0 * mu / x;
        log_i += back.ln();
        q = 1.0 / back;
        mu -= 1.0;
    }
    log_i
}

/// `ln I_0(x)`.
pub fn log_bessel_i0(x: f64) -> f64 {
    log_bessel_i(0.0, x)
}
