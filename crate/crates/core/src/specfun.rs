//! Laguerre polynomials, Laguerre functions of Hermite and convolution type,
//! and the exponentially scaled modified Bessel function `e^{-z} I_nu(z)`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::Dd;

/// Admissibility class of a type index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityClass {
    /// Every component in `(-1, inf)`.
    General,
    /// Every component in `[-1/2, inf)`.
    KernelSafe,
    /// Every component in `[-1/2, inf)` and at least one outside `(-1/2, 1/2)`.
    SpaceAdmissible,
}

/// The type multi-index `alpha = (alpha_1, ..., alpha_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AlphaIndex {
    values: Vec<f64>,
}

impl AlphaIndex {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("alpha must have at least one component".into()));
        }
        if let Some(a) = values.iter().find(|a| !a.is_finite() || **a <= -1.0) {
            return Err(Error::Domain(format!("alpha component {a} must be > -1")));
        }
        Ok(Self { values })
    }

    /// Same component `a` repeated `d` times.
    pub fn uniform(a: f64, d: usize) -> Result<Self> {
        Self::new(vec![a; d])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `|alpha|`, which may be negative.
    pub fn length(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn validity_class(&self) -> ValidityClass {
        if self.values.iter().any(|&a| a < -0.5) {
            ValidityClass::General
        } else if self.values.iter().all(|&a| a.abs() < 0.5) {
            ValidityClass::KernelSafe
        } else {
            ValidityClass::SpaceAdmissible
        }
    }

    pub fn is_kernel_safe(&self) -> bool {
        self.validity_class() != ValidityClass::General
    }

    pub fn is_space_admissible(&self) -> bool {
        self.validity_class() == ValidityClass::SpaceAdmissible
    }
}

impl TryFrom<Vec<f64>> for AlphaIndex {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AlphaIndex> for Vec<f64> {
    fn from(a: AlphaIndex) -> Self {
        a.values
    }
}

/// Eigenfunction index `k = (k_1, ..., k_d)`. Ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(values: Vec<u32>) -> Self {
        Self(values)
    }

    pub fn zero(d: usize) -> Self {
        Self(vec![0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|k| = k_1 + ... + k_d`.
    pub fn length(&self) -> usize {
        self.0.iter().map(|&k| k as usize).sum()
    }

    /// All multi-indices of dimension `d` with `|k| <= max_len`, lexicographic.
    pub fn all_up_to(d: usize, max_len: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; d];
        fn rec(pos: usize, left: usize, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if pos == cur.len() {
                out.push(MultiIndex(cur.clone()));
                return;
            }
            for k in 0..=left {
                cur[pos] = k as u32;
                rec(pos + 1, left - k, cur, out);
            }
            cur[pos] = 0;
        }
        rec(0, max_len, &mut cur, &mut out);
        out
    }

    /// All multi-indices of dimension `d` with `|k| = n`, lexicographic.
    pub fn shell(d: usize, n: usize) -> Vec<MultiIndex> {
        Self::all_up_to(d, n).into_iter().filter(|k| k.length() == n).collect()
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }
}

fn check_order(a: f64) -> Result<()> {
    if !a.is_finite() || a <= -1.0 {
        return Err(Error::Domain(format!("Laguerre order {a} must be > -1")));
    }
    Ok(())
}

/// `L_k^a(x)` by the three-term recurrence
/// `(k+1) L_{k+1} = (2k+1+a-x) L_k - (k+a) L_{k-1}`.
pub fn laguerre_polynomial(k: usize, a: f64, x: f64) -> Result<f64> {
    check_order(a)?;
    let mut prev = 1.0;
    if k == 0 {
        return Ok(prev);
    }
    let mut cur = 1.0 + a - x;
    for j in 1..k {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + a - x) * cur - (jf + a) * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// `c_{k,a} = (2 Gamma(k+1) / Gamma(k+a+1))^{1/2}` through log-gamma differences.
pub fn norm_const(k: usize, a: f64) -> f64 {
    let kf = k as f64;
    (0.5 * (std::f64::consts::LN_2 + ln_gamma(kf + 1.0) - ln_gamma(kf + a + 1.0))).exp()
}

/// Normalized one-dimensional Laguerre values `c_{j,a} L_j^a(s)` for `j = 0..=kmax`,
/// returned as `(mantissas, ln_scale)`: the true value is `mantissa * exp(ln_scale)`.
///
/// The recurrence runs in double-double arithmetic; in plain `f64` its phase
/// error grows to about `1e-9` relative by `j = 1e5`.
fn normalized_laguerre_column(kmax: usize, a: f64, s: Dd) -> (Vec<f64>, f64) {
    let big = 2f64.powi(600);
    let ln_big = 600.0 * std::f64::consts::LN_2;
    let c0 = norm_const(0, a);
    let mut out = Vec::with_capacity(kmax + 1);
    let mut ln_scale = 0.0;
    let mut prev = Dd::from_f64(1.0);
    out.push(c0);
    if kmax == 0 {
        return (out, ln_scale);
    }
    let one_a = Dd::sum(1.0, a);
    let mut root = one_a.sqrt();
    let mut cur = one_a.sub(s).div(root);
    out.push(c0 * cur.to_f64());
    for j in 1..kmax {
        let jf = j as f64;
        let den = Dd::sum(jf + 1.0, a).scale(jf + 1.0).sqrt();
        let lead = Dd::sum(2.0 * jf + 1.0, a).sub(s);
        let next = lead.mul(cur).sub(root.mul(prev)).div(den);
        prev = cur;
        cur = next;
        root = den;
        if cur.hi.abs() > 1e180 {
            for v in out.iter_mut() {
                *v /= big;
            }
            prev = prev.scale(1.0 / big);
            cur = cur.scale(1.0 / big);
            ln_scale += ln_big;
        }
        out.push(c0 * cur.to_f64());
    }
    // Entries pushed before a rescale were divided as well, so one scale fits all.
    (out, ln_scale)
}

/// `phi_j^a(x)` for `j = 0..=kmax` at a single `x >= 0` (one dimension).
///
/// At `x = 0` the continuous limit is returned when it is finite
/// (`a >= -1/2`); for `a < -1/2` the functions blow up and a domain error is raised.
pub fn phi_column(kmax: usize, a: f64, x: f64) -> Result<Vec<f64>> {
    check_order(a)?;
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("point {x} is outside the half line")));
    }
    if x == 0.0 {
        if a > -0.5 {
            return Ok(vec![0.0; kmax + 1]);
        }
        if a == -0.5 {
            let (col, ln_scale) = normalized_laguerre_column(kmax, a, Dd::from_f64(0.0));
            return Ok(col.into_iter().map(|v| v * ln_scale.exp()).collect());
        }
        return Err(Error::Domain(format!(
            "phi is unbounded at the boundary for alpha component {a} < -1/2"
        )));
    }
    let (col, ln_scale) = normalized_laguerre_column(kmax, a, Dd::prod(x, x));
    let ln_pref = (a + 0.5) * x.ln() - 0.5 * x * x + ln_scale;
    Ok(scale_column(col, ln_pref))
}

/// `ell_j^a(x)` for `j = 0..=kmax` at a single `x >= 0` (one dimension).
pub fn ell_column(kmax: usize, a: f64, x: f64) -> Result<Vec<f64>> {
    check_order(a)?;
    if !x.is_finite() {
        return Err(Error::Domain(format!("point {x} is not finite")));
    }
    let (col, ln_scale) = normalized_laguerre_column(kmax, a, Dd::prod(x, x));
    Ok(scale_column(col, ln_scale - 0.5 * x * x))
}

fn scale_column(col: Vec<f64>, ln_pref: f64) -> Vec<f64> {
    col.into_iter()
        .map(|v| {
            if v == 0.0 {
                0.0
            } else {
                v.signum() * (v.abs().ln() + ln_pref).exp()
            }
        })
        .collect()
}

/// Signed log-magnitude of a product of one-dimensional factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogValue {
    pub sign: f64,
    pub ln_abs: f64,
}

impl LogValue {
    pub fn value(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.ln_abs.exp()
        }
    }
}

fn check_point(k: &MultiIndex, alpha: &AlphaIndex, x: &[f64]) -> Result<()> {
    if k.dim() != alpha.dim() || x.len() != alpha.dim() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: k has {}, alpha has {}, x has {}",
            k.dim(),
            alpha.dim(),
            x.len()
        )));
    }
    Ok(())
}

fn log_factor(kj: usize, a: f64, xi: f64, with_power: bool) -> Result<LogValue> {
    let (col, ln_scale) = normalized_laguerre_column(kj, a, Dd::prod(xi, xi));
    let m = col[kj];
    let mut ln_abs = m.abs().ln() + ln_scale - 0.5 * xi * xi;
    if with_power {
        if xi == 0.0 {
            if a > -0.5 {
                return Ok(LogValue { sign: 0.0, ln_abs: f64::NEG_INFINITY });
            } else if a < -0.5 {
                return Err(Error::Domain(format!(
                    "phi is unbounded at the boundary for alpha component {a} < -1/2"
                )));
            }
        } else {
            ln_abs += (a + 0.5) * xi.ln();
        }
    }
    let sign = if m == 0.0 { 0.0 } else { m.signum() };
    Ok(LogValue { sign, ln_abs })
}

/// `phi_k^alpha(x)` in sign / log-magnitude form.
pub fn phi_log(k: &MultiIndex, alpha: &AlphaIndex, x: &[f64]) -> Result<LogValue> {
    check_point(k, alpha, x)?;
    let mut acc = LogValue { sign: 1.0, ln_abs: 0.0 };
    for ((&kj, &a), &xi) in k.0.iter().zip(alpha.values()).zip(x) {
        if !(xi >= 0.0) || !xi.is_finite() {
            return Err(Error::Domain(format!("point coordinate {xi} is outside the half line")));
        }
        let f = log_factor(kj as usize, a, xi, true)?;
        acc.sign *= f.sign;
        acc.ln_abs += f.ln_abs;
    }
    Ok(acc)
}

/// Laguerre function of Hermite type `phi_k^alpha(x)`.
pub fn phi_eval(k: &MultiIndex, alpha: &AlphaIndex, x: &[f64]) -> Result<f64> {
    Ok(phi_log(k, alpha, x)?.value())
}

/// Laguerre function of convolution type `ell_k^alpha(x)`. Depends on `x` only
/// through `x_i^2`, so it is evaluated for any real `x`.
pub fn ell_eval(k: &MultiIndex, alpha: &AlphaIndex, x: &[f64]) -> Result<f64> {
    check_point(k, alpha, x)?;
    let mut acc = LogValue { sign: 1.0, ln_abs: 0.0 };
    for ((&kj, &a), &xi) in k.0.iter().zip(alpha.values()).zip(x) {
        if !xi.is_finite() {
            return Err(Error::Domain(format!("point coordinate {xi} is not finite")));
        }
        let f = log_factor(kj as usize, a, xi, false)?;
        acc.sign *= f.sign;
        acc.ln_abs += f.ln_abs;
    }
    Ok(acc.value())
}

/// Crossover between the power series and the large-argument expansion.
pub const BESSEL_CROSSOVER: f64 = 30.0;

/// `e^{-z} I_nu(z)` for `nu >= -1/2`, `z >= 0`.
pub fn bessel_i_scaled(nu: f64, z: f64) -> Result<f64> {
    if !nu.is_finite() || nu < -0.5 {
        return Err(Error::Domain(format!("Bessel order {nu} must be >= -1/2")));
    }
    if !z.is_finite() || z < 0.0 {
        return Err(Error::Domain(format!("Bessel argument {z} must be finite and >= 0")));
    }
    if z == 0.0 {
        return Ok(match nu.partial_cmp(&0.0) {
            Some(Ordering::Greater) => 0.0,
            Some(Ordering::Equal) => 1.0,
            _ => f64::INFINITY,
        });
    }
    if z > BESSEL_CROSSOVER {
        if let Some(v) = bessel_i_scaled_asymptotic(nu, z) {
            return Ok(v);
        }
    }
    Ok(bessel_i_scaled_series(nu, z))
}

/// `ln(e^{-z} I_nu(z))`, usable where the scaled value itself underflows.
pub fn ln_bessel_i_scaled(nu: f64, z: f64) -> Result<f64> {
    if z > 0.0 && z <= BESSEL_CROSSOVER && z.is_finite() && nu >= -0.5 {
        return Ok(ln_bessel_i_scaled_series(nu, z));
    }
    Ok(bessel_i_scaled(nu, z)?.ln())
}

/// `ln(e^{-z} I_nu(z))` for any order `nu > -1` and `z > 0`.
pub(crate) fn ln_bessel_i_scaled_general(nu: f64, z: f64) -> f64 {
    if z > BESSEL_CROSSOVER {
        if let Some(v) = bessel_i_scaled_asymptotic(nu, z) {
            return v.ln();
        }
    }
    ln_bessel_i_scaled_series(nu, z)
}

/// Power series `sum_k (z/2)^{2k+nu} / (k! Gamma(k+nu+1))`, scaled by `e^{-z}`.
/// All terms are positive, so the sum carries no cancellation.
pub(crate) fn bessel_i_scaled_series(nu: f64, z: f64) -> f64 {
    ln_bessel_i_scaled_series(nu, z).exp()
}

fn ln_bessel_i_scaled_series(nu: f64, z: f64) -> f64 {
    const BIG: f64 = 1e250;
    let ln_t0 = nu * (0.5 * z).ln() - ln_gamma(nu + 1.0) - z;
    let q = 0.25 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut ln_shift = 0.0;
    let mut k = 0.0;
    loop {
        term *= q / ((k + 1.0) * (k + 1.0 + nu));
        sum += term;
        k += 1.0;
        if sum > BIG {
            sum /= BIG;
            term /= BIG;
            ln_shift += BIG.ln();
        }
        if term < 1e-17 * sum && k > 0.5 * z {
            break;
        }
    }
    ln_t0 + ln_shift + sum.ln()
}

/// Hankel expansion `(2 pi z)^{-1/2} sum_k (-1)^k a_k(nu) / z^k`, truncated at the
/// first term below `1e-17` relative. Returns `None` when the terms start growing first.
pub(crate) fn bessel_i_scaled_asymptotic(nu: f64, z: f64) -> Option<f64> {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0_f64;
    let mut sum = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..200 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        term *= -(mu - odd * odd) / (kf * 8.0 * z);
        if term == 0.0 {
            return Some(sum / (2.0 * PI * z).sqrt());
        }
        if term.abs() > last {
            return None;
        }
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            return Some(sum / (2.0 * PI * z).sqrt());
        }
        last = term.abs();
    }
    None
}
