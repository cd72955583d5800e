//! Heat kernel `G_t^α` and the kernels `p_{t,m}^α` of `P_{t,m}`, each by two
//! independent routes, plus empirical certification of the Gaussian and
//! polynomial decay bounds.

use std::f64::consts::PI;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use realfft::num_complex::Complex;
use realfft::RealFftPlanner;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::{compensated_sum, gauss_legendre, integrate, CompensatedSum, QuadGrid};
use crate::specfun::{ln_bessel_i_scaled_general, norm_const, phi_column, AlphaIndex};
use crate::spectral::{eigenvalue, poisson_symbol};

/// `sup_{k,x} |φ_k^a(x)|` over `a >= -1/2`, attained by `φ_0^{-1/2}(0) = (2/Γ(1/2))^{1/2}`.
pub const SUP_PHI: f64 = 1.062_252;

/// Arguments of a kernel evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelQuery {
    pub t: f64,
    pub m: u32,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub alpha: AlphaIndex,
}

impl KernelQuery {
    pub fn new(t: f64, m: u32, x: Vec<f64>, y: Vec<f64>, alpha: AlphaIndex) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("t = {t} must be positive")));
        }
        if x.len() != alpha.dim() || y.len() != alpha.dim() {
            return Err(Error::InvalidArgument("x, y and alpha must share the dimension".into()));
        }
        if x.iter().chain(&y).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("kernel points must be interior".into()));
        }
        Ok(Self { t, m, x, y, alpha })
    }

    pub fn dim(&self) -> usize {
        self.alpha.dim()
    }

    pub fn with_t(&self, t: f64) -> Self {
        Self { t, ..self.clone() }
    }

    pub fn with_m(&self, m: u32) -> Self {
        Self { m, ..self.clone() }
    }

    pub fn distance(&self) -> f64 {
        self.x.iter().zip(&self.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    fn require_kernel_safe(&self) -> Result<()> {
        if self.alpha.is_kernel_safe() {
            Ok(())
        } else {
            Err(Error::Domain(format!("alpha {:?} is not in [-1/2, inf)^d", self.alpha.values())))
        }
    }
}

/// Closed-form heat kernel value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatValue {
    pub value: f64,
    pub ln_value: f64,
    /// The value underflowed and was saturated to 0.
    pub saturated: bool,
}

fn ln_sinh(x: f64) -> f64 {
    if x > 20.0 {
        x - std::f64::consts::LN_2 + (-(-2.0 * x).exp()).ln_1p()
    } else {
        x.sinh().ln()
    }
}

/// `ln G_t^α(x, y)` from the closed form, evaluated coordinate-wise as
/// `−ln sinh 2t − (x−y)²/(2 sinh 2t) − (x²+y²) tanh(t)/2 + ln √(xy) + ln(e^{−z} I_α(z))`,
/// `z = xy / sinh 2t`.
pub fn ln_heat_closed(t: f64, x: &[f64], y: &[f64], alpha: &AlphaIndex) -> f64 {
    let ls = ln_sinh(2.0 * t);
    let inv_s = (-ls).exp();
    let th = t.tanh();
    let mut acc = 0.0;
    for ((&xi, &yi), &a) in x.iter().zip(y).zip(alpha.values()) {
        let ln_xy = xi.ln() + yi.ln();
        let ln_z = ln_xy - ls;
        let ln_bessel = if ln_z < -600.0 {
            a * (ln_z - std::f64::consts::LN_2) - ln_gamma(a + 1.0)
        } else {
            ln_bessel_i_scaled_general(a, ln_z.exp())
        };
        acc += -ls - 0.5 * (xi - yi) * (xi - yi) * inv_s - 0.5 * (xi * xi + yi * yi) * th + 0.5 * ln_xy + ln_bessel;
    }
    acc
}

/// `G_t^α(x, y)` by the closed formula.
pub fn heat_kernel_closed(q: &KernelQuery) -> Result<HeatValue> {
    let ln_value = ln_heat_closed(q.t, &q.x, &q.y, &q.alpha);
    if ln_value.is_nan() {
        return Err(Error::NonFinite { node: q.x.iter().chain(&q.y).copied().collect(), value: ln_value });
    }
    let value = ln_value.exp();
    Ok(HeatValue { value, ln_value, saturated: value == 0.0 })
}

/// Truncated eigenfunction series with a rigorous tail bound (given [`SUP_PHI`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
    pub degree: usize,
}

/// Shell sums `S_n(x,y) = Σ_{|k|=n} φ_k(x) φ_k(y)` for `n <= degree`.
#[derive(Debug, Clone)]
pub struct ShellSums {
    alpha: AlphaIndex,
    sums: Vec<f64>,
}

/// Degree above which shell convolutions switch to FFT.
const FFT_THRESHOLD: usize = 512;

fn real_spectrum(a: &[f64], size: usize) -> Vec<Complex<f64>> {
    let fwd = RealFftPlanner::<f64>::new().plan_fft_forward(size);
    let mut buf = a.to_vec();
    buf.resize(size, 0.0);
    let mut out = fwd.make_output_vec();
    fwd.process(&mut buf, &mut out).expect("fft buffer sizes");
    out
}

fn inverse_spectrum(mut spec: Vec<Complex<f64>>, size: usize, n_out: usize) -> Vec<f64> {
    let inv = RealFftPlanner::<f64>::new().plan_fft_inverse(size);
    // A real signal has real DC and Nyquist bins; rounding must not trip the check.
    spec[0].im = 0.0;
    if let Some(last) = spec.last_mut() {
        last.im = 0.0;
    }
    let mut out = inv.make_output_vec();
    inv.process(&mut spec, &mut out).expect("fft buffer sizes");
    let scale = 1.0 / size as f64;
    out.into_iter().take(n_out).map(|v| v * scale).collect()
}

fn convolve_truncated(a: &[f64], b: &[f64], kmax: usize) -> Vec<f64> {
    let n_out = kmax + 1;
    if a.len().min(b.len()) <= FFT_THRESHOLD {
        return (0..n_out)
            .map(|n| {
                let mut acc = CompensatedSum::new();
                for j in 0..=n.min(a.len() - 1) {
                    if n - j < b.len() {
                        acc.add(a[j] * b[n - j]);
                    }
                }
                acc.value()
            })
            .collect();
    }
    let size = (a.len() + b.len() - 1).next_power_of_two();
    let mut fa = real_spectrum(a, size);
    let fb = real_spectrum(b, size);
    for (u, v) in fa.iter_mut().zip(&fb) {
        *u *= v;
    }
    inverse_spectrum(fa, size, n_out)
}

impl ShellSums {
    pub fn new(alpha: &AlphaIndex, x: &[f64], y: &[f64], degree: usize) -> Result<Self> {
        let mut sums: Option<Vec<f64>> = None;
        for ((&xi, &yi), &a) in x.iter().zip(y).zip(alpha.values()) {
            let cx = phi_column(degree, a, xi)?;
            let cy = phi_column(degree, a, yi)?;
            let prod: Vec<f64> = cx.iter().zip(&cy).map(|(u, v)| u * v).collect();
            sums = Some(match sums {
                None => prod,
                Some(prev) => convolve_truncated(&prev, &prod, degree),
            });
        }
        Ok(Self { alpha: alpha.clone(), sums: sums.unwrap_or_default() })
    }

    pub fn degree(&self) -> usize {
        self.sums.len().saturating_sub(1)
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    /// `Σ_{n<=k} w(λ_n) S_n`.
    pub fn weighted<W: Fn(f64) -> f64>(&self, k: usize, w: W) -> f64 {
        compensated_sum(self.sums.iter().take(k + 1).enumerate().map(|(n, s)| w(eigenvalue(n, &self.alpha)) * s))
    }

    pub fn heat(&self, t: f64, k: usize) -> SeriesValue {
        let k = k.min(self.degree());
        SeriesValue {
            value: self.weighted(k, |l| (-t * l).exp()),
            tail_bound: series_tail(Weight::Heat(t), &self.alpha, k),
            degree: k,
        }
    }

    pub fn patm(&self, t: f64, m: u32, k: usize) -> SeriesValue {
        let k = k.min(self.degree());
        SeriesValue {
            value: self.weighted(k, |l| poisson_symbol(t, m, l)),
            tail_bound: series_tail(Weight::Poisson(t, m), &self.alpha, k),
            degree: k,
        }
    }
}

/// Spectral weight of a kernel series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Heat(f64),
    Poisson(f64, u32),
}

impl Weight {
    fn eval(&self, lambda: f64) -> f64 {
        match *self {
            Weight::Heat(t) => (-t * lambda).exp(),
            Weight::Poisson(t, m) => poisson_symbol(t, m, lambda),
        }
    }
}

fn shell_count(d: usize, n: usize) -> f64 {
    let mut c = 1.0;
    for i in 1..d {
        c *= (n + i) as f64 / i as f64;
    }
    c
}

/// Terms `SUP_PHI^{2d} #{|k|=n} w(λ_n)` from `n = from` until, past the peak,
/// a term is below both `1e-20` of the running sum and `floor`.
fn tail_terms(w: Weight, alpha: &AlphaIndex, from: usize, floor: f64) -> Vec<f64> {
    let d = alpha.dim();
    let c = SUP_PHI.powi(2 * d as i32);
    let mut terms = Vec::new();
    let mut acc = 0.0;
    let mut prev = f64::INFINITY;
    let mut n = from;
    loop {
        let term = c * shell_count(d, n) * w.eval(eigenvalue(n, alpha));
        terms.push(term);
        acc += term;
        if term <= prev && ((term <= 1e-20 * acc && term <= floor) || term < 1e-300) {
            break;
        }
        prev = term;
        n += 1;
        if terms.len() > 50_000_000 {
            break;
        }
    }
    terms
}

/// Upper bound on `Σ_{n>k} |w(λ_n) S_n(x,y)|` using `|φ_k| <= SUP_PHI`.
pub fn series_tail(w: Weight, alpha: &AlphaIndex, k: usize) -> f64 {
    let terms = tail_terms(w, alpha, k + 1, f64::INFINITY);
    compensated_sum(terms.iter().rev().copied())
}

/// Largest degree accepted by [`required_degree`].
pub const MAX_SERIES_DEGREE: usize = 1 << 21;

/// Series tail bounds for one weight, tabulated for every `K` whose bound
/// exceeds `min_tol`.
#[derive(Debug, Clone)]
pub struct TailTable {
    min_tol: f64,
    suffix: Vec<f64>,
}

impl TailTable {
    pub fn new(w: Weight, alpha: &AlphaIndex, min_tol: f64) -> Self {
        let terms = tail_terms(w, alpha, 0, 1e-8 * min_tol);
        let mut suffix = vec![0.0; terms.len() + 1];
        let mut acc = CompensatedSum::new();
        for (n, t) in terms.iter().enumerate().rev() {
            acc.add(*t);
            suffix[n] = acc.value();
        }
        Self { min_tol, suffix }
    }

    /// Tail bound after degree `k`.
    pub fn tail(&self, k: usize) -> f64 {
        self.suffix.get(k + 1).copied().unwrap_or(0.0)
    }

    /// Smallest `K` with `tail(K) <= abs_tol`.
    pub fn degree_for(&self, abs_tol: f64) -> Result<usize> {
        if !(abs_tol >= self.min_tol) {
            return Err(Error::InvalidArgument(format!(
                "tolerance {abs_tol:e} below the tabulated floor {:e}",
                self.min_tol
            )));
        }
        let first = self.suffix.partition_point(|&s| s > abs_tol);
        let k = first.max(1) - 1;
        if k > MAX_SERIES_DEGREE {
            return Err(Error::TailUnresolved(format!("series needs degree {k} for tolerance {abs_tol:e}")));
        }
        Ok(k)
    }
}

/// Smallest `K` whose tail bound is at most `abs_tol`.
pub fn required_degree(w: Weight, alpha: &AlphaIndex, abs_tol: f64) -> Result<usize> {
    TailTable::new(w, alpha, abs_tol).degree_for(abs_tol)
}

/// `Σ_{n<=K} e^{−tλ_n} S_n(x,y)`.
pub fn heat_kernel_series(q: &KernelQuery, k: usize) -> Result<SeriesValue> {
    Ok(ShellSums::new(&q.alpha, &q.x, &q.y, k)?.heat(q.t, k))
}

/// `Σ_{n<=K} (t√λ_n)^m e^{−t√λ_n} S_n(x,y)`.
pub fn patm_series(q: &KernelQuery, k: usize) -> Result<SeriesValue> {
    Ok(ShellSums::new(&q.alpha, &q.x, &q.y, k)?.patm(q.t, q.m, k))
}

/// [`patm_series`] at the smallest degree whose tail bound is below `abs_tol`.
pub fn patm_series_auto(q: &KernelQuery, abs_tol: f64) -> Result<SeriesValue> {
    let k = required_degree(Weight::Poisson(q.t, q.m), &q.alpha, abs_tol)?;
    patm_series(q, k)
}

/// Gauss nodes per octave in the subordination integrals.
const U_NODES: usize = 16;
const MAX_OCTAVES: usize = 160;

/// `∫_0^∞ h(u) du`, split at `u = 1`. Below 1 the substitution `u = c/(8w)`
/// with `c = t² + |x−y|²` turns the Gaussian factor into `e^{−2w}`; both pieces
/// are integrated octave by octave until an octave adds less than `1e-17` relative.
fn u_integral<H: Fn(f64) -> f64>(h: H, c: f64) -> Result<f64> {
    let (gx, gw) = gauss_legendre(U_NODES);
    let octave = |lo: f64, g: &dyn Fn(f64) -> f64| -> f64 {
        let half = 0.5 * lo;
        let mid = 1.5 * lo;
        compensated_sum(gx.iter().zip(&gw).map(|(x, w)| half * w * g(mid + half * x)))
    };
    let mut total = CompensatedSum::new();
    let w0 = c / 8.0;
    let left = |w: f64| {
        let u = c / (8.0 * w);
        h(u) * c / (8.0 * w * w)
    };
    let mut done = false;
    let mut lo = w0;
    let mut prev = f64::INFINITY;
    for _ in 0..MAX_OCTAVES {
        let part = octave(lo, &left);
        if !part.is_finite() {
            return Err(Error::NonFinite { node: vec![c / (8.0 * lo)], value: part });
        }
        total.add(part);
        if lo >= 1.0 && part.abs() <= prev && part.abs() <= 1e-17 * total.value().abs() {
            done = true;
            break;
        }
        prev = part.abs();
        lo *= 2.0;
    }
    if !done {
        return Err(Error::TailUnresolved("small-u piece of the subordination integral".into()));
    }
    let mut done = false;
    let mut lo = 1.0;
    let mut prev = f64::INFINITY;
    for j in 0..MAX_OCTAVES {
        let part = octave(lo, &h);
        if !part.is_finite() {
            return Err(Error::NonFinite { node: vec![lo], value: part });
        }
        total.add(part);
        if j >= 1 && part.abs() <= prev && part.abs() <= 1e-17 * total.value().abs() {
            done = true;
            break;
        }
        prev = part.abs();
        lo *= 2.0;
    }
    if !done {
        return Err(Error::TailUnresolved("large-u piece of the subordination integral".into()));
    }
    Ok(total.value())
}

/// Poisson kernel `p_t(x,y) = (2√π)^{-1} ∫_0^∞ t e^{−t²/4u} G_u(x,y) u^{−3/2} du`.
pub fn poisson_kernel_subordination(q: &KernelQuery) -> Result<f64> {
    q.require_kernel_safe()?;
    let t = q.t;
    let c = t * t + q.distance().powi(2);
    let pref = t / (2.0 * PI.sqrt());
    u_integral(
        |u| {
            let ln = -t * t / (4.0 * u) + ln_heat_closed(u, &q.x, &q.y, &q.alpha) - 1.5 * u.ln();
            pref * ln.exp()
        },
        c,
    )
}

/// Physicists' Hermite polynomial `H_j(s)` by recurrence.
pub fn hermite_h(j: u32, s: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * s);
    if j == 0 {
        return h0;
    }
    for i in 1..j {
        let h2 = 2.0 * s * h1 - 2.0 * i as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `∂_t^j e^{−t²/4u} = (−1)^j (4u)^{−j/2} H_j(t/(2√u)) e^{−t²/4u}`.
pub fn gaussian_t_derivative(j: u32, t: f64, u: f64) -> f64 {
    let s = t / (2.0 * u.sqrt());
    let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * (4.0 * u).powf(-(j as f64) / 2.0) * hermite_h(j, s) * (-s * s).exp()
}

/// `p_{t,m}(x,y) = ((−1)^{m+1} t^m / √π) ∫_0^∞ ∂_t^{m+1}(e^{−t²/4u}) G_u(x,y) u^{−1/2} du`.
pub fn patm_integral(q: &KernelQuery) -> Result<f64> {
    q.require_kernel_safe()?;
    let (t, m) = (q.t, q.m);
    let c = t * t + q.distance().powi(2);
    // The two sign factors cancel: integrand is t^m/√π (4u)^{-(m+1)/2} H_{m+1}(s) e^{-s²} G_u u^{-1/2}.
    let pref = t.powi(m as i32) / PI.sqrt();
    u_integral(
        |u| {
            let s = t / (2.0 * u.sqrt());
            let ln = -s * s + ln_heat_closed(u, &q.x, &q.y, &q.alpha)
                - 0.5 * u.ln()
                - 0.5 * (m as f64 + 1.0) * (4.0 * u).ln();
            pref * hermite_h(m + 1, s) * ln.exp()
        },
        c,
    )
}

/// `ln` of the Gaussian majorant: `e^{−dt} e^{−|x−y|²/2}` for `t > 1`,
/// `t^{−d/2} e^{−|x−y|²/(4t)}` for `t <= 1`.
pub fn ln_gaussian_bound(t: f64, x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if t > 1.0 {
        -d * t - 0.5 * r2
    } else {
        -0.5 * d * t.ln() - r2 / (4.0 * t)
    }
}

/// `G_t(x,y)` divided by its Gaussian majorant.
pub fn gaussian_bound_ratio(q: &KernelQuery) -> Result<f64> {
    q.require_kernel_safe()?;
    Ok((ln_heat_closed(q.t, &q.x, &q.y, &q.alpha) - ln_gaussian_bound(q.t, &q.x, &q.y)).exp())
}

/// `|p| (t+|x−y|)^{d+m} / t^m` for a kernel value `p = p_{t,m}(x,y)`.
pub fn decay_ratio(q: &KernelQuery, p: f64) -> f64 {
    let d = q.dim() as f64;
    let m = q.m as f64;
    p.abs() * ((d + m) * (q.t + q.distance()).ln() - m * q.t.ln()).exp()
}

/// [`decay_ratio`] of `p_{t,m}` computed by the integral representation.
pub fn decay_bound_ratio(q: &KernelQuery) -> Result<f64> {
    if q.m == 0 {
        return Err(Error::InvalidArgument("the decay bound needs m >= 1".into()));
    }
    Ok(decay_ratio(q, patm_integral(q)?))
}

/// Points `{b·i/n : i = 1..n}^d`, lexicographic.
pub fn lattice_points(d: usize, n: usize, b: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                (1..=n).map(move |i| {
                    let mut q = p.clone();
                    q.push(b * i as f64 / n as f64);
                    q
                })
            })
            .collect();
    }
    out
}

/// Unordered pairs `(x, y)` (with `x <= y` in lattice order) of a point list.
pub fn lattice_pairs(points: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in i..points.len() {
            out.push((points[i].clone(), points[j].clone()));
        }
    }
    out
}

/// The published sweep set for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub d: usize,
    pub alphas: Vec<AlphaIndex>,
    pub ts: Vec<f64>,
    pub lattice: usize,
    pub box_max: f64,
}

/// Alpha components used in sweeps.
pub const SWEEP_ALPHA_COMPONENTS: [f64; 4] = [-0.5, 0.5, 1.0, 2.3];
/// Time levels used in sweeps.
pub const SWEEP_TIMES: [f64; 4] = [0.05, 0.2, 1.0, 2.0];

impl SweepSpec {
    /// `d ∈ {1,2}`: every alpha with components from the component set, up to
    /// reordering (swapping axes maps `(a,b)` at `(x,y)` to `(b,a)` on the same lattice).
    pub fn pinned(d: usize) -> Result<Self> {
        let mut combos: Vec<Vec<f64>> = vec![vec![]];
        for _ in 0..d {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    let start = c.last().map_or(0, |l| SWEEP_ALPHA_COMPONENTS.iter().position(|a| a == l).unwrap_or(0));
                    SWEEP_ALPHA_COMPONENTS[start..].iter().map(move |&a| {
                        let mut n = c.clone();
                        n.push(a);
                        n
                    })
                })
                .collect();
        }
        let alphas = combos.into_iter().map(AlphaIndex::new).collect::<Result<_>>()?;
        Ok(Self { d, alphas, ts: SWEEP_TIMES.to_vec(), lattice: 5, box_max: 3.0 })
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        lattice_points(self.d, self.lattice, self.box_max)
    }
}

/// One row of a cross-route comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossRouteRow {
    pub d: usize,
    pub alpha: Vec<f64>,
    pub t: f64,
    pub m: u32,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub route1: f64,
    pub route2: f64,
    pub rel_err: f64,
    pub bound_ratio: f64,
}

/// Which pair of routes to compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Heat series at the given degree (route 1) against the closed form (route 2).
    HeatSeriesVsClosed(usize),
    /// Subordination integral (route 1) against the `m = 0` series (route 2).
    SubordinationVsSeries,
    /// Integral representation (route 1) against the series (route 2) for `m`.
    IntegralVsSeries(u32),
}

/// Relative accuracy targeted when the series is truncated adaptively.
pub const SERIES_REL_TOL: f64 = 1e-8;

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Evaluate both routes for every (alpha, x, y) pair and every time of the sweep.
pub fn cross_route_sweep(spec: &SweepSpec, route: Route) -> Result<Vec<CrossRouteRow>> {
    Ok(cross_route_sweep_many(spec, &[route])?.remove(0))
}

/// [`cross_route_sweep`] for several routes at once; series shell sums are
/// shared between routes. Rows are ordered by alpha, pair, then time.
pub fn cross_route_sweep_many(spec: &SweepSpec, routes: &[Route]) -> Result<Vec<Vec<CrossRouteRow>>> {
    let pairs = lattice_pairs(&spec.points());
    let mut out = vec![Vec::new(); routes.len()];
    for alpha in &spec.alphas {
        let integral_routes: Vec<usize> =
            (0..routes.len()).filter(|&r| !matches!(routes[r], Route::HeatSeriesVsClosed(_))).collect();
        let integral_rows = integral_sweep(alpha, &pairs, &spec.ts, routes, &integral_routes)?;
        for (slot, rows) in integral_routes.iter().zip(integral_rows) {
            out[*slot].extend(rows);
        }
        for (r, route) in routes.iter().enumerate() {
            if let Route::HeatSeriesVsClosed(k) = *route {
                let rows: Vec<Vec<CrossRouteRow>> = pairs
                    .par_iter()
                    .map(|(x, y)| heat_pair(alpha, x, y, &spec.ts, k))
                    .collect::<Result<_>>()?;
                out[r].extend(rows.into_iter().flatten());
            }
        }
    }
    Ok(out)
}

fn make_row(q: &KernelQuery, r1: f64, r2: f64, bound_ratio: f64) -> CrossRouteRow {
    CrossRouteRow {
        d: q.dim(),
        alpha: q.alpha.values().to_vec(),
        t: q.t,
        m: q.m,
        x: q.x.clone(),
        y: q.y.clone(),
        route1: r1,
        route2: r2,
        rel_err: rel_err(r1, r2),
        bound_ratio,
    }
}

fn heat_pair(alpha: &AlphaIndex, x: &[f64], y: &[f64], ts: &[f64], k: usize) -> Result<Vec<CrossRouteRow>> {
    let base = KernelQuery::new(1.0, 0, x.to_vec(), y.to_vec(), alpha.clone())?;
    let shells = ShellSums::new(alpha, x, y, k)?;
    ts.iter()
        .map(|&t| {
            let q = base.with_t(t);
            let s = shells.heat(t, k).value;
            let c = heat_kernel_closed(&q)?.value;
            Ok(make_row(&q, s, c, gaussian_bound_ratio(&q)?))
        })
        .collect()
}

fn route_m(route: Route) -> u32 {
    match route {
        Route::IntegralVsSeries(m) => m,
        _ => 0,
    }
}

/// Per-axis factors `φ_j(x_i) φ_j(y_i)` of the shell sums, held as spectra
/// when `d >= 2` so each pair costs one inverse transform.
struct AxisFactors {
    degree: usize,
    size: usize,
    factors: BTreeMap<(u64, u64, u64), Vec<f64>>,
    spectra: BTreeMap<(u64, u64, u64), Vec<Complex<f64>>>,
}

fn axis_key(a: f64, x: f64, y: f64) -> (u64, u64, u64) {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    (a.to_bits(), lo.to_bits(), hi.to_bits())
}

impl AxisFactors {
    fn new(alpha: &AlphaIndex, pairs: &[(Vec<f64>, Vec<f64>)], degree: usize) -> Result<Self> {
        let d = alpha.dim();
        let size = if d >= 2 { (d * degree + 1).next_power_of_two() } else { 0 };
        let mut keys = BTreeMap::new();
        for (x, y) in pairs {
            for i in 0..d {
                keys.insert(axis_key(alpha.values()[i], x[i], y[i]), (alpha.values()[i], x[i], y[i]));
            }
        }
        let mut columns: BTreeMap<(u64, u64), Vec<f64>> = BTreeMap::new();
        for &(a, x, y) in keys.values() {
            for v in [x, y] {
                if let std::collections::btree_map::Entry::Vacant(e) = columns.entry((a.to_bits(), v.to_bits())) {
                    e.insert(phi_column(degree, a, v)?);
                }
            }
        }
        let list: Vec<((u64, u64, u64), Vec<f64>)> = keys
            .iter()
            .map(|(key, &(a, x, y))| {
                let cx = &columns[&(a.to_bits(), x.to_bits())];
                let cy = &columns[&(a.to_bits(), y.to_bits())];
                (*key, cx.iter().zip(cy).map(|(u, v)| u * v).collect())
            })
            .collect();
        let (factors, spectra) = if d >= 2 {
            let spectra = list.par_iter().map(|(k, f)| (*k, real_spectrum(f, size))).collect();
            (BTreeMap::new(), spectra)
        } else {
            (list.into_iter().collect(), BTreeMap::new())
        };
        Ok(Self { degree, size, factors, spectra })
    }

    fn shell_sums(&self, alpha: &AlphaIndex, x: &[f64], y: &[f64]) -> Vec<f64> {
        let keys: Vec<_> = (0..alpha.dim()).map(|i| axis_key(alpha.values()[i], x[i], y[i])).collect();
        if keys.len() == 1 {
            return self.factors[&keys[0]].clone();
        }
        let mut acc = self.spectra[&keys[0]].clone();
        for key in &keys[1..] {
            for (u, v) in acc.iter_mut().zip(&self.spectra[key]) {
                *u *= v;
            }
        }
        inverse_spectrum(acc, self.size, self.degree + 1)
    }
}

fn integral_sweep(
    alpha: &AlphaIndex,
    pairs: &[(Vec<f64>, Vec<f64>)],
    ts: &[f64],
    routes: &[Route],
    which: &[usize],
) -> Result<Vec<Vec<CrossRouteRow>>> {
    if which.is_empty() {
        return Ok(Vec::new());
    }
    // values[pair][route][t]
    let values: Vec<Vec<Vec<f64>>> = pairs
        .par_iter()
        .map(|(x, y)| {
            let base = KernelQuery::new(1.0, 0, x.clone(), y.clone(), alpha.clone())?;
            which
                .iter()
                .map(|&r| {
                    ts.iter()
                        .map(|&t| {
                            let q = base.with_t(t).with_m(route_m(routes[r]));
                            match routes[r] {
                                Route::SubordinationVsSeries => poisson_kernel_subordination(&q),
                                _ => patm_integral(&q),
                            }
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let tol = |v: f64| SERIES_REL_TOL * v.abs().max(1e-300);
    // degrees[pair][route][t]
    let mut degrees = vec![vec![vec![0usize; ts.len()]; which.len()]; pairs.len()];
    let mut weights: Vec<Vec<Vec<f64>>> = Vec::with_capacity(which.len());
    for (ri, &r) in which.iter().enumerate() {
        let m = route_m(routes[r]);
        let mut per_t = Vec::with_capacity(ts.len());
        for (ti, &t) in ts.iter().enumerate() {
            let min_tol = values.iter().map(|v| tol(v[ri][ti])).fold(f64::INFINITY, f64::min);
            let table = TailTable::new(Weight::Poisson(t, m), alpha, min_tol);
            let mut kmax = 0;
            for (pi, v) in values.iter().enumerate() {
                let k = table.degree_for(tol(v[ri][ti]))?;
                degrees[pi][ri][ti] = k;
                kmax = kmax.max(k);
            }
            per_t.push((0..=kmax).map(|n| poisson_symbol(t, m, eigenvalue(n, alpha))).collect());
        }
        weights.push(per_t);
    }
    let kmax = degrees.iter().flatten().flatten().copied().max().unwrap_or(0);
    let factors = AxisFactors::new(alpha, pairs, kmax)?;
    let rows: Vec<Vec<Vec<CrossRouteRow>>> = pairs
        .par_iter()
        .enumerate()
        .map(|(pi, (x, y))| {
            let sums = factors.shell_sums(alpha, x, y);
            let base = KernelQuery::new(1.0, 0, x.clone(), y.clone(), alpha.clone())?;
            Ok(which
                .iter()
                .enumerate()
                .map(|(ri, &r)| {
                    ts.iter()
                        .enumerate()
                        .map(|(ti, &t)| {
                            let q = base.with_t(t).with_m(route_m(routes[r]));
                            let k = degrees[pi][ri][ti];
                            let w = &weights[ri][ti];
                            let s = compensated_sum((0..=k).map(|n| w[n] * sums[n]));
                            let v = values[pi][ri][ti];
                            make_row(&q, v, s, decay_ratio(&q, s))
                        })
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); which.len()];
    for per_pair in rows {
        for (ri, r) in per_pair.into_iter().enumerate() {
            out[ri].extend(r);
        }
    }
    Ok(out)
}

/// CSV with columns `d, alpha…, t, m, x…, y…, value_route1, value_route2, rel_err, bound_ratio`.
pub fn cross_route_csv(rows: &[CrossRouteRow]) -> String {
    let d = rows.first().map(|r| r.d).unwrap_or(1);
    let mut out = String::from("d");
    for i in 1..=d {
        let _ = write!(out, ",alpha_{i}");
    }
    out.push_str(",t,m");
    for i in 1..=d {
        let _ = write!(out, ",x_{i}");
    }
    for i in 1..=d {
        let _ = write!(out, ",y_{i}");
    }
    out.push_str(",value_route1,value_route2,rel_err,bound_ratio\n");
    for r in rows {
        let _ = write!(out, "{}", r.d);
        for a in &r.alpha {
            let _ = write!(out, ",{a:.16e}");
        }
        let _ = write!(out, ",{:.16e},{}", r.t, r.m);
        for v in r.x.iter().chain(&r.y) {
            let _ = write!(out, ",{v:.16e}");
        }
        let _ = writeln!(out, ",{:.16e},{:.16e},{:.16e},{:.16e}", r.route1, r.route2, r.rel_err, r.bound_ratio);
    }
    out
}

/// Grid for bound sweeps: geometric times `2^{j/r}` for `t_min <= t <= t_max`
/// and `n` equispaced points per axis on `[x_min, box_max]` (endpoints included).
/// The sup is taken over the continuous domain spanned by the grid: the best
/// sample is polished by coordinate-wise golden-section search in
/// `(ln t, x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundGrid {
    pub t_min_log2: i32,
    pub t_max_log2: i32,
    pub per_octave: u32,
    pub lattice: usize,
    pub x_min: f64,
    pub box_max: f64,
}

impl BoundGrid {
    /// Times `2^-5..2^2` and the hull `[0.6, 3]^d` of the published sweep lattice.
    pub fn standard() -> Self {
        Self { t_min_log2: -5, t_max_log2: 2, per_octave: 1, lattice: 5, x_min: 0.6, box_max: 3.0 }
    }

    /// Twice the times per octave and halved lattice spacing (nested).
    pub fn refined(&self) -> Self {
        Self { per_octave: 2 * self.per_octave, lattice: 2 * self.lattice - 1, ..*self }
    }

    pub fn times(&self) -> Vec<f64> {
        let r = self.per_octave as i32;
        (self.t_min_log2 * r..=self.t_max_log2 * r).map(|j| 2f64.powf(j as f64 / r as f64)).collect()
    }

    pub fn points(&self, d: usize) -> Vec<Vec<f64>> {
        let n = self.lattice.max(2);
        let h = (self.box_max - self.x_min) / (n - 1) as f64;
        let mut out = vec![vec![]];
        for _ in 0..d {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..n).map(move |i| {
                        let mut q = p.clone();
                        q.push(self.x_min + h * i as f64);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

pub type ArgMax = (f64, Vec<f64>, Vec<f64>);

/// Sup of a bound ratio on a sweep grid and its refinement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub alpha: Vec<f64>,
    pub m: u32,
    pub sup_coarse: f64,
    pub sup_fine: f64,
    pub rel_change: f64,
    /// `(t, x, y)` where the fine sup is attained.
    pub argmax: ArgMax,
    pub stable: bool,
}

/// Tolerated relative change of a sup ratio under refinement.
pub const REFINEMENT_TOL: f64 = 0.05;

/// Most coordinate sweeps of the golden-section polish.
const POLISH_SWEEPS: usize = 10;
/// Relative gain below which the polish stops.
const POLISH_GAIN: f64 = 1e-7;

fn sweep_sup<F>(alpha: &AlphaIndex, grid: &BoundGrid, ratio: F) -> Result<(f64, ArgMax)>
where
    F: Fn(&KernelQuery) -> Result<f64> + Sync,
{
    let d = alpha.dim();
    let pairs = lattice_pairs(&grid.points(d));
    let ts = grid.times();
    let jobs: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|p| (0..ts.len()).map(move |t| (p, t))).collect();
    let vals: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, ti)| {
            let q = KernelQuery::new(ts[ti], 0, pairs[p].0.clone(), pairs[p].1.clone(), alpha.clone())?;
            ratio(&q)
        })
        .collect::<Result<_>>()?;
    // One start per time level: the best sample at that level.
    let order: Vec<usize> = (0..ts.len())
        .map(|ti| {
            (0..pairs.len())
                .map(|p| p * ts.len() + ti)
                .fold(ti, |b, i| if vals[i] > vals[b] { i } else { b })
        })
        .collect();
    let lo: Vec<f64> = std::iter::once(grid.t_min_log2 as f64 * std::f64::consts::LN_2)
        .chain(std::iter::repeat_n(grid.x_min, 2 * d))
        .collect();
    let hi: Vec<f64> = std::iter::once(grid.t_max_log2 as f64 * std::f64::consts::LN_2)
        .chain(std::iter::repeat_n(grid.box_max, 2 * d))
        .collect();
    let steps: Vec<f64> = std::iter::once(std::f64::consts::LN_2 / grid.per_octave as f64)
        .chain(std::iter::repeat_n((grid.box_max - grid.x_min) / (grid.lattice.max(2) - 1) as f64, 2 * d))
        .collect();
    let eval = |z: &[f64]| -> f64 {
        KernelQuery::new(z[0].exp(), 0, z[1..=d].to_vec(), z[d + 1..].to_vec(), alpha.clone())
            .and_then(|q| ratio(&q))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let polished: Vec<(f64, Vec<f64>)> = order
        .par_iter()
        .map(|&start| {
            let (p, ti) = jobs[start];
            // Coordinates: ln t, then x, then y.
            let mut z: Vec<f64> =
                std::iter::once(ts[ti].ln()).chain(pairs[p].0.iter().copied()).chain(pairs[p].1.iter().copied()).collect();
            let mut sup = vals[start];
            for _ in 0..POLISH_SWEEPS {
                let before = sup;
                for c in 0..z.len() {
                    let (a, b) = ((z[c] - steps[c]).max(lo[c]), (z[c] + steps[c]).min(hi[c]));
                    let mut trial = z.clone();
                    let (zc, v) = crate::numerics::golden_max(
                        |s| {
                            trial[c] = s;
                            eval(&trial)
                        },
                        a,
                        b,
                        1e-6,
                    );
                    if v > sup {
                        sup = v;
                        z[c] = zc;
                    }
                }
                if sup <= before * (1.0 + POLISH_GAIN) {
                    break;
                }
            }
            (sup, z)
        })
        .collect();
    let (sup, z) = polished
        .into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |acc, c| if c.0 > acc.0 { c } else { acc });
    Ok((sup, (z[0].exp(), z[1..=d].to_vec(), z[d + 1..].to_vec())))
}

fn bound_report<F>(alpha: &AlphaIndex, m: u32, grid: &BoundGrid, ratio: F) -> Result<BoundReport>
where
    F: Fn(&KernelQuery) -> Result<f64> + Sync,
{
    let (sup_coarse, _) = sweep_sup(alpha, grid, &ratio)?;
    let (sup_fine, argmax) = sweep_sup(alpha, &grid.refined(), &ratio)?;
    let rel_change = (sup_fine - sup_coarse).abs() / sup_coarse.abs().max(f64::MIN_POSITIVE);
    Ok(BoundReport {
        alpha: alpha.values().to_vec(),
        m,
        sup_coarse,
        sup_fine,
        rel_change,
        argmax,
        stable: sup_fine.is_finite() && rel_change < REFINEMENT_TOL,
    })
}

/// Sup of `G_t / gaussian bound` over the sweep, coarse and refined.
pub fn gaussian_bound_check(alpha: &AlphaIndex, grid: &BoundGrid) -> Result<BoundReport> {
    bound_report(alpha, 0, grid, gaussian_bound_ratio)
}

/// Sup of `|p_{t,m}| (t+|x−y|)^{d+m}/t^m` over the sweep, coarse and refined.
pub fn decay_bound_check(alpha: &AlphaIndex, m: u32, grid: &BoundGrid) -> Result<BoundReport> {
    if m == 0 {
        return Err(Error::InvalidArgument("the decay bound needs m >= 1".into()));
    }
    bound_report(alpha, m, grid, |q| decay_bound_ratio(&q.with_m(m)))
}

/// Finite-difference check of `p_{t,m} = (−t)^m ∂_t^m p_t` on the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub finite_difference: f64,
    pub series: f64,
    pub rel_err: f64,
}

/// Fourth-order central differences of the `m = 0` series in `t` (step `h`)
/// against the `m`-series; `m` in `1..=3`.
pub fn patm_derivative_check(q: &KernelQuery, k: usize, h: f64) -> Result<DerivativeCheck> {
    let shells = ShellSums::new(&q.alpha, &q.x, &q.y, k)?;
    let p = |t: f64| shells.patm(t, 0, k).value;
    let t = q.t;
    if h <= 0.0 || 3.0 * h >= t {
        return Err(Error::InvalidArgument(format!("step {h} must lie in (0, t/3)")));
    }
    let deriv = match q.m {
        1 => (-p(t + 2.0 * h) + 8.0 * p(t + h) - 8.0 * p(t - h) + p(t - 2.0 * h)) / (12.0 * h),
        2 => (-p(t + 2.0 * h) + 16.0 * p(t + h) - 30.0 * p(t) + 16.0 * p(t - h) - p(t - 2.0 * h)) / (12.0 * h * h),
        3 => {
            (-p(t + 3.0 * h) + 8.0 * p(t + 2.0 * h) - 13.0 * p(t + h) + 13.0 * p(t - h) - 8.0 * p(t - 2.0 * h)
                + p(t - 3.0 * h))
                / (8.0 * h * h * h)
        }
        m => return Err(Error::InvalidArgument(format!("finite differences implemented for m in 1..=3, got {m}"))),
    };
    let fd = (-t).powi(q.m as i32) * deriv;
    let series = shells.patm(t, q.m, k).value;
    Ok(DerivativeCheck { finite_difference: fd, series, rel_err: rel_err(fd, series) })
}

/// `∫ G_s(x,z) G_t(z,y) dz` against `G_{s+t}(x,y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemigroupCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

pub fn chapman_kolmogorov_check(s: f64, t: f64, x: &[f64], y: &[f64], alpha: &AlphaIndex) -> Result<SemigroupCheck> {
    let d = alpha.dim();
    let reach = x.iter().chain(y).cloned().fold(0.0, f64::max) + 12.0;
    let width = (s.min(t).sqrt() / 2.0).min(0.5);
    let grid = QuadGrid::new(d, reach, width, 12, true);
    let lhs = integrate(
        |z| (ln_heat_closed(s, x, z, alpha) + ln_heat_closed(t, z, y, alpha)).exp(),
        &grid,
    )?;
    let rhs = ln_heat_closed(s + t, x, y, alpha).exp();
    Ok(SemigroupCheck { lhs, rhs, rel_err: rel_err(lhs, rhs) })
}

/// `φ_0^α(x) φ_0^α(y) e^{-tλ_0}`: the single-term series used as a sanity value.
pub fn ground_state_term(t: f64, x: &[f64], y: &[f64], alpha: &AlphaIndex) -> f64 {
    let mut v = (-t * eigenvalue(0, alpha)).exp();
    for ((&xi, &yi), &a) in x.iter().zip(y).zip(alpha.values()) {
        let c = norm_const(0, a);
        v *= c * c * (xi * yi).powf(a + 0.5) * (-(xi * xi + yi * yi) / 2.0).exp();
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(t: f64, m: u32, x: &[f64], y: &[f64], a: &[f64]) -> KernelQuery {
        KernelQuery::new(t, m, x.to_vec(), y.to_vec(), AlphaIndex::new(a.to_vec()).unwrap()).unwrap()
    }

    /// Even reflection of the Mehler kernel for `−d²/dx² + x²`.
    fn mehler_reflected(t: f64, x: f64, y: f64) -> f64 {
        let r = (-2.0 * t).exp();
        let mehler = |x: f64, y: f64| {
            (-t).exp() / (PI * (1.0 - r * r)).sqrt()
                * (-((1.0 + r * r) * (x * x + y * y) - 4.0 * r * x * y) / (2.0 * (1.0 - r * r))).exp()
        };
        mehler(x, y) + mehler(x, -y)
    }

    #[test]
    fn closed_form_matches_mehler() {
        for &t in &[0.05, 0.3, 1.0, 4.0] {
            for &(x, y) in &[(0.3, 0.4), (1.0, 2.5), (2.0, 2.0)] {
                let g = heat_kernel_closed(&q(t, 0, &[x], &[y], &[-0.5])).unwrap().value;
                let o = mehler_reflected(t, x, y);
                assert!((g - o).abs() < 1e-12 * o, "t={t} x={x} y={y}: {g} vs {o}");
            }
        }
    }

    #[test]
    fn closed_form_symmetric_and_saturating() {
        let a = q(0.7, 0, &[0.4, 1.3], &[2.2, 0.9], &[0.5, 2.3]);
        let b = q(0.7, 0, &[2.2, 0.9], &[0.4, 1.3], &[0.5, 2.3]);
        assert_eq!(heat_kernel_closed(&a).unwrap().value, heat_kernel_closed(&b).unwrap().value);
        let far = heat_kernel_closed(&q(1e4, 0, &[1.0], &[1.0], &[0.5])).unwrap();
        assert!(far.saturated && far.value == 0.0 && far.ln_value.is_finite());
    }

    #[test]
    fn series_single_term_and_agreement() {
        let qq = q(0.4, 0, &[0.8], &[1.7], &[1.0]);
        let s0 = heat_kernel_series(&qq, 0).unwrap().value;
        assert!((s0 - ground_state_term(0.4, &[0.8], &[1.7], &qq.alpha)).abs() < 1e-15);
        for &t in &[0.2, 1.0, 2.0] {
            let qq = q(t, 0, &[0.6, 2.4], &[1.2, 1.8], &[0.5, 2.3]);
            let s = heat_kernel_series(&qq, 60).unwrap();
            let c = heat_kernel_closed(&qq).unwrap().value;
            assert!((s.value - c).abs() < 1e-6 * c, "t={t}");
            assert!((s.value - c).abs() <= s.tail_bound + 1e-14);
        }
    }

    #[test]
    fn series_cauchy_differences_decay() {
        let qq = q(0.3, 0, &[1.1], &[1.1], &[0.5]);
        let shells = ShellSums::new(&qq.alpha, &qq.x, &qq.y, 40).unwrap();
        let diffs: Vec<f64> = (10..30).map(|k| (shells.heat(0.3, k + 1).value - shells.heat(0.3, k).value).abs()).collect();
        for (i, d) in diffs.iter().enumerate() {
            let k = 11 + i;
            assert!(*d <= SUP_PHI * SUP_PHI * (-0.3 * eigenvalue(k, &qq.alpha)).exp());
        }
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let a: Vec<f64> = (0..1500).map(|i| ((i * 31 % 17) as f64 - 8.0) / 9.0).collect();
        let b: Vec<f64> = (0..1500).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        let fast = convolve_truncated(&a, &b, 1499);
        for n in (0..1500).step_by(97) {
            let direct: f64 = (0..=n).map(|j| a[j] * b[n - j]).sum();
            assert!((fast[n] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn subordination_scalar_identity() {
        // the scalar identity behind the subordination formula
        for &(t, a) in &[(0.3f64, 3.0f64), (1.0, 14.0), (2.0, 1.0)] {
            let c = t * t;
            let v = u_integral(|u| t / (2.0 * PI.sqrt()) * (-t * t / (4.0 * u) - u * a).exp() * u.powf(-1.5), c).unwrap();
            assert!((v - (-t * a.sqrt()).exp()).abs() < 1e-12, "t={t} a={a}: {v}");
        }
    }

    #[test]
    fn hermite_gaussian_derivatives() {
        let (t, u, h) = (0.7, 0.3, 1e-3);
        let g = |t: f64| (-t * t / (4.0 * u)).exp();
        let fd1 = (g(t + h) - g(t - h)) / (2.0 * h);
        assert!((gaussian_t_derivative(1, t, u) - fd1).abs() < 1e-6);
        let fd2 = (g(t + h) - 2.0 * g(t) + g(t - h)) / (h * h);
        assert!((gaussian_t_derivative(2, t, u) - fd2).abs() < 1e-5);
        assert_eq!(hermite_h(3, 0.5), 8.0 * 0.125 - 12.0 * 0.5);
    }

    #[test]
    fn subordination_matches_series() {
        for &(t, x, y) in &[(0.2, 0.6, 1.8), (1.0, 1.2, 1.2), (2.0, 0.6, 3.0)] {
            let qq = q(t, 0, &[x], &[y], &[0.5]);
            let s = poisson_kernel_subordination(&qq).unwrap();
            let ser = patm_series_auto(&qq, 1e-9 * s).unwrap();
            assert!(s > 0.0);
            assert!((s - ser.value).abs() < 1e-6 * s, "t={t}: {s} vs {}", ser.value);
            let m0 = patm_integral(&qq).unwrap();
            assert!((m0 - s).abs() < 1e-10 * s);
        }
    }

    #[test]
    fn integral_matches_series_and_derivatives() {
        let base = q(0.5, 0, &[0.9, 1.5], &[1.4, 0.6], &[1.0, -0.5]);
        for m in 1..=3 {
            let qq = base.with_m(m);
            let v = patm_integral(&qq).unwrap();
            let s = patm_series_auto(&qq, 1e-9 * v.abs()).unwrap();
            assert!((v - s.value).abs() < 1e-6 * v.abs(), "m={m}: {v} vs {}", s.value);
            let fd = patm_derivative_check(&qq, s.degree, 1e-2).unwrap();
            assert!(fd.rel_err < 1e-4, "m={m}: {fd:?}");
        }
    }

    #[test]
    fn poisson_decreasing_for_large_t() {
        let base = q(1.0, 0, &[1.0], &[2.0], &[1.0]);
        let vals: Vec<f64> = [2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&t| poisson_kernel_subordination(&base.with_t(t)).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn chapman_kolmogorov() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let c = chapman_kolmogorov_check(0.3, 0.5, &[1.0], &[1.6], &alpha).unwrap();
        assert!(c.rel_err < 1e-5, "{c:?}");
        let alpha = AlphaIndex::new(vec![1.0, -0.5]).unwrap();
        let c = chapman_kolmogorov_check(0.4, 0.4, &[0.5, 1.0], &[1.2, 0.7], &alpha).unwrap();
        assert!(c.rel_err < 1e-5, "{c:?}");
    }

    #[test]
    fn gaussian_ratio_limits() {
        let a = AlphaIndex::new(vec![0.5]).unwrap();
        let small: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&t| gaussian_bound_ratio(&KernelQuery::new(t, 0, vec![1.0], vec![1.0], a.clone()).unwrap()).unwrap())
            .collect();
        for r in &small {
            assert!((r - 1.0 / (4.0 * PI).sqrt()).abs() < 0.05);
        }
        let far = gaussian_bound_ratio(&KernelQuery::new(2.0, 0, vec![10.0], vec![40.0], a).unwrap()).unwrap();
        assert!(far < 1e-10);
    }

    #[test]
    fn decay_ratio_vanishes_for_large_t() {
        let base = q(1.0, 1, &[1.0], &[1.5], &[0.5]);
        let r: Vec<f64> = [4.0, 16.0, 64.0].iter().map(|&t| decay_bound_ratio(&base.with_t(t)).unwrap()).collect();
        assert!(r[2] < r[1] && r[1] < r[0] && r[2] < 1e-20);
    }

    #[test]
    fn required_degree_respects_tolerance() {
        let alpha = AlphaIndex::uniform(0.5, 2).unwrap();
        let w = Weight::Poisson(0.5, 2);
        let k = required_degree(w, &alpha, 1e-8).unwrap();
        assert!(series_tail(w, &alpha, k) <= 1e-8);
        assert!(series_tail(w, &alpha, k - 1) > 1e-8);
    }

    #[test]
    fn csv_layout() {
        let spec = SweepSpec { d: 1, alphas: vec![AlphaIndex::uniform(0.5, 1).unwrap()], ts: vec![0.5], lattice: 2, box_max: 3.0 };
        let rows = cross_route_sweep(&spec, Route::HeatSeriesVsClosed(60)).unwrap();
        assert_eq!(rows.len(), 3);
        let csv = cross_route_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "d,alpha_1,t,m,x_1,y_1,value_route1,value_route2,rel_err,bound_ratio");
        assert_eq!(lines.count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn heat_symmetric_positive(t in 0.01f64..5.0, x in 0.05f64..4.0, y in 0.05f64..4.0, a in -0.5f64..3.0) {
            let g1 = heat_kernel_closed(&q(t, 0, &[x], &[y], &[a])).unwrap().value;
            let g2 = heat_kernel_closed(&q(t, 0, &[y], &[x], &[a])).unwrap().value;
            prop_assert_eq!(g1, g2);
            prop_assert!(g1 > 0.0);
        }
    }

    #[test]
    fn bound_grid_refinement_is_nested() {
        let g = BoundGrid::standard();
        let (coarse, fine) = (g.points(2), g.refined().points(2));
        assert_eq!((coarse.len(), fine.len()), (25, 81));
        for p in &coarse {
            assert!(fine.iter().any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-15)));
        }
        let (tc, tf) = (g.times(), g.refined().times());
        assert!(tc.iter().all(|t| tf.iter().any(|s| (s - t).abs() < 1e-15 * t)));
    }

    #[test]
    fn gaussian_bound_sup_is_refinement_stable() {
        let alpha = AlphaIndex::new(vec![1.0]).unwrap();
        let r = gaussian_bound_check(&alpha, &BoundGrid::standard()).unwrap();
        assert!(r.stable && r.sup_fine.is_finite(), "{r:?}");
        let r = decay_bound_check(&alpha, 1, &BoundGrid::standard()).unwrap();
        assert!(r.stable, "{r:?}");
    }
}
