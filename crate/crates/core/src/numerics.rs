//! Quadrature on truncated boxes of the positive orthant and on the dyadic
//! `t`-axis, with fixed-order compensated reductions.
//!
//! Integrand evaluations may run in parallel, but every reduction walks the
//! node list in its stored order, so results do not depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_ur};

use crate::error::{Error, Result};

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Left-to-right compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Double-double number `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    pub fn from_f64(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn sum(a: f64, b: f64) -> Self {
        let (s, e) = two_sum(a, b);
        Dd { hi: s, lo: e }
    }

    pub fn prod(a: f64, b: f64) -> Self {
        let p = a * b;
        Dd { hi: p, lo: a.mul_add(b, -p) }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = Dd::prod(self.hi, o.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }

    pub fn scale(self, v: f64) -> Dd {
        let p = Dd::prod(self.hi, v);
        quick_two_sum(p.hi, p.lo + self.lo * v)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.scale(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.scale(q2));
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2).add(Dd::from_f64(q3))
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::from_f64(0.0);
        }
        let q = self.hi.sqrt();
        let r = self.sub(Dd::prod(q, q));
        quick_two_sum(q, r.hi / (2.0 * q))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = x;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Panelled Gauss–Legendre rule on one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisRule {
    pub panels: Vec<(f64, f64)>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AxisRule {
    /// Uniform panels of width at most `panel_width` on `[lo, hi]`; when `graded`
    /// the first panel is further split geometrically (ratio 1/2) down to `2^-20`.
    pub fn new(lo: f64, hi: f64, panel_width: f64, nodes_per_panel: usize, graded: bool) -> Self {
        assert!(hi > lo && panel_width > 0.0 && nodes_per_panel > 0);
        let count = ((hi - lo) / panel_width).ceil().max(1.0) as usize;
        let h = (hi - lo) / count as f64;
        let mut panels = Vec::new();
        if graded {
            let floor = 2f64.powi(-20);
            let mut cuts = vec![lo + h];
            let mut w = h;
            while w > floor {
                w *= 0.5;
                cuts.push(lo + w);
            }
            cuts.push(lo);
            cuts.reverse();
            for pair in cuts.windows(2) {
                panels.push((pair[0], pair[1]));
            }
        } else {
            panels.push((lo, lo + h));
        }
        for i in 1..count {
            let a = lo + i as f64 * h;
            let b = if i + 1 == count { hi } else { lo + (i + 1) as f64 * h };
            panels.push((a, b));
        }
        let (gx, gw) = gauss_legendre(nodes_per_panel);
        let mut nodes = Vec::with_capacity(panels.len() * nodes_per_panel);
        let mut weights = Vec::with_capacity(panels.len() * nodes_per_panel);
        for &(a, b) in &panels {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        Self { panels, nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Tensor quadrature rule on a box (by default `(0, x_max]^d`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadGrid {
    pub axes: Vec<AxisRule>,
    pub x_max: f64,
    pub graded: bool,
}

/// Materialized tensor nodes: point `i` is `coords[i*d..(i+1)*d]`.
#[derive(Debug, Clone)]
pub struct TensorNodes {
    pub dim: usize,
    pub coords: Vec<f64>,
    pub weights: Vec<f64>,
    /// Per-node axis indices, `axis_index[i*d + j]` indexes `axes[j].nodes`.
    pub axis_index: Vec<usize>,
}

impl TensorNodes {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
}

impl QuadGrid {
    /// Default panel width.
    pub const PANEL_WIDTH: f64 = 0.5;
    /// Default Gauss nodes per panel.
    pub const NODES_PER_PANEL: usize = 12;

    pub fn new(d: usize, x_max: f64, panel_width: f64, nodes_per_panel: usize, graded: bool) -> Self {
        let axis = AxisRule::new(0.0, x_max, panel_width, nodes_per_panel, graded);
        Self { axes: vec![axis; d], x_max, graded }
    }

    /// Graded grid on `(0, x_max]^d` with the default panelling.
    pub fn standard(d: usize, x_max: f64) -> Self {
        Self::new(d, x_max, Self::PANEL_WIDTH, Self::NODES_PER_PANEL, true)
    }

    /// Grid adequate for eigenfunctions up to shell `degree` with eigenvalue scale
    /// `lambda_max`: truncation beyond the turning point `sqrt(lambda_max)` plus 8.
    pub fn for_spectrum(d: usize, lambda_max: f64) -> Self {
        Self::standard(d, (lambda_max.max(1.0).sqrt() + 8.0).ceil())
    }

    /// Tensor rule on an arbitrary box `[lo, hi]`.
    pub fn on_box(lo: &[f64], hi: &[f64], panel_width: f64, nodes_per_panel: usize, graded: bool) -> Self {
        let axes: Vec<AxisRule> = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| AxisRule::new(a, b, panel_width, nodes_per_panel, graded && a == 0.0))
            .collect();
        let x_max = hi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self { axes, x_max, graded }
    }

    /// Same layout with twice the panels per axis.
    pub fn refined(&self) -> Self {
        let axes = self
            .axes
            .iter()
            .map(|ax| {
                let (lo, _) = ax.panels[0];
                let (_, hi) = *ax.panels.last().unwrap();
                let n = ax.nodes.len() / ax.panels.len();
                let uniform = ax.panels.iter().map(|(a, b)| b - a).fold(0.0, f64::max);
                AxisRule::new(lo, hi, 0.5 * uniform, n, self.graded && lo == 0.0)
            })
            .collect();
        Self { axes, x_max: self.x_max, graded: self.graded }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nodes in lexicographic axis order (last axis fastest).
    pub fn tensor(&self) -> TensorNodes {
        let d = self.dim();
        let n = self.len();
        let mut coords = Vec::with_capacity(n * d);
        let mut weights = Vec::with_capacity(n);
        let mut axis_index = Vec::with_capacity(n * d);
        let mut idx = vec![0usize; d];
        for _ in 0..n {
            let mut w = 1.0;
            for (j, &i) in idx.iter().enumerate() {
                coords.push(self.axes[j].nodes[i]);
                axis_index.push(i);
                w *= self.axes[j].weights[i];
            }
            weights.push(w);
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] < self.axes[j].len() {
                    break;
                }
                idx[j] = 0;
            }
        }
        TensorNodes { dim: d, coords, weights, axis_index }
    }
}

/// Evaluate `f` at every node (in parallel), failing on the first non-finite value in node order.
pub fn evaluate_nodes<F>(f: F, nodes: &TensorNodes) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = (0..nodes.len()).into_par_iter().map(|i| f(nodes.point(i))).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: nodes.point(i).to_vec(), value: values[i] });
    }
    Ok(values)
}

/// Tensor Gauss–Legendre estimate of the integral of `f` over the grid box.
pub fn integrate<F>(f: F, grid: &QuadGrid) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let nodes = grid.tensor();
    let values = evaluate_nodes(f, &nodes)?;
    Ok(compensated_sum(values.iter().zip(&nodes.weights).map(|(v, w)| v * w)))
}

/// `<f, g>` in `L^2(R^d_+, dx)` restricted to the grid box.
pub fn inner_product<F, G>(f: F, g: G, grid: &QuadGrid) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    integrate(|x| f(x) * g(x), grid)
}

/// Gauss nodes on the dyadic `t`-axis realizing `∫ h(t) dt/t` over `[2^nu_min, 2^nu_max]`.
///
/// Each octave `[2^j, 2^{j+1}]` carries a Gauss–Legendre rule in `s = ln t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TGrid {
    pub nu_min: i32,
    pub nu_max: i32,
    pub nodes_per_octave: usize,
    #[serde(skip)]
    nodes: Vec<f64>,
    #[serde(skip)]
    weights: Vec<f64>,
}

impl TGrid {
    pub fn new(nu_min: i32, nu_max: i32, nodes_per_octave: usize) -> Self {
        assert!(nu_max > nu_min && nodes_per_octave > 0);
        let (gx, gw) = gauss_legendre(nodes_per_octave);
        let ln2 = std::f64::consts::LN_2;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for j in nu_min..nu_max {
            let mid = (j as f64 + 0.5) * ln2;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push((mid + 0.5 * ln2 * x).exp());
                weights.push(0.5 * ln2 * w);
            }
        }
        Self { nu_min, nu_max, nodes_per_octave, nodes, weights }
    }

    /// Range `[2^-8, 2^8]` with 16 nodes per octave.
    pub fn standard() -> Self {
        Self::new(-8, 8, 16)
    }

    /// A single octave `[2^nu, 2^{nu+1}]`.
    pub fn octave(nu: i32, nodes_per_octave: usize) -> Self {
        Self::new(nu, nu + 1, nodes_per_octave)
    }

    pub fn refined(&self) -> Self {
        Self::new(self.nu_min, self.nu_max, 2 * self.nodes_per_octave)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn t_min(&self) -> f64 {
        2f64.powi(self.nu_min)
    }

    pub fn t_max(&self) -> f64 {
        2f64.powi(self.nu_max)
    }

    /// Rebuild node tables after deserialization.
    pub fn rebuilt(&self) -> Self {
        Self::new(self.nu_min, self.nu_max, self.nodes_per_octave)
    }
}

/// Caller-supplied bounds on `|h(t)|` outside the truncated range:
/// `|h(t)| <= small_coef * t^small_power` below it and
/// `|h(t)| <= large_coef * t^large_power * exp(-large_rate * t)` above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEnvelope {
    pub small_coef: f64,
    pub small_power: f64,
    pub large_coef: f64,
    pub large_power: f64,
    pub large_rate: f64,
}

impl TailEnvelope {
    /// `∫_0^{t_lo} c t^p dt/t = c t_lo^p / p`.
    pub fn small_tail(&self, t_lo: f64) -> f64 {
        if self.small_coef == 0.0 {
            return 0.0;
        }
        if self.small_power <= 0.0 {
            return f64::INFINITY;
        }
        self.small_coef * t_lo.powf(self.small_power) / self.small_power
    }

    /// `∫_{t_hi}^∞ c t^p e^{-r t} dt/t`.
    pub fn large_tail(&self, t_hi: f64) -> f64 {
        if self.large_coef == 0.0 {
            return 0.0;
        }
        let (c, p, r) = (self.large_coef, self.large_power, self.large_rate);
        if r <= 0.0 {
            return f64::INFINITY;
        }
        if p > 0.0 {
            let x = r * t_hi;
            // Γ(p, x) = Q(p, x) Γ(p); fall back to the crude bound if Q underflows oddly.
            let upper = gamma_ur(p, x) * gamma(p);
            if upper.is_finite() {
                return c * r.powf(-p) * upper;
            }
        }
        c * t_hi.powf(p - 1.0) * (-r * t_hi).exp() / r
    }
}

/// Result of a truncated `dt/t` quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TIntegral {
    pub value: f64,
    pub tail_small: f64,
    pub tail_large: f64,
}

impl TIntegral {
    pub fn tail_bound(&self) -> f64 {
        self.tail_small + self.tail_large
    }
}

/// Relative size below which endpoint values count as negligible without an envelope.
pub const NEGLIGIBLE_ENDPOINT: f64 = 1e-13;

/// `∫ h(t) dt/t` over the grid range, plus analytic tail bounds from `envelope`.
///
/// Without an envelope the tails are only accepted when `|h|` at both end nodes is
/// below [`NEGLIGIBLE_ENDPOINT`] times the largest nodal value; otherwise the call is refused.
pub fn t_integrate<H>(h: H, tg: &TGrid, envelope: Option<&TailEnvelope>) -> Result<TIntegral>
where
    H: Fn(f64) -> f64 + Sync,
{
    let values: Vec<f64> = tg.nodes().par_iter().map(|&t| h(t)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: vec![tg.nodes()[i]], value: values[i] });
    }
    t_integrate_values(&values, tg, envelope)
}

/// As [`t_integrate`] with the nodal values already computed.
pub fn t_integrate_values(values: &[f64], tg: &TGrid, envelope: Option<&TailEnvelope>) -> Result<TIntegral> {
    assert_eq!(values.len(), tg.nodes().len());
    let value = compensated_sum(values.iter().zip(tg.weights()).map(|(v, w)| v * w));
    match envelope {
        Some(env) => Ok(TIntegral {
            value,
            tail_small: env.small_tail(tg.t_min()),
            tail_large: env.large_tail(tg.t_max()),
        }),
        None => {
            let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let first = values[0].abs();
            let last = values[values.len() - 1].abs();
            if peak > 0.0 && first.max(last) > NEGLIGIBLE_ENDPOINT * peak {
                return Err(Error::TailUnresolved(format!(
                    "endpoint values {first:e}, {last:e} against peak {peak:e} and no decay envelope"
                )));
            }
            Ok(TIntegral { value, tail_small: first, tail_large: last })
        }
    }
}

/// Golden-section search for a maximum of `f` on `[a, b]`; returns `(x, f(x))`
/// for the best point visited. Assumes `f` unimodal on the bracket.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, x_tol: f64) -> (f64, f64) {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    for _ in 0..200 {
        if b - a <= x_tol {
            break;
        }
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = f(e);
        }
    }
    if fc >= fe {
        (c, fc)
    } else {
        (e, fe)
    }
}
