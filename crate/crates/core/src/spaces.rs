//! Homogeneous Besov and Triebel–Lizorkin norms defined through `P_{t,m}`,
//! and drivers for the `m`-independence and embedding checks.
//!
//! `p = ∞` and `q = ∞` are realized as maxima over quadrature nodes followed by a
//! golden-section refinement around the best node. A sharper peak between nodes
//! can still be missed; refining the grids is the check for that.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{compensated_sum, golden_max, t_integrate_values, QuadGrid, TGrid, TailEnvelope, TensorNodes};
use crate::specfun::MultiIndex;
use crate::spectral::{eigenvalue, poisson_apply, poisson_symbol, synthesize, CoeffField, GridBasis, SpaceParams};

/// A norm value together with what the truncated `t`-range may hide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    pub value: f64,
    /// `upper / value - 1`, where `upper` bounds the norm including the `t`-tails
    /// outside the grid (from analytic envelopes).
    pub tail_rel: f64,
}

impl NormReport {
    fn zero() -> Self {
        Self { value: 0.0, tail_rel: 0.0 }
    }
}

/// Shell components `Σ_{|k|=n} c_k φ_k` sampled on the nodes of a grid.
struct ShellSamples {
    lambdas: Vec<f64>,
    values: Vec<Vec<f64>>,
    weights: Vec<f64>,
    nodes: TensorNodes,
}

impl ShellSamples {
    fn new(f: &CoeffField, xg: &QuadGrid) -> Result<Self> {
        let alpha = f.alpha();
        let basis = GridBasis::new(alpha, f.max_component(), xg)?;
        let mut shells: Vec<(usize, CoeffField)> = Vec::new();
        for (k, c) in f.iter() {
            let n = k.length();
            match shells.iter_mut().find(|(m, _)| *m == n) {
                Some((_, g)) => g.insert(k.clone(), c)?,
                None => {
                    let mut g = CoeffField::zero(alpha.clone());
                    g.insert(k.clone(), c)?;
                    shells.push((n, g));
                }
            }
        }
        shells.sort_by_key(|(n, _)| *n);
        let lambdas = shells.iter().map(|(n, _)| eigenvalue(*n, alpha)).collect();
        let values = shells.iter().map(|(_, g)| basis.synthesize(g)).collect::<Result<_>>()?;
        let nodes = xg.tensor();
        Ok(Self { lambdas, values, weights: nodes.weights.clone(), nodes })
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn symbols(&self, t: f64, m: u32) -> Vec<f64> {
        self.lambdas.iter().map(|&lam| poisson_symbol(t, m, lam)).collect()
    }

    /// Nodal values of `P_{t,m} f`.
    fn combine(&self, t: f64, m: u32) -> Vec<f64> {
        let w = self.symbols(t, m);
        (0..self.len())
            .map(|i| compensated_sum(w.iter().zip(&self.values).map(|(a, s)| a * s[i])))
            .collect()
    }

    fn at_node(&self, w: &[f64], i: usize) -> f64 {
        compensated_sum(w.iter().zip(&self.values).map(|(a, s)| a * s[i]))
    }

    fn lambda_min(&self) -> f64 {
        self.lambdas[0]
    }

    /// `Σ_n λ_n^{m/2} ‖S_n‖_p` (the `p`-triangle version when `p < 1`), which bounds
    /// `‖P_{t,m} f‖_p ≤ A t^m e^{-t√λ_min}`.
    fn envelope_coef(&self, p: f64, m: u32) -> f64 {
        let norms = self.values.iter().map(|s| lp_norm(s, &self.weights, p));
        let scaled: Vec<f64> = norms.zip(&self.lambdas).map(|(v, lam)| lam.powf(0.5 * m as f64) * v).collect();
        if p < 1.0 {
            compensated_sum(scaled.iter().map(|v| v.powf(p))).powf(1.0 / p)
        } else {
            compensated_sum(scaled.iter().copied())
        }
    }
}

/// `(Σ w_i |v_i|^p)^{1/p}`, or `max |v_i|` for `p = ∞`.
pub fn lp_norm(values: &[f64], weights: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        compensated_sum(values.iter().zip(weights).map(|(v, w)| w * v.abs().powf(p))).powf(1.0 / p)
    }
}

fn check_inputs(f: &CoeffField, params: &SpaceParams, xg: &QuadGrid, override_regime: bool) -> Result<()> {
    if params.d != f.dim() || xg.dim() != f.dim() {
        return Err(Error::InvalidArgument(format!(
            "dimensions differ: params {}, field {}, grid {}",
            params.d,
            f.dim(),
            xg.dim()
        )));
    }
    if override_regime {
        return Ok(());
    }
    params.require_norm_admissible()?;
    if !f.alpha().is_space_admissible() {
        return Err(Error::Regime(format!(
            "α = {:?} must lie in [-1/2, ∞)^d outside (-1/2, 1/2)^d",
            f.alpha().values()
        )));
    }
    Ok(())
}

/// Bracket between the neighbours of axis node `i` (clamped to the axis ends).
fn axis_bracket(xg: &QuadGrid, axis: usize, i: usize) -> (f64, f64) {
    let ax = &xg.axes[axis];
    let lo = if i == 0 { ax.panels[0].0 } else { ax.nodes[i - 1] };
    let hi = if i + 1 == ax.len() { ax.panels.last().unwrap().1 } else { ax.nodes[i + 1] };
    (lo, hi)
}

/// Largest `|g|` near node `best`, by coordinate-wise golden-section search.
fn refine_sup_x(g: &CoeffField, xg: &QuadGrid, nodes: &TensorNodes, best: usize, start: f64) -> Result<f64> {
    let d = nodes.dim;
    let mut x = nodes.point(best).to_vec();
    let idx = &nodes.axis_index[best * d..(best + 1) * d];
    let mut val = start;
    let mut failure = None;
    for _ in 0..2 {
        for j in 0..d {
            let (a, b) = axis_bracket(xg, j, idx[j]);
            let mut probe = x.clone();
            let (xj, v) = golden_max(
                |s| {
                    probe[j] = s;
                    match synthesize(g, &probe) {
                        Ok(v) => v.abs(),
                        Err(e) => {
                            failure = Some(e);
                            f64::NEG_INFINITY
                        }
                    }
                },
                a,
                b,
                1e-10 * (1.0 + b.abs()),
            );
            if v > val {
                val = v;
                x[j] = xj;
            }
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(val),
    }
}

/// Largest value of `h` near node `i` of the `t`-grid, searched in `ln t`.
fn refine_sup_t<H: FnMut(f64) -> f64>(mut h: H, tg: &TGrid, i: usize, start: f64) -> f64 {
    let ts = tg.nodes();
    let lo = if i == 0 { tg.t_min() } else { ts[i - 1] };
    let hi = if i + 1 == ts.len() { tg.t_max() } else { ts[i + 1] };
    let (_, v) = golden_max(|s| h(s.exp()), lo.ln(), hi.ln(), 1e-10);
    v.max(start)
}

fn argmax(values: &[f64]) -> usize {
    values.iter().enumerate().fold(0, |b, (i, v)| if *v > values[b] { i } else { b })
}

/// Sup of `A t^{m-σ}` below `t_min` and of `A t^{m-σ} e^{-t√λ}` above `t_max`.
fn sup_outside(a: f64, power: f64, rate: f64, tg: &TGrid) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if power <= 0.0 {
        return f64::INFINITY;
    }
    let small = a * tg.t_min().powf(power);
    let t = tg.t_max();
    let large = if t * rate >= power { a * (power * t.ln() - rate * t).exp() } else { f64::INFINITY };
    small.max(large)
}

/// `(∫_0^∞ (t^{-σ} ‖P_{t,m} f‖_p)^q dt/t)^{1/q}`; refuses parameters outside the
/// admissible regime.
pub fn besov_norm(f: &CoeffField, params: &SpaceParams, tg: &TGrid, xg: &QuadGrid) -> Result<f64> {
    Ok(besov_norm_report(f, params, tg, xg, false)?.value)
}

/// [`besov_norm`] with its tail bound; `override_regime` skips the parameter checks.
pub fn besov_norm_report(
    f: &CoeffField,
    params: &SpaceParams,
    tg: &TGrid,
    xg: &QuadGrid,
    override_regime: bool,
) -> Result<NormReport> {
    check_inputs(f, params, xg, override_regime)?;
    if f.iter().all(|(_, c)| c == 0.0) {
        return Ok(NormReport::zero());
    }
    let (sigma, p, q, m) = (params.sigma, params.p, params.q, params.m);
    let shells = ShellSamples::new(f, xg)?;
    let spatial = |t: f64| -> Result<f64> {
        let g = shells.combine(t, m);
        let mut v = lp_norm(&g, &shells.weights, p);
        if p.is_infinite() && v > 0.0 {
            let best = argmax(&g.iter().map(|x| x.abs()).collect::<Vec<_>>());
            v = refine_sup_x(&poisson_apply(t, m, f)?, xg, &shells.nodes, best, v)?;
        }
        Ok(t.powf(-sigma) * v)
    };
    let nodal: Vec<f64> = tg.nodes().par_iter().map(|&t| spatial(t)).collect::<Result<_>>()?;
    let a = shells.envelope_coef(p, m);
    let power = m as f64 - sigma;
    let rate = shells.lambda_min().sqrt();
    if q.is_infinite() {
        let best = argmax(&nodal);
        let mut failure = None;
        let value = refine_sup_t(
            |t| match spatial(t) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    f64::NEG_INFINITY
                }
            },
            tg,
            best,
            nodal[best],
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let outside = sup_outside(a, power, rate, tg);
        return Ok(NormReport { value, tail_rel: (outside / value - 1.0).max(0.0) });
    }
    let env = TailEnvelope {
        small_coef: a.powf(q),
        small_power: power * q,
        large_coef: a.powf(q),
        large_power: power * q,
        large_rate: q * rate,
    };
    let powered: Vec<f64> = nodal.iter().map(|v| v.powf(q)).collect();
    let ti = t_integrate_values(&powered, tg, Some(&env))?;
    let value = ti.value.powf(1.0 / q);
    let upper = (ti.value + ti.tail_bound()).powf(1.0 / q);
    Ok(NormReport { value, tail_rel: upper / value - 1.0 })
}

/// `‖(∫_0^∞ |t^{-σ} P_{t,m} f|^q dt/t)^{1/q}‖_p`; `p = ∞` is refused.
pub fn tl_norm(f: &CoeffField, params: &SpaceParams, tg: &TGrid, xg: &QuadGrid) -> Result<f64> {
    Ok(tl_norm_report(f, params, tg, xg, false)?.value)
}

pub fn tl_norm_report(
    f: &CoeffField,
    params: &SpaceParams,
    tg: &TGrid,
    xg: &QuadGrid,
    override_regime: bool,
) -> Result<NormReport> {
    if params.p.is_infinite() {
        return Err(Error::Regime("Triebel–Lizorkin norms are defined for p < ∞ only".into()));
    }
    check_inputs(f, params, xg, override_regime)?;
    if f.iter().all(|(_, c)| c == 0.0) {
        return Ok(NormReport::zero());
    }
    let (sigma, p, q, m) = (params.sigma, params.p, params.q, params.m);
    let shells = ShellSamples::new(f, xg)?;
    let ts = tg.nodes();
    let table: Vec<Vec<f64>> = ts
        .iter()
        .map(|&t| {
            let s = t.powf(-sigma);
            shells.symbols(t, m).into_iter().map(|w| w * s).collect()
        })
        .collect();
    let power = m as f64 - sigma;
    let rate = shells.lambda_min().sqrt();
    let lam_m: Vec<f64> = shells.lambdas.iter().map(|l| l.powf(0.5 * m as f64)).collect();
    // Per node: the t-functional and an upper bound including the tails.
    let pointwise: Vec<(f64, f64)> = (0..shells.len())
        .into_par_iter()
        .map(|i| {
            let h: Vec<f64> = table.iter().map(|w| shells.at_node(w, i).abs()).collect();
            let a = compensated_sum(lam_m.iter().zip(&shells.values).map(|(l, s)| l * s[i].abs()));
            if q.is_infinite() {
                let best = argmax(&h);
                let v = refine_sup_t(
                    |t| t.powf(-sigma) * shells.at_node(&shells.symbols(t, m), i).abs(),
                    tg,
                    best,
                    h[best],
                );
                (v, v.max(sup_outside(a, power, rate, tg)))
            } else {
                let powered: Vec<f64> = h.iter().map(|v| v.powf(q)).collect();
                let env = TailEnvelope {
                    small_coef: a.powf(q),
                    small_power: power * q,
                    large_coef: a.powf(q),
                    large_power: power * q,
                    large_rate: q * rate,
                };
                let value = compensated_sum(powered.iter().zip(tg.weights()).map(|(v, w)| v * w));
                let tail = env.small_tail(tg.t_min()) + env.large_tail(tg.t_max());
                (value.powf(1.0 / q), (value + tail).powf(1.0 / q))
            }
        })
        .collect();
    let (vals, uppers): (Vec<f64>, Vec<f64>) = pointwise.into_iter().unzip();
    let value = lp_norm(&vals, &shells.weights, p);
    let upper = lp_norm(&uppers, &shells.weights, p);
    if !value.is_finite() {
        return Err(Error::NonFinite { node: vec![], value });
    }
    Ok(NormReport { value, tail_rel: if value > 0.0 { upper / value - 1.0 } else { 0.0 } })
}

/// A `t`-grid whose truncation tails for `f` stay below `rel_tol` of the
/// dominant shell's contribution: the range covers `t √λ` from about `rel_tol^{1/(m-σ)}`
/// at the top shell to the point where `e^{-t√λ_min}` has fallen by `rel_tol`.
pub fn t_grid_for(f: &CoeffField, params: &SpaceParams, rel_tol: f64, nodes_per_octave: usize) -> Result<TGrid> {
    let alpha = f.alpha();
    let (lo_n, hi_n) = f
        .iter()
        .fold((usize::MAX, 0), |(lo, hi), (k, _)| (lo.min(k.length()), hi.max(k.length())));
    if lo_n == usize::MAX {
        return Ok(TGrid::new(-1, 1, nodes_per_octave));
    }
    let power = params.m as f64 - params.sigma;
    if !(power > 0.0) {
        return Err(Error::Regime(format!("m = {} must exceed σ = {}", params.m, params.sigma)));
    }
    let (lam_lo, lam_hi) = (eigenvalue(lo_n, alpha), eigenvalue(hi_n, alpha));
    let t_lo = rel_tol.powf(1.0 / power) / lam_hi.sqrt();
    let u_hi = power + (1.0 / rel_tol).ln() * 2.0 + 10.0 * (1.0 + power);
    let t_hi = u_hi / lam_lo.sqrt();
    Ok(TGrid::new(t_lo.log2().floor() as i32, t_hi.log2().ceil() as i32, nodes_per_octave))
}

/// Ratios over a corpus with their extremes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioTable {
    pub ratios: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// `max / min`.
    pub spread: f64,
}

impl RatioTable {
    pub fn new(ratios: Vec<f64>) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::InvalidArgument("empty corpus".into()));
        }
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { ratios, min, max, spread: max / min })
    }
}

fn ratio_of(num: f64, den: f64, id: usize) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::InvalidArgument(format!("field {id} has zero norm; ratio undefined")));
    }
    Ok(num / den)
}

/// `besov_norm(f; m1) / besov_norm(f; m2)` per corpus field.
pub fn m_equivalence_check(
    corpus: &[CoeffField],
    params: &SpaceParams,
    m1: u32,
    m2: u32,
    tg: &TGrid,
    xg: &QuadGrid,
) -> Result<RatioTable> {
    let (p1, p2) = (params.with_m(m1), params.with_m(m2));
    p1.require_norm_admissible()?;
    p2.require_norm_admissible()?;
    let ratios = corpus
        .iter()
        .enumerate()
        .map(|(id, f)| ratio_of(besov_norm(f, &p1, tg, xg)?, besov_norm(f, &p2, tg, xg)?, id))
        .collect::<Result<_>>()?;
    RatioTable::new(ratios)
}

/// Which case of the embedding theorem a parameter pair falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EmbeddingCase {
    /// Same `σ, p`; `q_1 <= q_2`.
    Nesting,
    /// `σ_1 >= σ_2`, `σ_1 - d/p_1 = σ_2 - d/p_2`, same `q`.
    Sobolev,
}

pub fn embedding_case(source: &SpaceParams, target: &SpaceParams) -> Result<EmbeddingCase> {
    if source.d != target.d {
        return Err(Error::InvalidArgument("embedding between different dimensions".into()));
    }
    let d = source.d as f64;
    let same = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
    if same(source.sigma, target.sigma) && same(source.p, target.p) && source.q <= target.q {
        return Ok(EmbeddingCase::Nesting);
    }
    if same(source.q, target.q)
        && source.sigma >= target.sigma
        && same(source.sigma - d / source.p, target.sigma - d / target.p)
    {
        return Ok(EmbeddingCase::Sobolev);
    }
    Err(Error::Regime(format!(
        "no embedding: (σ, p, q) = ({}, {}, {}) into ({}, {}, {})",
        source.sigma, source.p, source.q, target.sigma, target.p, target.q
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub case: EmbeddingCase,
    /// `‖f‖_target / ‖f‖_source` per field.
    pub table: RatioTable,
}

pub fn embedding_check(
    corpus: &[CoeffField],
    source: &SpaceParams,
    target: &SpaceParams,
    tg: &TGrid,
    xg: &QuadGrid,
) -> Result<EmbeddingReport> {
    let case = embedding_case(source, target)?;
    let ratios = corpus
        .iter()
        .enumerate()
        .map(|(id, f)| ratio_of(besov_norm(f, target, tg, xg)?, besov_norm(f, source, tg, xg)?, id))
        .collect::<Result<_>>()?;
    Ok(EmbeddingReport { case, table: RatioTable::new(ratios)? })
}

/// Which norm a [`NormRow`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NormKind {
    Besov,
    TriebelLizorkin,
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::Besov => "besov",
            NormKind::TriebelLizorkin => "tl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRow {
    pub field_id: usize,
    pub params: SpaceParams,
    pub kind: NormKind,
    pub norm: f64,
    pub tail_rel: f64,
}

/// Norms of every field of a corpus.
pub fn corpus_norms(
    corpus: &[CoeffField],
    params: &SpaceParams,
    kind: NormKind,
    tg: &TGrid,
    xg: &QuadGrid,
) -> Result<Vec<NormRow>> {
    corpus
        .iter()
        .enumerate()
        .map(|(field_id, f)| {
            let r = match kind {
                NormKind::Besov => besov_norm_report(f, params, tg, xg, false)?,
                NormKind::TriebelLizorkin => tl_norm_report(f, params, tg, xg, false)?,
            };
            Ok(NormRow { field_id, params: *params, kind, norm: r.value, tail_rel: r.tail_rel })
        })
        .collect()
}

fn fmt_exp(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn norms_csv(rows: &[NormRow]) -> String {
    let mut out = String::from("field_id,d,sigma,p,q,m,norm,tail_rel,route\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.field_id,
            r.params.d,
            fmt_exp(r.params.sigma),
            fmt_exp(r.params.p),
            fmt_exp(r.params.q),
            r.params.m,
            fmt_exp(r.norm),
            fmt_exp(r.tail_rel),
            r.kind.name()
        ));
    }
    out
}

/// `∫_0^∞ ((t√λ)^m e^{-t√λ} t^{-σ})^q dt/t)^{1/q} = λ^{σ/2} Γ((m-σ)q)^{1/q} / q^{m-σ}`,
/// and `λ^{σ/2} (m-σ)^{m-σ} e^{-(m-σ)}` for `q = ∞`: the Besov norm of `φ_k` divided by `‖φ_k‖_p`.
pub fn eigen_t_factor(lambda: f64, m: u32, sigma: f64, q: f64) -> f64 {
    let s = m as f64 - sigma;
    let scale = lambda.powf(0.5 * sigma);
    if q.is_infinite() {
        scale * (s * s.ln() - s).exp()
    } else {
        scale * (statrs::function::gamma::ln_gamma(s * q) / q - s * q.ln()).exp()
    }
}

/// Single-eigenfunction field `c φ_k`.
pub fn eigen_field(alpha: &crate::specfun::AlphaIndex, k: &MultiIndex, c: f64) -> Result<CoeffField> {
    CoeffField::from_entries(alpha.clone(), [(k.clone(), c)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{phi_eval, AlphaIndex};

    fn alpha1() -> AlphaIndex {
        AlphaIndex::new(vec![0.5]).unwrap()
    }

    /// `‖φ_k‖_p` in one dimension with panels split at the sign changes of `φ_k`.
    fn phi_norm_1d(k: u32, a: f64, p: f64) -> f64 {
        let alpha = AlphaIndex::new(vec![a]).unwrap();
        let idx = MultiIndex::new(vec![k]);
        let f = |x: f64| phi_eval(&idx, &alpha, &[x]).unwrap();
        let x_max = 30.0;
        let fine = 20000;
        let mut cuts = vec![0.0];
        let mut prev = f(1e-9);
        for i in 1..=fine {
            let x = x_max * i as f64 / fine as f64;
            let v = f(x);
            if v.signum() != prev.signum() && v != 0.0 {
                let (mut lo, mut hi) = (x - x_max / fine as f64, x);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid).signum() == f(lo).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                cuts.push(0.5 * (lo + hi));
            }
            prev = v;
        }
        cuts.push(x_max);
        if p.is_infinite() {
            let mut best: f64 = 0.0;
            for w in cuts.windows(2) {
                let (_, v) = golden_max(|x| f(x).abs(), w[0], w[1], 1e-13);
                best = best.max(v);
            }
            return best;
        }
        let (gx, gw) = crate::numerics::gauss_legendre(30);
        let mut sum = 0.0;
        for w in cuts.windows(2) {
            let pieces = 8;
            for j in 0..pieces {
                let a = w[0] + (w[1] - w[0]) * j as f64 / pieces as f64;
                let b = w[0] + (w[1] - w[0]) * (j + 1) as f64 / pieces as f64;
                for (x, wt) in gx.iter().zip(&gw) {
                    let y = 0.5 * (a + b) + 0.5 * (b - a) * x;
                    sum += 0.5 * (b - a) * wt * f(y).abs().powf(p);
                }
            }
        }
        sum.powf(1.0 / p)
    }

    fn grid_for(p: f64) -> QuadGrid {
        if p == 1.0 {
            QuadGrid::new(1, 14.0, 1.0 / 64.0, 16, true)
        } else {
            QuadGrid::standard(1, 14.0)
        }
    }

    #[test]
    fn single_eigenfunction_closed_form() {
        let alpha = alpha1();
        let k = MultiIndex::new(vec![3]);
        let lam = eigenvalue(3, &alpha);
        let f = eigen_field(&alpha, &k, 1.0).unwrap();
        for &sigma in &[-1.0, 0.0, 1.0] {
            for &p in &[1.0, 2.0, f64::INFINITY] {
                let xg = grid_for(p);
                let phi_p = phi_norm_1d(3, 0.5, p);
                for &q in &[1.0, 2.0, f64::INFINITY] {
                    let params = SpaceParams::norm_only(1, sigma, p, q).unwrap();
                    let tg = t_grid_for(&f, &params, 1e-12, 16).unwrap();
                    let r = besov_norm_report(&f, &params, &tg, &xg, false).unwrap();
                    let want = phi_p * eigen_t_factor(lam, params.m, sigma, q);
                    let rel = (r.value - want).abs() / want;
                    assert!(rel < 1e-6, "σ={sigma} p={p} q={q}: {} vs {want} ({rel:e})", r.value);
                    assert!(r.tail_rel < 1e-9, "tail {}", r.tail_rel);
                    if p.is_finite() {
                        let tl = tl_norm(&f, &params, &tg, &xg).unwrap();
                        assert!((tl - r.value).abs() < 1e-9 * r.value, "tl {tl} vs besov {}", r.value);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_field_and_homogeneity() {
        let alpha = alpha1();
        let xg = QuadGrid::standard(1, 14.0);
        let tg = TGrid::new(-12, 8, 16);
        let params = SpaceParams::norm_only(1, 0.0, 2.0, 2.0).unwrap();
        let zero = CoeffField::zero(alpha.clone());
        assert_eq!(besov_norm(&zero, &params, &tg, &xg).unwrap(), 0.0);
        assert_eq!(tl_norm(&zero, &params, &tg, &xg).unwrap(), 0.0);
        let f = CoeffField::from_entries(
            alpha.clone(),
            [(MultiIndex::new(vec![1]), 0.7), (MultiIndex::new(vec![4]), -0.3)],
        )
        .unwrap();
        let a = tl_norm(&f, &params, &tg, &xg).unwrap();
        let b = tl_norm(&f.scaled(-3.0), &params, &tg, &xg).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-13 * b);
        let a = besov_norm(&f, &params, &tg, &xg).unwrap();
        let b = besov_norm(&f.scaled(-3.0), &params, &tg, &xg).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-13 * b);
    }

    #[test]
    fn refusals() {
        let xg = QuadGrid::standard(1, 14.0);
        let tg = TGrid::new(-12, 8, 16);
        let f = eigen_field(&alpha1(), &MultiIndex::new(vec![1]), 1.0).unwrap();
        let low_m = SpaceParams::norm_only(1, 0.0, 2.0, 2.0).unwrap().with_m(2);
        assert!(matches!(besov_norm(&f, &low_m, &tg, &xg), Err(Error::Regime(_))));
        assert!(besov_norm_report(&f, &low_m, &tg, &xg, true).is_ok());
        let p_inf = SpaceParams::norm_only(1, 0.0, f64::INFINITY, 2.0).unwrap();
        assert!(tl_norm(&f, &p_inf, &tg, &xg).is_err());
        let g = eigen_field(&AlphaIndex::new(vec![0.2]).unwrap(), &MultiIndex::new(vec![1]), 1.0).unwrap();
        let params = SpaceParams::norm_only(1, 0.0, 2.0, 2.0).unwrap();
        assert!(matches!(besov_norm(&g, &params, &tg, &xg), Err(Error::Regime(_))));
    }

    #[test]
    fn m_ratio_matches_gamma_formula_for_eigenfunctions() {
        let alpha = alpha1();
        let xg = QuadGrid::standard(1, 14.0);
        let params = SpaceParams::norm_only(1, 0.0, 2.0, 2.0).unwrap();
        let corpus: Vec<CoeffField> =
            [0u32, 2, 5].iter().map(|&k| eigen_field(&alpha, &MultiIndex::new(vec![k]), 1.0 + k as f64).unwrap()).collect();
        let tg = TGrid::new(-16, 8, 16);
        let table = m_equivalence_check(&corpus, &params, 3, 4, &tg, &xg).unwrap();
        for (f, r) in corpus.iter().zip(&table.ratios) {
            let lam = eigenvalue(f.degree(), &alpha);
            let want = eigen_t_factor(lam, 3, 0.0, 2.0) / eigen_t_factor(lam, 4, 0.0, 2.0);
            assert!((r - want).abs() < 1e-8 * want, "{r} vs {want}");
        }
        let scaled: Vec<CoeffField> = corpus.iter().map(|f| f.scaled(4.5)).collect();
        let again = m_equivalence_check(&scaled, &params, 3, 4, &tg, &xg).unwrap();
        for (a, b) in table.ratios.iter().zip(&again.ratios) {
            assert!((a - b).abs() < 1e-14 * a);
        }
        assert!(m_equivalence_check(&corpus, &params, 2, 4, &tg, &xg).is_err());
    }

    #[test]
    fn embedding_cases() {
        let alpha = alpha1();
        let xg = QuadGrid::standard(1, 14.0);
        let tg = TGrid::new(-16, 8, 16);
        let corpus = vec![eigen_field(&alpha, &MultiIndex::new(vec![2]), 1.0).unwrap()];
        let s1 = SpaceParams::norm_only(1, 0.0, 2.0, 1.0).unwrap();
        let same = embedding_check(&corpus, &s1, &s1, &tg, &xg).unwrap();
        assert_eq!(same.case, EmbeddingCase::Nesting);
        assert!(same.table.max <= 1.0 + 1e-9);
        let s2 = SpaceParams::norm_only(1, 0.0, 2.0, 2.0).unwrap().with_m(s1.m);
        let nest = embedding_check(&corpus, &s1, &s2, &tg, &xg).unwrap();
        let lam = eigenvalue(2, &alpha);
        let want = eigen_t_factor(lam, s1.m, 0.0, 2.0) / eigen_t_factor(lam, s1.m, 0.0, 1.0);
        assert!((nest.table.ratios[0] - want).abs() < 1e-8 * want);
        assert!(want < 1.0);
        let hi = SpaceParams::norm_only(1, 1.0, 2.0, 2.0).unwrap();
        let lo = SpaceParams::norm_only(1, 0.75, 4.0, 2.0).unwrap();
        assert_eq!(embedding_case(&hi, &lo).unwrap(), EmbeddingCase::Sobolev);
        let off = SpaceParams::norm_only(1, 0.5, 4.0, 2.0).unwrap();
        assert!(embedding_case(&hi, &off).is_err());
        assert!(embedding_case(&lo, &hi).is_err());
        assert!(embedding_case(&s2, &s1).is_err());
    }

    #[test]
    fn t_grid_covers_the_mass() {
        let alpha = alpha1();
        let f = eigen_field(&alpha, &MultiIndex::new(vec![6]), 1.0).unwrap();
        let params = SpaceParams::norm_only(1, 1.0, 2.0, 1.0).unwrap();
        let tg = t_grid_for(&f, &params, 1e-12, 16).unwrap();
        let xg = QuadGrid::standard(1, 14.0);
        let r = besov_norm_report(&f, &params, &tg, &xg, false).unwrap();
        assert!(r.tail_rel < 1e-10, "{}", r.tail_rel);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let alpha = alpha1();
        let xg = QuadGrid::standard(1, 14.0);
        let tg = TGrid::new(-12, 8, 8);
        let params = SpaceParams::norm_only(1, 0.0, 2.0, f64::INFINITY).unwrap();
        let corpus = vec![eigen_field(&alpha, &MultiIndex::new(vec![1]), 1.0).unwrap()];
        let rows = corpus_norms(&corpus, &params, NormKind::Besov, &tg, &xg).unwrap();
        let csv = norms_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("0,1,0.0000000000000000e0,2.0000000000000000e0,inf,"));
        assert!(lines[1].ends_with(",besov"));
    }
}
