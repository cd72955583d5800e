//! Calderón reproducing formula and the molecular decomposition
//! `f = Σ_Q s_Q a_Q` over truncated families of dyadic cubes.
//!
//! Localization `P_{t,m} f · χ_Q` leaves the finite spectral model. It is
//! re-expanded in `{φ_j : |j| <= K}` through the local Gram matrix
//! `G^Q_{kj} = ∫_Q φ_k φ_j`, which factors into one-dimensional interval Grams
//! computed by Gauss–Legendre on the cube itself. The discarded part of the
//! expansion is reported as a projection residual.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::dyadic::{CubeSet, DyadicCube};
use crate::error::{Error, Result};
use crate::numerics::{compensated_sum, t_integrate, AxisRule, TGrid, TailEnvelope};
use crate::specfun::{phi_column, AlphaIndex, MultiIndex};
use crate::spectral::{apply_multiplier, eigenvalue, poisson_apply, poisson_symbol, synthesize, CoeffField, SpaceParams};

/// Largest tolerated bound on the truncated `t`-tails of [`calderon_scalar`].
pub const CALDERON_TAIL_TOL: f64 = 1e-12;

/// `2^m / (m-1)!`.
pub fn calderon_constant(m: u32) -> f64 {
    (m as f64 * std::f64::consts::LN_2 - ln_gamma(m as f64)).exp()
}

/// `(2^m/(m-1)!) ∫_0^∞ (t√λ)^m e^{-2t√λ} dt/t` with `m = m1 + m2`; equals 1.
pub fn calderon_scalar(lambda: f64, m1: u32, m2: u32, tg: &TGrid) -> Result<f64> {
    if !(lambda > 0.0) || m1 == 0 || m2 == 0 {
        return Err(Error::Domain(format!("need λ > 0 and m1, m2 >= 1, got λ = {lambda}, m1 = {m1}, m2 = {m2}")));
    }
    let m = m1 + m2;
    let c = calderon_constant(m);
    let rl = lambda.sqrt();
    let env = TailEnvelope {
        small_coef: c * rl.powi(m as i32),
        small_power: m as f64,
        large_coef: c * rl.powi(m as i32),
        large_power: m as f64,
        large_rate: 2.0 * rl,
    };
    let ti = t_integrate(
        |t| c * poisson_symbol(t, m1, lambda) * poisson_symbol(t, m2, lambda),
        tg,
        Some(&env),
    )?;
    if ti.tail_bound() > CALDERON_TAIL_TOL {
        return Err(Error::TailUnresolved(format!(
            "t-range [{}, {}] leaves tails up to {:e} at λ = {lambda}",
            tg.t_min(),
            tg.t_max(),
            ti.tail_bound()
        )));
    }
    Ok(ti.value)
}

/// `(2^m/(m-1)!) ∫ P_{t,m1} P_{t,m2} f dt/t`, entrywise.
pub fn calderon_field(f: &CoeffField, m1: u32, m2: u32, tg: &TGrid) -> Result<CoeffField> {
    let alpha = f.alpha().clone();
    let mut shells: BTreeMap<usize, f64> = BTreeMap::new();
    for (k, _) in f.iter() {
        let n = k.length();
        if let std::collections::btree_map::Entry::Vacant(e) = shells.entry(n) {
            e.insert(calderon_scalar(eigenvalue(n, &alpha), m1, m2, tg)?);
        }
    }
    Ok(f.map_entries(|k, c| c * shells[&k.length()]))
}

/// `∫_a^b φ_j^α φ_k^α dx` for `j, k <= kmax`, row-major `(kmax+1)^2`.
pub fn interval_gram(a: f64, lo: f64, hi: f64, kmax: usize) -> Result<Vec<f64>> {
    let side = kmax + 1;
    let lam = 4.0 * kmax as f64 + 2.0 * a.abs() + 2.0;
    let panel = (0.5f64).min(1.5 / lam.sqrt()).min(hi - lo);
    let rule = AxisRule::new(lo, hi, panel, 24, lo == 0.0);
    let cols: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| phi_column(kmax, a, x)).collect::<Result<_>>()?;
    let mut g = vec![0.0; side * side];
    for j in 0..side {
        for k in j..side {
            let v = compensated_sum(cols.iter().zip(&rule.weights).map(|(c, w)| w * c[j] * c[k]));
            g[j * side + k] = v;
            g[k * side + j] = v;
        }
    }
    Ok(g)
}

/// `2^{-νσ} |Q|^{1/p} sup |P_{t,m} f(y)|` over the lattice
/// `y = corner + (a/R) ℓ`, `t = 2^ν (1 + b/R)`, `a, b = 1..R` (so refining
/// `R` to a multiple never decreases the value).
pub fn compute_s_q(f: &CoeffField, params: &SpaceParams, q: &DyadicCube, refinement: usize) -> Result<f64> {
    params.require_norm_admissible()?;
    if q.dim() != f.dim() || refinement == 0 {
        return Err(Error::InvalidArgument("cube dimension or refinement mismatch".into()));
    }
    if f.iter().all(|(_, c)| c == 0.0) {
        return Ok(0.0);
    }
    let (d, r) = (f.dim(), refinement);
    let side = q.side();
    let corner = q.corner();
    let alpha = f.alpha();
    let kmax = f.max_component();
    let entries: Vec<(MultiIndex, f64, f64)> =
        f.iter().map(|(k, c)| (k.clone(), c, eigenvalue(k.length(), alpha))).collect();
    let ts: Vec<f64> = (1..=r).map(|b| side * (1.0 + b as f64 / r as f64)).collect();
    let count = r.pow(d as u32);
    let sup = (0..count)
        .into_par_iter()
        .map(|mut i| {
            let mut y = vec![0.0; d];
            for ax in (0..d).rev() {
                y[ax] = corner[ax] + ((i % r) + 1) as f64 / r as f64 * side;
                i /= r;
            }
            let cols: Vec<Vec<f64>> = (0..d).map(|ax| phi_column(kmax, alpha.values()[ax], y[ax])).collect::<Result<_>>()?;
            let phis: Vec<f64> = entries
                .iter()
                .map(|(k, _, _)| k.0.iter().enumerate().map(|(ax, &ki)| cols[ax][ki as usize]).product())
                .collect();
            Ok(ts.iter().fold(0.0f64, |acc, &t| {
                let v = compensated_sum(
                    entries.iter().zip(&phis).map(|((_, c, lam), phi)| c * poisson_symbol(t, params.m, *lam) * phi),
                );
                acc.max(v.abs())
            }))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(scale_factor(q, params) * sup)
}

/// `2^{-νσ} |Q|^{1/p}`.
fn scale_factor(q: &DyadicCube, params: &SpaceParams) -> f64 {
    let vol = if params.p.is_infinite() { 1.0 } else { q.volume().powf(1.0 / params.p) };
    2f64.powf(-(q.nu as f64) * params.sigma) * vol
}

/// Knobs of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoleculeOptions {
    /// Lattice refinement of the `s_Q` sup.
    pub refinement: usize,
    /// Gauss nodes on the octave `(2^ν, 2^{ν+1}]`.
    pub t_nodes: usize,
    /// Degree `K` of the re-expansion of `b_Q`.
    pub proj_degree: usize,
}

impl MoleculeOptions {
    pub fn for_field(f: &CoeffField) -> Self {
        Self { refinement: 4, t_nodes: 24, proj_degree: f.degree() + 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoleculeRecord {
    pub cube: DyadicCube,
    pub s_q: f64,
    pub b: CoeffField,
    pub a: CoeffField,
    pub params: SpaceParams,
    /// Largest relative `L²` part of `P_{t,m} f · χ_Q` outside degree `K`, over the octave nodes.
    pub projection_residual: f64,
}

impl MoleculeRecord {
    fn zero(cube: DyadicCube, alpha: &AlphaIndex, params: &SpaceParams) -> Self {
        Self {
            cube,
            s_q: 0.0,
            b: CoeffField::zero(alpha.clone()),
            a: CoeffField::zero(alpha.clone()),
            params: *params,
            projection_residual: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.s_q == 0.0
    }
}

/// Local Grams of the axis intervals of `Q`, cached by `(axis, ν, m_axis)`.
struct GramCache {
    kmax: usize,
    alpha: AlphaIndex,
    map: BTreeMap<(usize, i32, u64), Vec<f64>>,
}

impl GramCache {
    fn new(alpha: &AlphaIndex, kmax: usize) -> Self {
        Self { kmax, alpha: alpha.clone(), map: BTreeMap::new() }
    }

    fn fill(&mut self, cubes: &[DyadicCube]) -> Result<()> {
        let mut keys: Vec<(usize, i32, u64)> =
            cubes.iter().flat_map(|q| q.m.iter().enumerate().map(move |(ax, &j)| (ax, q.nu, j))).collect();
        keys.sort();
        keys.dedup();
        keys.retain(|k| !self.map.contains_key(k));
        let grams: Vec<Vec<f64>> = keys
            .par_iter()
            .map(|&(ax, nu, j)| {
                let side = 2f64.powi(nu);
                interval_gram(self.alpha.values()[ax], j as f64 * side, (j + 1) as f64 * side, self.kmax)
            })
            .collect::<Result<_>>()?;
        self.map.extend(keys.into_iter().zip(grams));
        Ok(())
    }

    fn entry(&self, q: &DyadicCube, k: &MultiIndex, j: &MultiIndex) -> f64 {
        let side = self.kmax + 1;
        (0..q.dim())
            .map(|ax| self.map[&(ax, q.nu, q.m[ax])][k.0[ax] as usize * side + j.0[ax] as usize])
            .product()
    }
}

/// `∫_{2^ν}^{2^{ν+1}} t^M (t√λ_j)^N e^{-t√λ_j} (t√λ_k)^m e^{-t√λ_k} dt/t` per target/entry pair.
fn octave_weights(nu: i32, nodes: usize, params: &SpaceParams, lam_j: &[f64], lam_k: &[f64]) -> Vec<Vec<f64>> {
    let tg = TGrid::octave(nu, nodes);
    let wj: Vec<Vec<f64>> = tg
        .nodes()
        .iter()
        .zip(tg.weights())
        .map(|(&t, &w)| lam_j.iter().map(|&l| w * t.powi(params.big_m as i32) * poisson_symbol(t, params.big_n, l)).collect())
        .collect();
    let wk: Vec<Vec<f64>> =
        tg.nodes().iter().map(|&t| lam_k.iter().map(|&l| poisson_symbol(t, params.m, l)).collect()).collect();
    (0..lam_j.len())
        .map(|j| (0..lam_k.len()).map(|k| compensated_sum(wj.iter().zip(&wk).map(|(a, b)| a[j] * b[k]))).collect())
        .collect()
}

struct Prepared {
    alpha: AlphaIndex,
    entries: Vec<(MultiIndex, f64)>,
    targets: Vec<MultiIndex>,
    lam_k: Vec<f64>,
    lam_j: Vec<f64>,
    c: f64,
    weights: BTreeMap<i32, Vec<Vec<f64>>>,
}

impl Prepared {
    fn new(f: &CoeffField, params: &SpaceParams, opts: &MoleculeOptions) -> Self {
        let alpha = f.alpha().clone();
        let entries: Vec<(MultiIndex, f64)> = f.iter().filter(|(_, c)| *c != 0.0).map(|(k, c)| (k.clone(), c)).collect();
        let targets = MultiIndex::all_up_to(f.dim(), opts.proj_degree.max(f.degree()));
        let lam_k = entries.iter().map(|(k, _)| eigenvalue(k.length(), &alpha)).collect();
        let lam_j = targets.iter().map(|j| eigenvalue(j.length(), &alpha)).collect();
        let c = calderon_constant(params.m + params.big_m + params.big_n);
        Self { alpha, entries, targets, lam_k, lam_j, c, weights: BTreeMap::new() }
    }

    fn prepare_scales(&mut self, cubes: &[DyadicCube], params: &SpaceParams, opts: &MoleculeOptions) {
        let mut nus: Vec<i32> = cubes.iter().map(|q| q.nu).collect();
        nus.dedup();
        let computed: Vec<(i32, Vec<Vec<f64>>)> = nus
            .par_iter()
            .map(|&nu| (nu, octave_weights(nu, opts.t_nodes, params, &self.lam_j, &self.lam_k)))
            .collect();
        self.weights.extend(computed);
    }

    fn kmax(&self) -> usize {
        self.targets.iter().flat_map(|j| j.0.iter()).copied().max().unwrap_or(0) as usize
    }

    fn molecule(
        &self,
        q: &DyadicCube,
        s_q: f64,
        params: &SpaceParams,
        grams: &GramCache,
        opts: &MoleculeOptions,
    ) -> Result<MoleculeRecord> {
        if s_q == 0.0 || self.entries.is_empty() {
            return Ok(MoleculeRecord::zero(q.clone(), &self.alpha, params));
        }
        let weights = &self.weights[&q.nu];
        let g: Vec<Vec<f64>> = self
            .targets
            .iter()
            .map(|j| self.entries.iter().map(|(k, _)| grams.entry(q, k, j)).collect())
            .collect();
        let mut b = CoeffField::zero(self.alpha.clone());
        for (jj, j) in self.targets.iter().enumerate() {
            let v = compensated_sum(
                self.entries.iter().enumerate().map(|(kk, (_, c))| c * g[jj][kk] * weights[jj][kk]),
            );
            b.insert(j.clone(), self.c * v / s_q)?;
        }
        let big_m = params.big_m as f64;
        let a = apply_multiplier(|lam| lam.powf(0.5 * big_m), &b);
        // Projection residual of P_{t,m} f · χ_Q at the octave nodes.
        let tg = TGrid::octave(q.nu, opts.t_nodes);
        let gkk: Vec<Vec<f64>> =
            self.entries.iter().map(|(k, _)| self.entries.iter().map(|(l, _)| grams.entry(q, k, l)).collect()).collect();
        let mut worst: f64 = 0.0;
        for &t in tg.nodes() {
            let w: Vec<f64> = self
                .entries
                .iter()
                .zip(&self.lam_k)
                .map(|((_, c), &lam)| c * poisson_symbol(t, params.m, lam))
                .collect();
            let total = compensated_sum(
                (0..w.len()).flat_map(|i| (0..w.len()).map(move |l| (i, l))).map(|(i, l)| w[i] * w[l] * gkk[i][l]),
            );
            let kept = compensated_sum(g.iter().map(|row| {
                let h = compensated_sum(row.iter().zip(&w).map(|(gv, wv)| gv * wv));
                h * h
            }));
            if total > 0.0 {
                worst = worst.max(((total - kept).max(0.0) / total).sqrt());
            }
        }
        Ok(MoleculeRecord { cube: q.clone(), s_q, b, a, params: *params, projection_residual: worst })
    }
}

/// `s_Q`, `b_Q = (c_{m,M,N}/s_Q) ∫_{2^ν}^{2^{ν+1}} t^M P_{t,N}(P_{t,m} f · χ_Q) dt/t`
/// re-expanded at degree `K`, and `a_Q = (√L)^M b_Q`.
pub fn compute_molecule(f: &CoeffField, params: &SpaceParams, q: &DyadicCube, opts: &MoleculeOptions) -> Result<MoleculeRecord> {
    let s_q = compute_s_q(f, params, q, opts.refinement)?;
    let mut prep = Prepared::new(f, params, opts);
    prep.prepare_scales(std::slice::from_ref(q), params, opts);
    let mut grams = GramCache::new(&prep.alpha, prep.kmax());
    grams.fill(std::slice::from_ref(q))?;
    prep.molecule(q, s_q, params, &grams, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionResult {
    pub cubes: CubeSet,
    /// Records with `s_Q > 0`, ν ascending then lexicographic.
    pub records: Vec<MoleculeRecord>,
    /// `‖f − Σ s_Q a_Q‖_2`.
    pub residual: f64,
    pub seq_norm_besov: f64,
    pub seq_norm_tl: Option<f64>,
}

/// Records over every cube of `set`; zero cubes are dropped.
pub fn decompose(f: &CoeffField, params: &SpaceParams, set: &CubeSet, opts: &MoleculeOptions) -> Result<DecompositionResult> {
    if set.d != f.dim() || params.d != f.dim() {
        return Err(Error::InvalidArgument("cube set, params and field dimensions differ".into()));
    }
    params.require_norm_admissible()?;
    let cubes = set.cubes()?;
    let mut prep = Prepared::new(f, params, opts);
    prep.prepare_scales(&cubes, params, opts);
    let mut grams = GramCache::new(&prep.alpha, prep.kmax());
    grams.fill(&cubes)?;
    let records: Vec<MoleculeRecord> = cubes
        .par_iter()
        .map(|q| {
            let s_q = compute_s_q(f, params, q, opts.refinement)?;
            prep.molecule(q, s_q, params, &grams, opts)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|r| !r.is_zero())
        .collect();
    let mut dec = DecompositionResult {
        cubes: set.clone(),
        records,
        residual: 0.0,
        seq_norm_besov: 0.0,
        seq_norm_tl: None,
    };
    dec.residual = reconstruct(&dec, f)?;
    dec.seq_norm_besov = seq_norm_besov(&dec, params);
    dec.seq_norm_tl = if params.p.is_finite() { Some(seq_norm_tl(&dec, params)?) } else { None };
    Ok(dec)
}

/// `Σ_Q s_Q a_Q` in record order.
pub fn synthesis(dec: &DecompositionResult, alpha: &AlphaIndex) -> Result<CoeffField> {
    let mut acc: BTreeMap<MultiIndex, Vec<f64>> = BTreeMap::new();
    for r in &dec.records {
        for (k, c) in r.a.iter() {
            acc.entry(k.clone()).or_default().push(r.s_q * c);
        }
    }
    CoeffField::from_entries(alpha.clone(), acc.into_iter().map(|(k, v)| (k, compensated_sum(v))))
}

/// `‖f − Σ_Q s_Q a_Q‖_{L²}`, computed in coefficient space.
pub fn reconstruct(dec: &DecompositionResult, f: &CoeffField) -> Result<f64> {
    Ok(f.sub(&synthesis(dec, f.alpha())?)?.l2_norm())
}

fn lr_norm(values: impl Iterator<Item = f64>, r: f64) -> f64 {
    if r.is_infinite() {
        values.fold(0.0, |m, v| m.max(v.abs()))
    } else {
        compensated_sum(values.map(|v| v.abs().powf(r))).powf(1.0 / r)
    }
}

/// `[Σ_ν (Σ_{Q∈D_ν} |s_Q|^p)^{q/p}]^{1/q}`.
pub fn seq_norm_besov(dec: &DecompositionResult, params: &SpaceParams) -> f64 {
    let mut by_scale: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for r in &dec.records {
        by_scale.entry(r.cube.nu).or_default().push(r.s_q);
    }
    let per_scale: Vec<f64> = by_scale.values().map(|v| lr_norm(v.iter().copied(), params.p)).collect();
    lr_norm(per_scale.into_iter(), params.q)
}

/// `‖[Σ_Q (|s_Q| |Q|^{-1/p} χ_Q)^q]^{1/q}‖_p`. The function is constant on the
/// cells of the finest scale, so the integral is an exact cell sum.
pub fn seq_norm_tl(dec: &DecompositionResult, params: &SpaceParams) -> Result<f64> {
    if params.p.is_infinite() {
        return Err(Error::Regime("Triebel–Lizorkin sequence norms need p < ∞".into()));
    }
    let (p, q) = (params.p, params.q);
    let set = &dec.cubes;
    let cells = crate::dyadic::enumerate_cubes(set.nu_lo, set.b, set.d)?;
    let lookup: BTreeMap<(i32, &[u64]), f64> =
        dec.records.iter().map(|r| ((r.cube.nu, r.cube.m.as_slice()), r.s_q)).collect();
    let cell_volume = 2f64.powi(set.nu_lo * set.d as i32);
    let values: Vec<f64> = cells
        .par_iter()
        .map(|cell| {
            let mut terms = Vec::new();
            let mut cube = cell.clone();
            for nu in set.nu_lo..=set.nu_hi {
                if let Some(&s) = lookup.get(&(nu, cube.m.as_slice())) {
                    terms.push(s * cube.volume().powf(-1.0 / p));
                }
                cube = cube.parent();
            }
            lr_norm(terms.into_iter(), q)
        })
        .collect();
    Ok((cell_volume * compensated_sum(values.iter().map(|v| v.powf(p)))).powf(1.0 / p))
}

/// Sup over a lattice of `|(√L)^j b_Q(x)|` against
/// `2^{ν(M−j+σ)} |Q|^{-1/p} (1 + |x − x_Q|/2^ν)^{-d-N}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoleculeReport {
    /// Indexed by `j = 0..=2M`.
    pub ratios: Vec<f64>,
    /// The same sup restricted to `|x − x_Q| >= far_radius`.
    pub far_ratios: Vec<f64>,
    pub far_radius: f64,
}

/// Lattice `(0, x_max]^d` with the given spacing (points at multiples of it).
fn lattice(d: usize, x_max: f64, spacing: f64) -> Vec<Vec<f64>> {
    let n = (x_max / spacing).round() as usize;
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                (1..=n).map(move |i| {
                    let mut q = p.clone();
                    q.push(i as f64 * spacing);
                    q
                })
            })
            .collect();
    }
    out
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn molecule_verify(rec: &MoleculeRecord, x_max: f64, spacing: f64, far_radius: f64) -> Result<MoleculeReport> {
    if rec.is_zero() {
        return Err(Error::InvalidArgument("zero record has no molecule".into()));
    }
    let params = &rec.params;
    let d = rec.b.dim();
    let alpha = rec.b.alpha().clone();
    let kmax = rec.b.max_component();
    let top = 2 * params.big_m as usize;
    let nu = rec.cube.nu as f64;
    let side = rec.cube.side();
    let center = rec.cube.center();
    let vol = if params.p.is_infinite() { 1.0 } else { rec.cube.volume().powf(-1.0 / params.p) };
    let entries: Vec<(MultiIndex, f64, f64)> =
        rec.b.iter().map(|(k, c)| (k.clone(), c, eigenvalue(k.length(), &alpha).sqrt())).collect();
    let points = lattice(d, x_max, spacing);
    let per_point: Vec<(Vec<f64>, bool)> = points
        .par_iter()
        .map(|x| {
            let cols: Vec<Vec<f64>> = (0..d).map(|ax| phi_column(kmax, alpha.values()[ax], x[ax])).collect::<Result<_>>()?;
            let phis: Vec<f64> = entries
                .iter()
                .map(|(k, c, _)| c * k.0.iter().enumerate().map(|(ax, &ki)| cols[ax][ki as usize]).product::<f64>())
                .collect();
            let r = distance(x, &center);
            let shape = (1.0 + r / side).powf(-(d as f64) - params.big_n as f64);
            let ratios = (0..=top)
                .map(|j| {
                    let v = compensated_sum(entries.iter().zip(&phis).map(|((_, _, rl), ph)| rl.powi(j as i32) * ph));
                    let bound = 2f64.powf(nu * (params.big_m as f64 - j as f64 + params.sigma)) * vol * shape;
                    v.abs() / bound
                })
                .collect();
            Ok((ratios, r >= far_radius))
        })
        .collect::<Result<_>>()?;
    let mut ratios = vec![0.0f64; top + 1];
    let mut far_ratios = vec![0.0f64; top + 1];
    for (row, far) in &per_point {
        for j in 0..=top {
            ratios[j] = ratios[j].max(row[j]);
            if *far {
                far_ratios[j] = far_ratios[j].max(row[j]);
            }
        }
    }
    Ok(MoleculeReport { ratios, far_ratios, far_radius })
}

/// Which bound of the Poisson decay estimate for molecules applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DecayCase {
    /// `t <= 2^ν`: `|Q|^{-1/p} 2^{νσ} (t/2^ν)^{m−N−d} (1 + |x−x_Q|/2^ν)^{−N−d}`.
    Small,
    /// `t > 2^ν`: `|Q|^{-1/p} 2^{νσ} (2^ν/t)^M (1 + |x−x_Q|/t)^{−N−d}`.
    Large,
}

pub fn decay_bound(rec: &MoleculeRecord, t: f64, x: &[f64], case: DecayCase) -> f64 {
    let params = &rec.params;
    let d = rec.cube.dim() as f64;
    let side = rec.cube.side();
    let vol = if params.p.is_infinite() { 1.0 } else { rec.cube.volume().powf(-1.0 / params.p) };
    let r = distance(x, &rec.cube.center());
    let n = params.big_n as f64;
    let base = vol * side.powf(params.sigma);
    match case {
        DecayCase::Small => base * (t / side).powf(params.m as f64 - n - d) * (1.0 + r / side).powf(-n - d),
        DecayCase::Large => base * (side / t).powf(params.big_m as f64) * (1.0 + r / t).powf(-n - d),
    }
}

/// `|P_{t,m} a_Q(x)|` over the case-appropriate bound.
pub fn molecule_poisson_decay_check(rec: &MoleculeRecord, t: f64, x: &[f64]) -> Result<f64> {
    rec.params.require_besov_regime()?;
    if rec.is_zero() {
        return Err(Error::InvalidArgument("zero record has no molecule".into()));
    }
    let v = synthesize(&poisson_apply(t, rec.params.m, &rec.a)?, x)?;
    let case = if t <= rec.cube.side() { DecayCase::Small } else { DecayCase::Large };
    Ok(v.abs() / decay_bound(rec, t, x, case))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::phi_eval;
    use statrs::function::gamma::gamma_lr;

    fn wide() -> TGrid {
        TGrid::new(-40, 8, 16)
    }

    #[test]
    fn calderon_scalar_is_one() {
        for &lam in &[1.0, 3.0, 14.0, 50.0] {
            for m1 in 1..=3 {
                for m2 in 1..=3 {
                    let v = calderon_scalar(lam, m1, m2, &wide()).unwrap();
                    assert!((v - 1.0).abs() < 1e-10, "λ={lam} m1={m1} m2={m2}: {v}");
                }
            }
        }
        assert!(matches!(calderon_scalar(50.0, 1, 1, &TGrid::standard()), Err(Error::TailUnresolved(_))));
        assert!(calderon_scalar(0.0, 1, 1, &wide()).is_err());
    }

    #[test]
    fn calderon_constant_matches_factorial() {
        assert!((calderon_constant(2) - 4.0).abs() < 1e-14);
        assert!((calderon_constant(5) - 32.0 / 24.0).abs() < 1e-14);
    }

    #[test]
    fn calderon_field_reconstructs() {
        let alpha = AlphaIndex::new(vec![0.5, 1.0]).unwrap();
        let f = CoeffField::from_entries(
            alpha.clone(),
            [(MultiIndex::new(vec![0, 0]), 1.0), (MultiIndex::new(vec![3, 2]), -0.25), (MultiIndex::new(vec![7, 1]), 2.0)],
        )
        .unwrap();
        let g = calderon_field(&f, 2, 1, &wide()).unwrap();
        for (k, c) in f.iter() {
            assert!((g.get(k) - c).abs() < 1e-9 * c.abs());
        }
        let zero = CoeffField::zero(alpha);
        assert_eq!(calderon_field(&zero, 1, 1, &wide()).unwrap(), zero);
    }

    #[test]
    fn interval_grams_add_up() {
        let whole = interval_gram(0.5, 0.0, 2.0, 6).unwrap();
        let left = interval_gram(0.5, 0.0, 1.0, 6).unwrap();
        let right = interval_gram(0.5, 1.0, 2.0, 6).unwrap();
        for i in 0..whole.len() {
            assert!((whole[i] - left[i] - right[i]).abs() < 1e-14);
        }
        let full = interval_gram(0.5, 0.0, 20.0, 6).unwrap();
        for j in 0..7 {
            for k in 0..7 {
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((full[j * 7 + k] - want).abs() < 1e-12);
            }
        }
    }

    fn params1() -> SpaceParams {
        SpaceParams::with_defaults(1, 0.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn s_q_bounds_and_refinement() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let k = MultiIndex::new(vec![3]);
        let f = CoeffField::unit(alpha.clone(), k.clone()).unwrap();
        let params = params1();
        let q = DyadicCube::new(-1, vec![3]);
        let s4 = compute_s_q(&f, &params, &q, 4).unwrap();
        let s8 = compute_s_q(&f, &params, &q, 8).unwrap();
        let s64 = compute_s_q(&f, &params, &q, 64).unwrap();
        let s128 = compute_s_q(&f, &params, &q, 128).unwrap();
        assert!(s4 <= s8 && s8 <= s64 && s64 <= s128);
        assert!((s128 - s64) / s128 < 1e-3);
        let lam = eigenvalue(3, &alpha);
        let t_sup = (1..=2000)
            .map(|i| poisson_symbol(0.5 * (1.0 + i as f64 / 2000.0), params.m, lam))
            .fold(0.0, f64::max);
        let phi_sup = (1..=2000)
            .map(|i| phi_eval(&k, &alpha, &[1.5 + 0.5 * i as f64 / 2000.0]).unwrap().abs())
            .fold(0.0, f64::max);
        let bound = scale_factor(&q, &params) * t_sup * phi_sup;
        assert!(s128 <= bound * (1.0 + 1e-12), "{s128} vs {bound}");
        let s_scaled = compute_s_q(&f.scaled(-2.5), &params, &q, 4).unwrap();
        assert!((s_scaled - 2.5 * s4).abs() < 1e-14 * s_scaled);
        assert_eq!(compute_s_q(&CoeffField::zero(alpha), &params, &q, 4).unwrap(), 0.0);
    }

    #[test]
    fn molecule_condition_one_and_zero_record() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let f = CoeffField::from_entries(alpha.clone(), [(MultiIndex::new(vec![1]), 1.0), (MultiIndex::new(vec![4]), 0.5)])
            .unwrap();
        let params = params1();
        let opts = MoleculeOptions::for_field(&f);
        let q = DyadicCube::new(0, vec![1]);
        let rec = compute_molecule(&f, &params, &q, &opts).unwrap();
        for (k, c) in rec.b.iter() {
            let lam = eigenvalue(k.length(), &alpha);
            assert_eq!(rec.a.get(k), lam.powf(0.5 * params.big_m as f64) * c);
        }
        let finer = MoleculeOptions { proj_degree: 4 * opts.proj_degree, ..opts };
        let rec_fine = compute_molecule(&f, &params, &q, &finer).unwrap();
        assert!(rec.projection_residual > 0.0 && rec.projection_residual < 1.0);
        assert!(rec_fine.projection_residual < rec.projection_residual);
        let zero = compute_molecule(&CoeffField::zero(alpha), &params, &q, &opts).unwrap();
        assert!(zero.is_zero() && zero.a.is_empty());
    }

    #[test]
    fn slice_partition_reproduces_unlocalized_slice() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let f = CoeffField::from_entries(alpha.clone(), [(MultiIndex::new(vec![0]), 1.0), (MultiIndex::new(vec![2]), -0.7)])
            .unwrap();
        let params = SpaceParams::new(1, 0.0, 2.0, 2.0, 3, 0, 0).unwrap();
        let opts = MoleculeOptions { refinement: 4, t_nodes: 24, proj_degree: 8 };
        let nu = -1;
        let b = 12.0;
        let set = CubeSet::new(1, nu, nu, b).unwrap();
        let dec = decompose(&f, &params, &set, &opts).unwrap();
        let sum = synthesis(&dec, &alpha).unwrap();
        let full = interval_gram(0.5, 0.0, b, 8).unwrap();
        let c = calderon_constant(params.m);
        let tg = TGrid::octave(nu, 24);
        for j in 0..=8u32 {
            let lj = eigenvalue(j as usize, &alpha);
            let want = compensated_sum(f.iter().map(|(k, ck)| {
                let lk = eigenvalue(k.length(), &alpha);
                let w = compensated_sum(
                    tg.nodes().iter().zip(tg.weights()).map(|(&t, &wt)| wt * poisson_symbol(t, 0, lj) * poisson_symbol(t, 3, lk)),
                );
                c * ck * full[k.0[0] as usize * 9 + j as usize] * w
            }));
            let got = sum.get(&MultiIndex::new(vec![j]));
            assert!((got - want).abs() < 1e-12, "j={j}: {got} vs {want}");
        }
    }

    #[test]
    fn reconstruction_of_an_eigenfunction() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let k = MultiIndex::new(vec![2]);
        let f = CoeffField::unit(alpha.clone(), k).unwrap();
        let params = params1();
        let opts = MoleculeOptions::for_field(&f);
        let total = params.m + params.big_m + params.big_n;
        let rl = eigenvalue(2, &alpha).sqrt();
        let mut prev = f64::INFINITY;
        for (lo, hi) in [(-2, 2), (-4, 4), (-6, 6)] {
            let set = CubeSet::new(1, lo, hi, 8.0).unwrap();
            let dec = decompose(&f, &params, &set, &opts).unwrap();
            // Calderón mass over t in [2^lo, 2^{hi+1}].
            let mass = gamma_lr(total as f64, 2.0 * rl * 2f64.powi(hi + 1)) - gamma_lr(total as f64, 2.0 * rl * 2f64.powi(lo));
            assert!((dec.residual - (1.0 - mass)).abs() < 1e-6, "{lo}..{hi}: {} vs {}", dec.residual, 1.0 - mass);
            assert!(dec.residual < prev);
            prev = dec.residual;
        }
        assert!(prev < 0.05);
    }

    #[test]
    fn sequence_norm_identities() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let f = CoeffField::unit(alpha.clone(), MultiIndex::new(vec![1])).unwrap();
        let params = params1();
        let opts = MoleculeOptions::for_field(&f);
        let set = CubeSet::new(1, -1, -1, 4.0).unwrap();
        let dec = decompose(&f, &params, &set, &opts).unwrap();
        let l2 = compensated_sum(dec.records.iter().map(|r| r.s_q * r.s_q)).sqrt();
        assert!((dec.seq_norm_besov - l2).abs() < 1e-14 * l2);
        assert!((dec.seq_norm_tl.unwrap() - dec.seq_norm_besov).abs() < 1e-13 * l2);
        let one = DecompositionResult { records: dec.records[..1].to_vec(), ..dec.clone() };
        assert!((seq_norm_besov(&one, &params) - one.records[0].s_q).abs() < 1e-15);
        assert!((seq_norm_tl(&one, &params).unwrap() - one.records[0].s_q).abs() < 1e-13 * one.records[0].s_q);
    }

    #[test]
    fn homogeneity_of_the_pipeline() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let f = CoeffField::from_entries(alpha.clone(), [(MultiIndex::new(vec![0]), 0.4), (MultiIndex::new(vec![3]), 1.0)])
            .unwrap();
        let params = params1();
        let opts = MoleculeOptions::for_field(&f);
        let set = CubeSet::new(1, -2, 1, 4.0).unwrap();
        let a = decompose(&f, &params, &set, &opts).unwrap();
        let b = decompose(&f.scaled(3.0), &params, &set, &opts).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert!((rb.s_q - 3.0 * ra.s_q).abs() <= 1e-14 * rb.s_q);
            for (k, c) in ra.a.iter() {
                assert!((rb.a.get(k) - c).abs() <= 1e-12 * c.abs().max(1e-300));
            }
        }
        assert!((b.seq_norm_besov - 3.0 * a.seq_norm_besov).abs() < 1e-13 * b.seq_norm_besov);
        assert!((b.residual - 3.0 * a.residual).abs() < 1e-12 * b.residual.max(1e-300));
    }

    #[test]
    fn molecule_bounds_are_finite_and_stable() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let f = CoeffField::from_entries(alpha.clone(), [(MultiIndex::new(vec![0]), 1.0), (MultiIndex::new(vec![2]), 0.5)])
            .unwrap();
        let params = params1();
        let opts = MoleculeOptions::for_field(&f);
        let q = DyadicCube::new(-1, vec![2]);
        let rec = compute_molecule(&f, &params, &q, &opts).unwrap();
        let coarse = molecule_verify(&rec, 8.0, 1.0 / 64.0, 3.0).unwrap();
        let fine = molecule_verify(&rec, 8.0, 1.0 / 128.0, 3.0).unwrap();
        assert_eq!(coarse.ratios.len(), 2 * params.big_m as usize + 1);
        for (a, b) in coarse.ratios.iter().zip(&fine.ratios) {
            assert!(a.is_finite() && *a > 0.0);
            assert!((b - a).abs() <= 0.1 * b, "{a} vs {b}");
        }
        for (far, all) in coarse.far_ratios.iter().zip(&coarse.ratios) {
            assert!(far <= all);
        }
    }

    #[test]
    fn poisson_decay_seam_and_scaling() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let f = CoeffField::from_entries(alpha.clone(), [(MultiIndex::new(vec![0]), 1.0), (MultiIndex::new(vec![2]), 0.5)])
            .unwrap();
        let params = params1();
        assert!(params.besov_regime());
        let opts = MoleculeOptions::for_field(&f);
        let q = DyadicCube::new(-1, vec![2]);
        let rec = compute_molecule(&f, &params, &q, &opts).unwrap();
        let x = [1.7];
        let seam = q.side();
        assert!((decay_bound(&rec, seam, &x, DecayCase::Small) - decay_bound(&rec, seam, &x, DecayCase::Large)).abs() < 1e-15);
        let mut worst: f64 = 0.0;
        for i in -3..=3 {
            let t = seam * 2f64.powi(i);
            for xi in [0.3, 1.25, 2.0, 4.0] {
                let r = molecule_poisson_decay_check(&rec, t, &[xi]).unwrap();
                assert!(r.is_finite());
                worst = worst.max(r);
            }
        }
        assert!(worst > 0.0 && worst < 1e6);
        let rec3 = compute_molecule(&f.scaled(3.0), &params, &q, &opts).unwrap();
        let (r1, r3) = (
            molecule_poisson_decay_check(&rec, 0.7, &x).unwrap(),
            molecule_poisson_decay_check(&rec3, 0.7, &x).unwrap(),
        );
        assert!((r1 - r3).abs() < 1e-12 * r1);
    }

    #[test]
    fn residual_of_zero_and_of_sums() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let params = params1();
        let set = CubeSet::new(1, -2, 2, 4.0).unwrap();
        let zero = CoeffField::zero(alpha.clone());
        let opts = MoleculeOptions::for_field(&zero);
        let dec = decompose(&zero, &params, &set, &opts).unwrap();
        assert!(dec.records.is_empty() && dec.residual == 0.0);
        let f = CoeffField::unit(alpha.clone(), MultiIndex::new(vec![1])).unwrap();
        let g = CoeffField::from_entries(alpha.clone(), [(MultiIndex::new(vec![5]), -0.8)]).unwrap();
        let opts = MoleculeOptions { refinement: 4, t_nodes: 24, proj_degree: 25 };
        let r = |h: &CoeffField| decompose(h, &params, &set, &opts).unwrap().residual;
        let (rf, rg, rfg) = (r(&f), r(&g), r(&f.add(&g).unwrap()));
        assert!(rf > 0.0 && rg > 0.0);
        assert!(rfg <= rf + rg + 1e-14, "{rfg} > {rf} + {rg}");
    }

    #[test]
    fn calderon_field_commutes_with_multipliers() {
        let alpha = AlphaIndex::new(vec![-0.5]).unwrap();
        let f = CoeffField::from_entries(alpha, [(MultiIndex::new(vec![0]), 1.0), (MultiIndex::new(vec![6]), 0.3)]).unwrap();
        let mult = |lam: f64| lam.sqrt() + 1.0 / lam;
        let a = calderon_field(&apply_multiplier(mult, &f), 1, 2, &wide()).unwrap();
        let b = apply_multiplier(mult, &calderon_field(&f, 1, 2, &wide()).unwrap());
        assert_eq!(a, b);
    }
}
