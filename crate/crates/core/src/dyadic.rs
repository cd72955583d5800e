//! Dyadic cubes of `ℝ^d_+`, the uncentered maximal operator on sampled
//! functions, and the subharmonic mean-value check for `|t^{-m} P_{t,m} f|²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::compensated_sum;
use crate::specfun::phi_column;
use crate::spectral::{eigenvalue, poisson_symbol, CoeffField};

/// `Q = Π (m_j 2^ν, (m_j+1) 2^ν]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DyadicCube {
    pub nu: i32,
    pub m: Vec<u64>,
}

impl DyadicCube {
    pub fn new(nu: i32, m: Vec<u64>) -> Self {
        Self { nu, m }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn side(&self) -> f64 {
        2f64.powi(self.nu)
    }

    pub fn volume(&self) -> f64 {
        self.side().powi(self.dim() as i32)
    }

    pub fn corner(&self) -> Vec<f64> {
        let s = self.side();
        self.m.iter().map(|&j| j as f64 * s).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        let s = self.side();
        self.m.iter().map(|&j| (j as f64 + 0.5) * s).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let s = self.side();
        x.len() == self.dim() && x.iter().zip(&self.m).all(|(&xi, &j)| xi > j as f64 * s && xi <= (j + 1) as f64 * s)
    }

    /// The `2^d` cubes of `D_{ν−1}` tiling this one, lexicographic.
    pub fn children(&self) -> Vec<DyadicCube> {
        let d = self.dim();
        (0..1u64 << d)
            .map(|bits| {
                let m = (0..d).map(|i| 2 * self.m[i] + ((bits >> (d - 1 - i)) & 1)).collect();
                DyadicCube::new(self.nu - 1, m)
            })
            .collect()
    }

    pub fn parent(&self) -> DyadicCube {
        DyadicCube::new(self.nu + 1, self.m.iter().map(|j| j / 2).collect())
    }
}

/// All cubes of `D_ν` inside `(0,B]^d`, lexicographic in `m`.
pub fn enumerate_cubes(nu: i32, b: f64, d: usize) -> Result<Vec<DyadicCube>> {
    if !(b > 0.0) || d == 0 {
        return Err(Error::Domain(format!("need B > 0 and d >= 1, got B = {b}, d = {d}")));
    }
    let per_axis = (b / 2f64.powi(nu) + 1e-12).floor() as u64;
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p: Vec<u64>| {
                (0..per_axis).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    Ok(out.into_iter().map(|m| DyadicCube::new(nu, m)).collect())
}

/// Scales `ν_lo..=ν_hi` of dyadic cubes within `(0,B]^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CubeSet {
    pub d: usize,
    pub nu_lo: i32,
    pub nu_hi: i32,
    pub b: f64,
}

impl CubeSet {
    pub fn new(d: usize, nu_lo: i32, nu_hi: i32, b: f64) -> Result<Self> {
        if nu_lo > nu_hi || !(b > 0.0) || d == 0 {
            return Err(Error::Domain(format!("bad cube set: d = {d}, ν in [{nu_lo}, {nu_hi}], B = {b}")));
        }
        Ok(Self { d, nu_lo, nu_hi, b })
    }

    /// By `ν` ascending, then lexicographic `m`.
    pub fn cubes(&self) -> Result<Vec<DyadicCube>> {
        let mut out = Vec::new();
        for nu in self.nu_lo..=self.nu_hi {
            out.extend(enumerate_cubes(nu, self.b, self.d)?);
        }
        Ok(out)
    }
}

/// Cubes used by [`maximal_operator`]: the cubes of a [`CubeSet`], optionally
/// with their half-side translates along every axis. Only cubes inside
/// `(0,B]^d` are kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CubeFamily {
    pub set: CubeSet,
    pub translates: bool,
}

impl CubeFamily {
    pub fn new(set: CubeSet, translates: bool) -> Self {
        Self { set, translates }
    }

    /// Corners (in units of the step `ℓ/2` or `ℓ`) of family cubes at scale `ν` containing `x`.
    fn containing(&self, nu: i32, x: &[f64]) -> Vec<Vec<f64>> {
        let side = 2f64.powi(nu);
        let step = if self.translates { 0.5 * side } else { side };
        let per = (side / step).round() as i64;
        let max_start = ((self.set.b - side) / step + 1e-9).floor() as i64;
        let mut out: Vec<Vec<f64>> = vec![vec![]];
        for &xi in x {
            // Cube (s·step, s·step + side] contains xi.
            let top = ((xi / step).ceil() as i64) - 1;
            let starts: Vec<i64> = ((top - per + 1)..=top).filter(|&s| s >= 0 && s <= max_start).collect();
            out = out
                .into_iter()
                .flat_map(|p| {
                    starts.iter().map(move |&s| {
                        let mut q = p.clone();
                        q.push(s as f64 * step);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

/// Samples of a function on the midpoints of a uniform grid of `n^d` cells on `(0,B]^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    pub d: usize,
    pub b: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn from_fn<F: Fn(&[f64]) -> f64>(d: usize, b: f64, n: usize, f: F) -> Result<Self> {
        if d == 0 || n == 0 || !(b > 0.0) {
            return Err(Error::Domain(format!("bad grid: d = {d}, n = {n}, B = {b}")));
        }
        let h = b / n as f64;
        let total = n.pow(d as u32);
        let values = (0..total)
            .map(|i| {
                let x: Vec<f64> = Self::cell_index(d, n, i).iter().map(|&j| (j as f64 + 0.5) * h).collect();
                f(&x)
            })
            .collect();
        Ok(Self { d, b, n, values })
    }

    pub fn zero(d: usize, b: f64, n: usize) -> Result<Self> {
        Self::from_fn(d, b, n, |_| 0.0)
    }

    pub fn spacing(&self) -> f64 {
        self.b / self.n as f64
    }

    fn cell_index(d: usize, n: usize, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; d];
        for k in (0..d).rev() {
            idx[k] = i % n;
            i /= n;
        }
        idx
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        let h = self.spacing();
        Self::cell_index(self.d, self.n, i).iter().map(|&j| (j as f64 + 0.5) * h).collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * s).collect(), ..self.clone() }
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.d == other.d && self.n == other.n && self.b == other.b
    }
}

/// Summed-area table of `|f|^r` for O(2^d) cube integrals.
struct PrefixSums {
    d: usize,
    n: usize,
    table: Vec<f64>,
}

impl PrefixSums {
    fn new(f: &GridFunction, r: f64) -> Self {
        let (d, n) = (f.d, f.n);
        let side = n + 1;
        let mut table = vec![0.0; side.pow(d as u32)];
        let mut stride = vec![1; d];
        for k in (0..d.saturating_sub(1)).rev() {
            stride[k] = stride[k + 1] * side;
        }
        for (i, v) in f.values.iter().enumerate() {
            let idx = GridFunction::cell_index(d, n, i);
            let pos: usize = idx.iter().zip(&stride).map(|(j, s)| (j + 1) * s).sum();
            table[pos] = v.abs().powf(r);
        }
        for k in 0..d {
            for pos in 0..table.len() {
                if (pos / stride[k]) % side > 0 {
                    table[pos] += table[pos - stride[k]];
                }
            }
        }
        Self { d, n, table }
    }

    /// `Σ |f|^r` over cells with index in `[lo_i, hi_i)` on every axis.
    fn block(&self, lo: &[usize], hi: &[usize]) -> f64 {
        let side = self.n + 1;
        let mut total = 0.0;
        for bits in 0..1usize << self.d {
            let mut pos = 0;
            let mut sign = 1.0;
            for k in 0..self.d {
                let j = if (bits >> k) & 1 == 1 {
                    sign = -sign;
                    lo[k]
                } else {
                    hi[k]
                };
                pos = pos * side + j;
            }
            total += sign * self.table[pos];
        }
        total
    }
}

fn check_refines(f: &GridFunction, family: &CubeFamily) -> Result<()> {
    if family.set.d != f.d {
        return Err(Error::Geometry(format!("family dimension {} vs grid dimension {}", family.set.d, f.d)));
    }
    let step = 2f64.powi(family.set.nu_lo) * if family.translates { 0.5 } else { 1.0 };
    let ratio = step / f.spacing();
    if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::Geometry(format!(
            "grid spacing {} does not refine the cube family (smallest step {step})",
            f.spacing()
        )));
    }
    Ok(())
}

fn maximal_with(f: &GridFunction, sums: &PrefixSums, r: f64, x: &[f64], family: &CubeFamily) -> Result<f64> {
    if x.len() != f.d || x.iter().any(|&xi| !(xi > 0.0 && xi <= f.b)) {
        return Err(Error::Geometry(format!("point {x:?} outside the grid (0, {}]^{}", f.b, f.d)));
    }
    let h = f.spacing();
    let mut best: f64 = 0.0;
    for nu in family.set.nu_lo..=family.set.nu_hi {
        let side = 2f64.powi(nu);
        let cells = (side / h).round() as usize;
        for corner in family.containing(nu, x) {
            let lo: Vec<usize> = corner.iter().map(|c| (c / h).round() as usize).collect();
            let hi: Vec<usize> = lo.iter().map(|l| l + cells).collect();
            let mean = sums.block(&lo, &hi) / (cells as f64).powi(f.d as i32);
            best = best.max(mean.max(0.0));
        }
    }
    Ok(best.powf(1.0 / r))
}

/// `max over family cubes Q ∋ x of (|Q|^{-1} ∫_Q |f|^r)^{1/r}`, integrals by the
/// midpoint rule on the samples. A lower approximation of `M_r f(x)`.
pub fn maximal_operator(f: &GridFunction, r: f64, x: &[f64], family: &CubeFamily) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("maximal operator needs r > 0, got {r}")));
    }
    check_refines(f, family)?;
    maximal_with(f, &PrefixSums::new(f, r), r, x, family)
}

/// [`maximal_operator`] at every sample point.
pub fn maximal_function(f: &GridFunction, r: f64, family: &CubeFamily) -> Result<GridFunction> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("maximal operator needs r > 0, got {r}")));
    }
    check_refines(f, family)?;
    let sums = PrefixSums::new(f, r);
    let values = (0..f.values.len())
        .into_par_iter()
        .map(|i| maximal_with(f, &sums, r, &f.point(i), family))
        .collect::<Result<_>>()?;
    Ok(GridFunction { values, ..f.clone() })
}

/// Both sides of the vector-valued maximal inequality and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeffermanStein {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, reported as 0 when both vanish.
    pub ratio: f64,
}

fn lq_combine(values: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        compensated_sum(values.iter().map(|v| v.abs().powf(q))).powf(1.0 / q)
    }
}

fn lp_norm(values: &[f64], p: f64, cell: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        (cell * compensated_sum(values.iter().map(|v| v.abs().powf(p)))).powf(1.0 / p)
    }
}

/// `‖(Σ (M_r f_n)^q)^{1/q}‖_p` against `‖(Σ |f_n|^q)^{1/q}‖_p` on the grid.
pub fn fefferman_stein_check(fs: &[GridFunction], p: f64, q: f64, r: f64, family: &CubeFamily) -> Result<FeffermanStein> {
    if !(p > 0.0 && q > 0.0 && r > 0.0 && r < p.min(q)) {
        return Err(Error::Domain(format!("need 0 < r < min(p, q), got p = {p}, q = {q}, r = {r}")));
    }
    let first = fs.first().ok_or_else(|| Error::InvalidArgument("empty function sequence".into()))?;
    if fs.iter().any(|f| !f.same_grid(first)) {
        return Err(Error::Geometry("functions sampled on different grids".into()));
    }
    let maximal: Vec<GridFunction> = fs.iter().map(|f| maximal_function(f, r, family)).collect::<Result<_>>()?;
    let pointwise = |seq: &[GridFunction]| -> Vec<f64> {
        (0..first.values.len())
            .map(|i| lq_combine(&seq.iter().map(|g| g.values[i]).collect::<Vec<_>>(), q))
            .collect()
    };
    let cell = first.spacing().powi(first.d as i32);
    let lhs = lp_norm(&pointwise(&maximal), p, cell);
    let rhs = lp_norm(&pointwise(fs), p, cell);
    let ratio = if lhs == 0.0 && rhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(FeffermanStein { lhs, rhs, ratio })
}

/// A seeded corpus of function sequences: sums of cube indicators and
/// Gaussian bumps with random signs, on `n^d` cells over `(0,B]^d`.
pub fn fefferman_stein_corpus(seed: u64, count: usize, len: usize, d: usize, b: f64, n: usize) -> Result<Vec<Vec<GridFunction>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..len)
                .map(|_| {
                    let kind: u32 = rng.gen_range(0..2);
                    let center: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..b)).collect();
                    let width = rng.gen_range(0.05..0.5) * b;
                    let amp = rng.gen_range(-2.0..2.0);
                    GridFunction::from_fn(d, b, n, |x| {
                        if kind == 0 {
                            let inside = x.iter().zip(&center).all(|(xi, ci)| (xi - ci).abs() <= 0.5 * width);
                            if inside {
                                amp
                            } else {
                                0.0
                            }
                        } else {
                            let r2: f64 = x.iter().zip(&center).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
                            amp * (-r2 / (width * width)).exp()
                        }
                    })
                })
                .collect()
        })
        .collect()
}

/// Samples of `u(x,t)` at the midpoints of a uniform grid on a box in `ℝ^d × ℝ_+`
/// (the last coordinate is `t`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
    pub values: Vec<f64>,
    /// Set when negative `x` coordinates were sampled through the multi-even extension.
    pub multi_even: bool,
}

impl SampledBox {
    pub fn from_fn<F: Fn(&[f64]) -> f64 + Sync>(lo: &[f64], hi: &[f64], n: &[usize], u: F) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != n.len() || lo.len() < 2 {
            return Err(Error::Geometry("box needs matching lo, hi, n with at least one x axis and t".into()));
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a < b)) || n.contains(&0) {
            return Err(Error::Geometry(format!("degenerate box {lo:?}..{hi:?}")));
        }
        if !(lo[lo.len() - 1] > 0.0) {
            return Err(Error::Geometry("box must lie in t > 0".into()));
        }
        let total: usize = n.iter().product();
        let mut out = Self { lo: lo.to_vec(), hi: hi.to_vec(), n: n.to_vec(), values: Vec::new(), multi_even: false };
        out.values = (0..total).into_par_iter().map(|i| u(&out.point(i))).collect();
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    fn spacing(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / self.n[k] as f64
    }

    fn index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = i % self.n[k];
            i /= self.n[k];
        }
        idx
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.index(i).iter().enumerate().map(|(k, &j)| self.lo[k] + (j as f64 + 0.5) * self.spacing(k)).collect()
    }
}

/// `|t^{-m} P_{t,m} f(x)|²` sampled on a box; `x` with negative coordinates
/// is evaluated at `|x|` (multi-even extension).
pub fn pam_squared_box(f: &CoeffField, m: u32, lo: &[f64], hi: &[f64], n: &[usize]) -> Result<SampledBox> {
    let d = f.dim();
    if lo.len() != d + 1 {
        return Err(Error::Geometry(format!("box must have d + 1 = {} axes", d + 1)));
    }
    let crosses = lo[..d].iter().any(|&v| v < 0.0);
    if crosses && f.alpha().values().iter().all(|&a| a > -0.5 && a < 0.5) {
        return Err(Error::Domain("multi-even extension needs some α_i outside (−1/2, 1/2)".into()));
    }
    let kmax = f.max_component();
    let alpha = f.alpha().clone();
    let entries: Vec<_> = f.iter().map(|(k, c)| (k.clone(), c)).collect();
    let mut boxed = SampledBox::from_fn(lo, hi, n, |p| {
        let t = p[d];
        let columns: Vec<Vec<f64>> = (0..d)
            .map(|i| phi_column(kmax, alpha.values()[i], p[i].abs()).unwrap_or_else(|_| vec![f64::NAN; kmax + 1]))
            .collect();
        let v = compensated_sum(entries.iter().map(|(k, c)| {
            let lam = eigenvalue(k.length(), &alpha);
            let phi: f64 = k.0.iter().enumerate().map(|(i, &ki)| columns[i][ki as usize]).product();
            c * poisson_symbol(t, m, lam) * t.powi(-(m as i32)) * phi
        }));
        v * v
    })?;
    boxed.multi_even = crosses;
    if boxed.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: lo.to_vec(), value: f64::NAN });
    }
    Ok(boxed)
}

/// A cube in `ℝ^d × ℝ_+` by center and side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimeCube {
    pub center: Vec<f64>,
    pub side: f64,
}

impl SpaceTimeCube {
    pub fn dilate(&self, mu: f64) -> Self {
        Self { center: self.center.clone(), side: self.side * mu }
    }

    fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.center).all(|(a, c)| (a - c).abs() <= 0.5 * self.side)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanValueCheck {
    pub sup: f64,
    pub mean: f64,
    /// `sup / mean`, 0 when both vanish.
    pub ratio: f64,
    pub ok: bool,
}

/// `sup_Q u <= (|μQ|^{-1} ∫_{μQ} u^r)^{1/r} (1 + tol)` over the samples.
///
/// The inequality carries no constant here, so it can only hold for cubes
/// small against the scale on which `u` varies; for `u = e^{x_1}` and
/// `Q = [0,1]^2`, `μ = 2` it fails by a factor 1.4.
pub fn subharmonic_mean_check(u: &SampledBox, q: &SpaceTimeCube, mu: f64, r: f64, tol: f64) -> Result<MeanValueCheck> {
    if !(mu > 1.0 && mu <= 2.0) || !(r > 0.0) {
        return Err(Error::Domain(format!("need 1 < μ <= 2 and r > 0, got μ = {mu}, r = {r}")));
    }
    if q.center.len() != u.dim() || !(q.side > 0.0) {
        return Err(Error::Geometry("cube does not match the sampled box".into()));
    }
    let twice = q.dilate(2.0);
    for k in 0..u.dim() {
        let (a, b) = (twice.center[k] - twice.side / 2.0, twice.center[k] + twice.side / 2.0);
        if a < u.lo[k] || b > u.hi[k] {
            return Err(Error::Geometry(format!("closure of 2Q leaves the sampled box on axis {k}")));
        }
        if u.spacing(k) > q.side / 8.0 * (1.0 + 1e-12) {
            return Err(Error::Geometry(format!("samples refine Q by fewer than 8 per side on axis {k}")));
        }
    }
    let d = u.dim() - 1;
    if !u.multi_even && twice.center[..d].iter().any(|c| c - twice.side / 2.0 < 0.0) {
        return Err(Error::Geometry("2Q crosses a coordinate hyperplane but samples are not extended".into()));
    }
    let big = q.dilate(mu);
    let mut sup: f64 = 0.0;
    let mut inside = Vec::new();
    for (i, &v) in u.values.iter().enumerate() {
        let p = u.point(i);
        if q.contains(&p) {
            sup = sup.max(v);
        }
        if big.contains(&p) {
            inside.push(v.max(0.0).powf(r));
        }
    }
    if inside.is_empty() {
        return Err(Error::Geometry("no samples in μQ".into()));
    }
    let mean = (compensated_sum(inside.iter().copied()) / inside.len() as f64).powf(1.0 / r);
    let ratio = if sup == 0.0 && mean == 0.0 { 0.0 } else { sup / mean };
    Ok(MeanValueCheck { sup, mean, ratio, ok: sup <= mean * (1.0 + tol) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{AlphaIndex, MultiIndex};

    #[test]
    fn enumerate_small_cases() {
        let c = enumerate_cubes(0, 2.0, 1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].corner(), vec![0.0]);
        assert_eq!(c[1].corner(), vec![1.0]);
        let c = enumerate_cubes(-1, 1.0, 2).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|q| q.side() == 0.5));
        assert_eq!(c.iter().map(|q| q.volume()).sum::<f64>(), 1.0);
    }

    #[test]
    fn children_tile_parent() {
        let q = DyadicCube::new(1, vec![3, 0, 5]);
        let kids = q.children();
        assert_eq!(kids.len(), 8);
        assert!(kids.iter().all(|k| k.parent() == q));
        assert_eq!(kids.iter().map(|k| k.volume()).sum::<f64>(), q.volume());
    }

    #[test]
    fn indicator_maximal_values() {
        let f = GridFunction::from_fn(1, 4.0, 128, |x| if x[0] <= 1.0 { 1.0 } else { 0.0 }).unwrap();
        let fam = CubeFamily::new(CubeSet::new(1, -4, 2, 4.0).unwrap(), true);
        assert!((maximal_operator(&f, 1.0, &[0.5], &fam).unwrap() - 1.0).abs() < 1e-15);
        let mut brute: f64 = 0.0;
        for nu in -4..=2 {
            let side = 2f64.powi(nu);
            let mut s = 0.0;
            while s + side <= 4.0 + 1e-12 {
                if 2.0 > s && 2.0 <= s + side {
                    let overlap = (s + side).min(1.0) - s.min(1.0);
                    brute = brute.max(overlap / side);
                }
                s += side / 2.0;
            }
        }
        let v = maximal_operator(&f, 1.0, &[2.0], &fam).unwrap();
        assert!((v - brute).abs() < 1e-12, "{v} vs {brute}");
        assert!(maximal_operator(&f, 1.0, &[5.0], &fam).is_err());
    }

    #[test]
    fn maximal_dominates_samples_and_grows_with_family() {
        let f = GridFunction::from_fn(2, 2.0, 64, |x| (3.0 * x[0]).sin() * (-x[1]).exp()).unwrap();
        let small = CubeFamily::new(CubeSet::new(2, -5, -1, 2.0).unwrap(), false);
        let large = CubeFamily::new(CubeSet::new(2, -5, 1, 2.0).unwrap(), false);
        let coarse = CubeFamily::new(CubeSet::new(2, -4, 0, 2.0).unwrap(), false);
        let shifted = CubeFamily::new(CubeSet::new(2, -4, 0, 2.0).unwrap(), true);
        let ms = maximal_function(&f, 1.0, &small).unwrap();
        let ml = maximal_function(&f, 1.0, &large).unwrap();
        let mc = maximal_function(&f, 0.5, &coarse).unwrap();
        let mt = maximal_function(&f, 0.5, &shifted).unwrap();
        for i in 0..f.values.len() {
            assert!(ms.values[i] >= f.values[i].abs() - 1e-12);
            assert!(ml.values[i] >= ms.values[i]);
            assert!(mt.values[i] >= mc.values[i]);
        }
    }

    #[test]
    fn fefferman_stein_conventions() {
        let fam = CubeFamily::new(CubeSet::new(1, -4, 1, 2.0).unwrap(), true);
        let z = GridFunction::zero(1, 2.0, 64).unwrap();
        let r = fefferman_stein_check(&[z.clone(), z], 2.0, 2.0, 1.0, &fam).unwrap();
        assert_eq!(r.ratio, 0.0);
        let f = GridFunction::from_fn(1, 2.0, 64, |x| if x[0] <= 0.5 { 1.0 } else { 0.0 }).unwrap();
        let a = fefferman_stein_check(std::slice::from_ref(&f), 2.0, 2.0, 1.0, &fam).unwrap();
        let b = fefferman_stein_check(&[f.scaled(2.0)], 2.0, 2.0, 1.0, &fam).unwrap();
        assert!(a.ratio.is_finite() && a.ratio >= 1.0);
        assert!((a.ratio - b.ratio).abs() <= 1e-14 * a.ratio);
        assert!(fefferman_stein_check(&[f], 2.0, 2.0, 2.0, &fam).is_err());
    }

    #[test]
    fn mean_value_for_eigenfunction() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let f = CoeffField::unit(alpha, MultiIndex::new(vec![2])).unwrap();
        let u = pam_squared_box(&f, 2, &[1.4875, 1.4875], &[1.5125, 1.5125], &[40, 40]).unwrap();
        let q = SpaceTimeCube { center: vec![1.5, 1.5], side: 0.01 };
        let c = subharmonic_mean_check(&u, &q, 2.0, 1.0, 0.05).unwrap();
        assert!(c.ok, "{c:?}");
        let wide = pam_squared_box(&f, 2, &[0.5, 0.5], &[2.5, 2.5], &[80, 80]).unwrap();
        let big = SpaceTimeCube { center: vec![1.5, 1.5], side: 0.4 };
        let c = subharmonic_mean_check(&wide, &big, 2.0, 1.0, 0.05).unwrap();
        assert!(c.ratio > 1.05 && c.ratio.is_finite(), "{c:?}");
    }

    #[test]
    fn mean_value_across_the_boundary() {
        let alpha = AlphaIndex::new(vec![0.5]).unwrap();
        let f = CoeffField::unit(alpha, MultiIndex::new(vec![1])).unwrap();
        let u = pam_squared_box(&f, 2, &[-0.0125, 1.4875], &[0.0125, 1.5125], &[40, 40]).unwrap();
        assert!(u.multi_even);
        let q = SpaceTimeCube { center: vec![0.0, 1.5], side: 0.01 };
        let c = subharmonic_mean_check(&u, &q, 2.0, 1.0, 0.05).unwrap();
        assert!(c.ok, "{c:?}");
    }

    #[test]
    fn mean_value_for_constant() {
        let u = SampledBox::from_fn(&[0.0, 0.5], &[2.0, 2.5], &[64, 64], |_| 3.0).unwrap();
        let q = SpaceTimeCube { center: vec![1.0, 1.5], side: 0.5 };
        let c = subharmonic_mean_check(&u, &q, 1.5, 2.0, 0.0).unwrap();
        assert!((c.sup - c.mean).abs() < 1e-14);
    }

    #[test]
    fn geometry_refusals() {
        let u = SampledBox::from_fn(&[0.0, 0.5], &[2.0, 2.5], &[16, 16], |_| 1.0).unwrap();
        let big = SpaceTimeCube { center: vec![1.0, 1.5], side: 1.5 };
        assert!(subharmonic_mean_check(&u, &big, 2.0, 1.0, 0.05).is_err());
        let coarse = SpaceTimeCube { center: vec![1.0, 1.5], side: 0.5 };
        assert!(subharmonic_mean_check(&u, &coarse, 2.0, 1.0, 0.05).is_err());
    }
}
