//! Finite spectral calculus for `L_α`: coefficient fields, analysis/synthesis on
//! tensor grids, diagonal multipliers and the Poisson-type operators `P_{t,m}`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{compensated_sum, evaluate_nodes, CompensatedSum, QuadGrid};
use crate::schwartz::p_norm;
use crate::specfun::{ell_column, phi_column, AlphaIndex, MultiIndex};

/// `λ_n^α = 4n + 2|α| + 2d`.
pub fn eigenvalue(n: usize, alpha: &AlphaIndex) -> f64 {
    4.0 * n as f64 + 2.0 * alpha.length() + 2.0 * alpha.dim() as f64
}

/// Finite expansion `Σ c_k φ_k^α`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffField {
    alpha: AlphaIndex,
    entries: BTreeMap<MultiIndex, f64>,
}

#[derive(Serialize, Deserialize)]
struct CoeffFieldRepr {
    alpha: Vec<f64>,
    d: usize,
    entries: Vec<(Vec<u32>, f64)>,
}

impl Serialize for CoeffField {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CoeffFieldRepr {
            alpha: self.alpha.values().to_vec(),
            d: self.dim(),
            entries: self.entries.iter().map(|(k, &c)| (k.0.clone(), c)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CoeffField {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = CoeffFieldRepr::deserialize(de)?;
        let alpha = AlphaIndex::new(repr.alpha).map_err(D::Error::custom)?;
        if alpha.dim() != repr.d {
            return Err(D::Error::custom(format!("alpha has {} components but d = {}", alpha.dim(), repr.d)));
        }
        let mut f = CoeffField::zero(alpha);
        for (k, c) in repr.entries {
            f.insert(MultiIndex(k), c).map_err(D::Error::custom)?;
        }
        Ok(f)
    }
}

impl CoeffField {
    pub fn zero(alpha: AlphaIndex) -> Self {
        Self { alpha, entries: BTreeMap::new() }
    }

    /// Single normalized eigenfunction `φ_k^α`.
    pub fn unit(alpha: AlphaIndex, k: MultiIndex) -> Result<Self> {
        let mut f = Self::zero(alpha);
        f.insert(k, 1.0)?;
        Ok(f)
    }

    pub fn from_entries<I: IntoIterator<Item = (MultiIndex, f64)>>(alpha: AlphaIndex, entries: I) -> Result<Self> {
        let mut f = Self::zero(alpha);
        for (k, c) in entries {
            f.insert(k, c)?;
        }
        Ok(f)
    }

    /// Set `c_k` (overwrites). Zero coefficients are stored as given.
    pub fn insert(&mut self, k: MultiIndex, c: f64) -> Result<()> {
        if k.dim() != self.dim() {
            return Err(Error::InvalidArgument(format!("index of dimension {} in a {}-dimensional field", k.dim(), self.dim())));
        }
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite coefficient {c} at {:?}", k.0)));
        }
        self.entries.insert(k, c);
        Ok(())
    }

    pub fn alpha(&self) -> &AlphaIndex {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.alpha.dim()
    }

    pub fn get(&self, k: &MultiIndex) -> f64 {
        self.entries.get(k).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in lexicographic index order.
    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> + '_ {
        self.entries.iter().map(|(k, &c)| (k, c))
    }

    /// Largest `|k|` present (0 for an empty field).
    pub fn degree(&self) -> usize {
        self.entries.keys().map(|k| k.length()).max().unwrap_or(0)
    }

    /// Largest single component `k_i` present.
    pub fn max_component(&self) -> usize {
        self.entries.keys().flat_map(|k| k.0.iter().map(|&v| v as usize)).max().unwrap_or(0)
    }

    pub fn l2_norm(&self) -> f64 {
        compensated_sum(self.entries.values().map(|c| c * c)).sqrt()
    }

    /// Shell energies `(Σ_{|k|=n} c_k²)^{1/2}` for `n = 0..=degree`.
    pub fn shell_norms(&self) -> Vec<f64> {
        let mut acc = vec![CompensatedSum::new(); self.degree() + 1];
        for (k, c) in self.iter() {
            acc[k.length()].add(c * c);
        }
        acc.iter().map(|s| s.value().sqrt()).collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_entries(|_, c| s * c)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.alpha != other.alpha {
            return Err(Error::InvalidArgument("fields with different alpha".into()));
        }
        let mut out = self.clone();
        for (k, c) in other.iter() {
            *out.entries.entry(k.clone()).or_insert(0.0) += c;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    /// Entry-wise map `c_k ↦ g(k, c_k)` keeping the index set.
    pub fn map_entries<G: Fn(&MultiIndex, f64) -> f64>(&self, g: G) -> Self {
        Self {
            alpha: self.alpha.clone(),
            entries: self.entries.iter().map(|(k, &c)| (k.clone(), g(k, c))).collect(),
        }
    }

    /// Dense coefficient tensor of shape `(kmax+1)^d`, row-major.
    pub fn dense(&self, kmax: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        let side = kmax + 1;
        let mut out = vec![0.0; side.pow(d as u32)];
        for (k, c) in self.iter() {
            let mut idx = 0;
            for &v in &k.0 {
                let v = v as usize;
                if v > kmax {
                    return Err(Error::InvalidArgument(format!("index {:?} exceeds table size {kmax}", k.0)));
                }
                idx = idx * side + v;
            }
            out[idx] += c;
        }
        Ok(out)
    }
}

/// `Σ_k c_k φ_k^α(x)`.
pub fn synthesize(f: &CoeffField, x: &[f64]) -> Result<f64> {
    if x.len() != f.dim() {
        return Err(Error::InvalidArgument(format!("point of dimension {} for a {}-dimensional field", x.len(), f.dim())));
    }
    if f.is_empty() {
        return Ok(0.0);
    }
    let kmax = f.max_component();
    let cols: Vec<Vec<f64>> = x
        .iter()
        .zip(f.alpha().values())
        .map(|(&xi, &a)| phi_column(kmax, a, xi))
        .collect::<Result<_>>()?;
    Ok(compensated_sum(f.iter().map(|(k, c)| {
        c * k.0.iter().zip(&cols).map(|(&ki, col)| col[ki as usize]).product::<f64>()
    })))
}

/// Which Laguerre family a basis table holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Hermite,
    Convolution,
}

/// Per-axis tables `φ_j^{α_i}(x_n)` on the nodes of a [`QuadGrid`], `j <= kmax`.
#[derive(Debug, Clone)]
pub struct GridBasis {
    pub kmax: usize,
    pub shape: Vec<usize>,
    /// `tables[i][n * (kmax+1) + j]`.
    pub tables: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    grid: QuadGrid,
}

impl GridBasis {
    pub fn new(alpha: &AlphaIndex, kmax: usize, grid: &QuadGrid) -> Result<Self> {
        Self::with_family(alpha, kmax, grid, Family::Hermite)
    }

    pub fn with_family(alpha: &AlphaIndex, kmax: usize, grid: &QuadGrid, family: Family) -> Result<Self> {
        if grid.dim() != alpha.dim() {
            return Err(Error::InvalidArgument("grid and alpha dimensions differ".into()));
        }
        let tables = grid
            .axes
            .iter()
            .zip(alpha.values())
            .map(|(ax, &a)| {
                let cols: Vec<Vec<f64>> = ax
                    .nodes
                    .par_iter()
                    .map(|&x| match family {
                        Family::Hermite => phi_column(kmax, a, x),
                        Family::Convolution => ell_column(kmax, a, x),
                    })
                    .collect::<Result<_>>()?;
                Ok(cols.into_iter().flatten().collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let tensor = grid.tensor();
        Ok(Self {
            kmax,
            shape: grid.axes.iter().map(|a| a.len()).collect(),
            tables,
            weights: tensor.weights,
            grid: grid.clone(),
        })
    }

    pub fn grid(&self) -> &QuadGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    /// Dense coefficients `Σ_n w_n v_n Π φ_{k_i}(x_{n,i})` of shape `(kmax+1)^d`.
    pub fn project_dense(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.weights.len());
        let side = self.kmax + 1;
        let mut data: Vec<f64> = values.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        let mut shape = self.shape.clone();
        for axis in 0..self.dim() {
            let tab = &self.tables[axis];
            data = contract_axis(&data, &shape, axis, side, |n, k| tab[n * side + k]);
            shape[axis] = side;
        }
        data
    }

    /// Nodal values of the dense coefficient tensor (shape `(kmax+1)^d`).
    pub fn synthesize_dense(&self, coeffs: &[f64]) -> Vec<f64> {
        let side = self.kmax + 1;
        assert_eq!(coeffs.len(), side.pow(self.dim() as u32));
        let mut data = coeffs.to_vec();
        let mut shape = vec![side; self.dim()];
        for axis in 0..self.dim() {
            let tab = &self.tables[axis];
            let n_out = self.shape[axis];
            data = contract_axis(&data, &shape, axis, n_out, |k, n| tab[n * side + k]);
            shape[axis] = n_out;
        }
        data
    }

    /// Nodal values of a field.
    pub fn synthesize(&self, f: &CoeffField) -> Result<Vec<f64>> {
        Ok(self.synthesize_dense(&f.dense(self.kmax)?))
    }

    /// Project nodal values onto `{φ_k : |k| <= degree}`.
    pub fn project(&self, alpha: &AlphaIndex, values: &[f64], degree: usize) -> Result<CoeffField> {
        let dense = self.project_dense(values);
        let side = self.kmax + 1;
        let mut f = CoeffField::zero(alpha.clone());
        for k in MultiIndex::all_up_to(self.dim(), degree.min(self.kmax)) {
            let idx = k.0.iter().fold(0usize, |acc, &v| acc * side + v as usize);
            f.insert(k, dense[idx])?;
        }
        Ok(f)
    }

    /// Per-axis quadrature Gram matrices `G_i[j][k] = Σ_n w_n φ_j(x_n) φ_k(x_n)`.
    pub fn axis_grams(&self) -> Vec<Vec<f64>> {
        let side = self.kmax + 1;
        self.grid
            .axes
            .iter()
            .zip(&self.tables)
            .map(|(ax, tab)| {
                let mut g = vec![0.0; side * side];
                for j in 0..side {
                    for k in j..side {
                        let v = compensated_sum(
                            ax.weights.iter().enumerate().map(|(n, w)| w * tab[n * side + j] * tab[n * side + k]),
                        );
                        g[j * side + k] = v;
                        g[k * side + j] = v;
                    }
                }
                g
            })
            .collect()
    }
}

/// Contract one axis of a row-major tensor: `out[.., o, ..] = Σ_i data[.., i, ..] * coef(i, o)`.
fn contract_axis<C>(data: &[f64], shape: &[usize], axis: usize, out_len: usize, coef: C) -> Vec<f64>
where
    C: Fn(usize, usize) -> f64 + Sync,
{
    let in_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (0..outer * out_len * inner)
        .into_par_iter()
        .map(|flat| {
            let i = flat % inner;
            let o = (flat / inner) % out_len;
            let p = flat / (inner * out_len);
            let mut acc = CompensatedSum::new();
            for ii in 0..in_len {
                acc.add(data[(p * in_len + ii) * inner + i] * coef(ii, o));
            }
            acc.value()
        })
        .collect()
}

/// Gram matrix `<φ_j, φ_k>` over `indices` under the tensor rule of `grid`.
///
/// The tensor rule of a product of one-dimensional factors is the product of
/// the per-axis rules, so the matrix is assembled from per-axis Grams.
pub fn gram_matrix(alpha: &AlphaIndex, indices: &[MultiIndex], grid: &QuadGrid, family: Family) -> Result<Vec<Vec<f64>>> {
    let kmax = indices.iter().flat_map(|k| k.0.iter().map(|&v| v as usize)).max().unwrap_or(0);
    let basis = GridBasis::with_family(alpha, kmax, grid, family)?;
    let grams = if family == Family::Convolution {
        // ℓ is orthonormal against x^{2α+1} dx; fold the weight into each axis.
        let side = kmax + 1;
        grid.axes
            .iter()
            .zip(&basis.tables)
            .zip(alpha.values())
            .map(|((ax, tab), &a)| {
                let mut g = vec![0.0; side * side];
                for j in 0..side {
                    for k in j..side {
                        let v = compensated_sum(ax.weights.iter().zip(&ax.nodes).enumerate().map(|(n, (w, &x))| {
                            w * x.powf(2.0 * a + 1.0) * tab[n * side + j] * tab[n * side + k]
                        }));
                        g[j * side + k] = v;
                        g[k * side + j] = v;
                    }
                }
                g
            })
            .collect()
    } else {
        basis.axis_grams()
    };
    let side = kmax + 1;
    Ok(indices
        .iter()
        .map(|j| {
            indices
                .iter()
                .map(|k| {
                    j.0.iter()
                        .zip(&k.0)
                        .zip(&grams)
                        .map(|((&a, &b), g)| g[a as usize * side + b as usize])
                        .product()
                })
                .collect()
        })
        .collect())
}

/// Coefficients `<f, φ_k^α>` for `|k| <= degree` by quadrature on `grid`.
pub fn analyze<F>(f: F, degree: usize, alpha: &AlphaIndex, grid: &QuadGrid) -> Result<CoeffField>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let basis = GridBasis::new(alpha, degree, grid)?;
    let values = evaluate_nodes(f, &grid.tensor())?;
    basis.project(alpha, &values, degree)
}

/// `c_k ↦ m(λ_{|k|}) c_k`.
pub fn apply_multiplier<M: Fn(f64) -> f64>(m_fn: M, f: &CoeffField) -> CoeffField {
    let alpha = f.alpha().clone();
    f.map_entries(|k, c| m_fn(eigenvalue(k.length(), &alpha)) * c)
}

/// Spectral symbol of `P_{t,m}`: `(t√λ)^m e^{-t√λ}`.
pub fn poisson_symbol(t: f64, m: u32, lambda: f64) -> f64 {
    let u = t * lambda.sqrt();
    if m == 0 {
        (-u).exp()
    } else {
        (m as f64 * u.ln() - u).exp()
    }
}

/// `P_{t,m} f`.
pub fn poisson_apply(t: f64, m: u32, f: &CoeffField) -> Result<CoeffField> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t = {t} must be positive")));
    }
    Ok(apply_multiplier(|lam| poisson_symbol(t, m, lam), f))
}

/// One row of a limit profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRow {
    pub t: f64,
    pub norm: f64,
}

/// `p_r` norms of `P_{t,m} f` (or of `(I - P_t) f` when `complement`) along `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitProfile {
    pub m: u32,
    pub r: f64,
    pub complement: bool,
    pub rows: Vec<ProfileRow>,
    /// Norms increase with `t` up to the peak.
    pub small_t_monotone: bool,
    /// Norms decrease with `t` beyond the peak.
    pub large_t_monotone: bool,
}

pub fn limit_profile(f: &CoeffField, m: u32, t_list: &[f64], r: f64, complement: bool) -> Result<LimitProfile> {
    let mut ts = t_list.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rows = Vec::with_capacity(ts.len());
    for &t in &ts {
        let g = poisson_apply(t, m, f)?;
        let g = if complement { f.sub(&g)? } else { g };
        rows.push(ProfileRow { t, norm: p_norm(&g, r)? });
    }
    let peak = rows
        .iter()
        .enumerate()
        .fold(0, |best, (i, row)| if row.norm > rows[best].norm { i } else { best });
    let small_t_monotone = rows[..=peak.min(rows.len().saturating_sub(1))].windows(2).all(|w| w[0].norm <= w[1].norm);
    let large_t_monotone = rows[peak..].windows(2).all(|w| w[0].norm >= w[1].norm);
    Ok(LimitProfile { m, r, complement, rows, small_t_monotone, large_t_monotone })
}

/// Smoothness/integrability parameters with the derived `r_0` and `m_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceParams {
    pub d: usize,
    pub sigma: f64,
    #[serde(with = "exponent")]
    pub p: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    pub m: u32,
    #[serde(rename = "M")]
    pub big_m: u32,
    #[serde(rename = "N")]
    pub big_n: u32,
}

impl SpaceParams {
    pub fn new(d: usize, sigma: f64, p: f64, q: f64, m: u32, big_m: u32, big_n: u32) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !(p > 0.0) || !(q > 0.0) {
            return Err(Error::InvalidArgument(format!("exponents p = {p}, q = {q} must be positive")));
        }
        if !sigma.is_finite() {
            return Err(Error::InvalidArgument("sigma must be finite".into()));
        }
        Ok(Self { d, sigma, p, q, m, big_m, big_n })
    }

    /// Parameters with `m = ⌊m_0⌋ + 1` and the smallest `N`, `M` of the
    /// molecular regime compatible with it (`m` raised if needed).
    pub fn with_defaults(d: usize, sigma: f64, p: f64, q: f64) -> Result<Self> {
        let mut s = Self::new(d, sigma, p, q, 0, 0, 0)?;
        s.big_n = (d as f64 * (1.0 / s.r0() - 1.0)).floor() as u32 + 1;
        let m_min = s.m0().floor() as u32 + 1;
        let m_regime = (sigma.max(0.0) + s.big_n as f64 + d as f64).floor() as u32 + 1;
        s.m = m_min.max(m_regime);
        s.big_m = ((d as f64 / s.r0() - sigma).max(s.m as f64)).floor() as u32 + 1;
        Ok(s)
    }

    /// Parameters with `m = ⌊m_0⌋ + 1` and `M = N = 0`.
    pub fn norm_only(d: usize, sigma: f64, p: f64, q: f64) -> Result<Self> {
        let mut s = Self::new(d, sigma, p, q, 0, 0, 0)?;
        s.m = s.m0().floor() as u32 + 1;
        Ok(s)
    }

    pub fn with_m(mut self, m: u32) -> Self {
        self.m = m;
        self
    }

    /// `r_0 = min(1, p, q)`.
    pub fn r0(&self) -> f64 {
        1f64.min(self.p).min(self.q)
    }

    /// `m_0 = d + max(σ,0) + ⌊d(1/r_0 − 1)⌋ + 1`.
    pub fn m0(&self) -> f64 {
        let d = self.d as f64;
        d + self.sigma.max(0.0) + (d * (1.0 / self.r0() - 1.0)).floor() + 1.0
    }

    pub fn norm_admissible(&self) -> bool {
        self.m as f64 > self.m0()
    }

    fn molecular_common(&self) -> bool {
        let d = self.d as f64;
        let (m, big_m, n) = (self.m as f64, self.big_m as f64, self.big_n as f64);
        big_m > (d / self.r0() - self.sigma).max(m) && m > self.sigma.max(0.0) + n + d
    }

    /// Besov synthesis regime.
    pub fn besov_regime(&self) -> bool {
        self.molecular_common() && (self.big_n as f64) > self.d as f64 * (1.0 / self.r0() - 1.0)
    }

    /// Triebel–Lizorkin synthesis regime.
    pub fn tl_regime(&self) -> bool {
        self.molecular_common() && (self.big_n as f64) > self.d as f64 * (2.0 / self.r0() - 1.0)
    }

    pub fn require_norm_admissible(&self) -> Result<()> {
        if self.norm_admissible() {
            Ok(())
        } else {
            Err(Error::Regime(format!("m = {} must exceed m_0 = {}", self.m, self.m0())))
        }
    }

    pub fn require_besov_regime(&self) -> Result<()> {
        if self.besov_regime() {
            Ok(())
        } else {
            Err(Error::Regime(format!(
                "(m, M, N) = ({}, {}, {}) outside the molecular regime for d = {}, sigma = {}, r_0 = {}",
                self.m, self.big_m, self.big_n, self.d, self.sigma, self.r0()
            )))
        }
    }
}

/// Serde for exponents in `(0, ∞]`, writing `∞` as the string `"inf"`.
pub mod exponent {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        use serde::de::Error;
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" || s == "infinity" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(D::Error::custom(format!("bad exponent {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::phi_eval;
    use proptest::prelude::*;

    fn a1(v: f64) -> AlphaIndex {
        AlphaIndex::uniform(v, 1).unwrap()
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(eigenvalue(0, &a1(0.5)), 3.0);
        assert_eq!(eigenvalue(0, &a1(-0.5)), 1.0);
        assert_eq!(eigenvalue(2, &AlphaIndex::uniform(0.5, 2).unwrap()), 14.0);
    }

    #[test]
    fn synthesize_single_entry_and_zero() {
        let alpha = AlphaIndex::new(vec![0.5, 1.0]).unwrap();
        let k = MultiIndex::new(vec![3, 1]);
        let f = CoeffField::unit(alpha.clone(), k.clone()).unwrap();
        let x = [0.7, 1.9];
        assert!((synthesize(&f, &x).unwrap() - phi_eval(&k, &alpha, &x).unwrap()).abs() < 1e-14);
        assert_eq!(synthesize(&CoeffField::zero(alpha), &x).unwrap(), 0.0);
    }

    #[test]
    fn orthonormality_one_dim() {
        for &a in &[-0.5, 0.5, 1.0, 2.3] {
            let alpha = a1(a);
            let grid = QuadGrid::for_spectrum(1, eigenvalue(12, &alpha));
            let idx = MultiIndex::all_up_to(1, 12);
            let g = gram_matrix(&alpha, &idx, &grid, Family::Hermite).unwrap();
            for (i, row) in g.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((v - e).abs() < 1e-10, "a={a} {i},{j}: {v}");
                }
            }
            let gl = gram_matrix(&alpha, &idx, &grid, Family::Convolution).unwrap();
            for (i, row) in gl.iter().enumerate() {
                assert!((row[i] - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gram_matches_generic_inner_product() {
        let alpha = AlphaIndex::new(vec![0.5, 2.3]).unwrap();
        let grid = QuadGrid::for_spectrum(2, eigenvalue(4, &alpha));
        let idx = vec![MultiIndex::new(vec![1, 2]), MultiIndex::new(vec![3, 0])];
        let g = gram_matrix(&alpha, &idx, &grid, Family::Hermite).unwrap();
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let v = crate::numerics::inner_product(
                |x| phi_eval(&idx[i], &alpha, x).unwrap(),
                |x| phi_eval(&idx[j], &alpha, x).unwrap(),
                &grid,
            )
            .unwrap();
            assert!((v - g[i][j]).abs() < 1e-12);
        }
    }

    #[test]
    fn analyze_round_trip() {
        let alpha = AlphaIndex::new(vec![1.0, -0.5]).unwrap();
        let mut f = CoeffField::zero(alpha.clone());
        for (i, k) in MultiIndex::all_up_to(2, 6).into_iter().enumerate() {
            f.insert(k, ((i * 37 % 11) as f64 - 5.0) / 7.0).unwrap();
        }
        let grid = QuadGrid::for_spectrum(2, eigenvalue(6, &alpha));
        let g = analyze(|x| synthesize(&f, x).unwrap(), 6, &alpha, &grid).unwrap();
        for (k, c) in g.iter() {
            assert!((c - f.get(k)).abs() < 1e-7, "{:?}", k.0);
        }
        let z = analyze(|_| 0.0, 6, &alpha, &grid).unwrap();
        assert!(z.iter().all(|(_, c)| c.abs() < 1e-12));
    }

    #[test]
    fn analyze_unit() {
        let alpha = a1(2.3);
        let k = MultiIndex::new(vec![5]);
        let grid = QuadGrid::for_spectrum(1, eigenvalue(10, &alpha));
        let g = analyze(|x| phi_eval(&k, &alpha, x).unwrap(), 10, &alpha, &grid).unwrap();
        for (j, c) in g.iter() {
            let e = if *j == k { 1.0 } else { 0.0 };
            assert!((c - e).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_synthesis_matches_pointwise() {
        let alpha = AlphaIndex::new(vec![0.5, 1.0]).unwrap();
        let f = CoeffField::from_entries(
            alpha.clone(),
            vec![(MultiIndex::new(vec![0, 2]), 0.3), (MultiIndex::new(vec![4, 1]), -1.2)],
        )
        .unwrap();
        let grid = QuadGrid::new(2, 4.0, 1.0, 3, false);
        let basis = GridBasis::new(&alpha, 4, &grid).unwrap();
        let vals = basis.synthesize(&f).unwrap();
        let tensor = grid.tensor();
        for i in (0..tensor.len()).step_by(7) {
            assert!((vals[i] - synthesize(&f, tensor.point(i)).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn multiplier_examples() {
        let alpha = a1(0.5);
        let f = CoeffField::from_entries(alpha.clone(), (0..5).map(|n| (MultiIndex::new(vec![n]), 1.0 + n as f64))).unwrap();
        assert_eq!(apply_multiplier(|_| 1.0, &f), f);
        let once = apply_multiplier(|l| l, &f);
        let twice = apply_multiplier(|l| l.sqrt(), &apply_multiplier(|l| l.sqrt(), &f));
        for (k, c) in once.iter() {
            assert!((c - twice.get(k)).abs() < 1e-12 * c.abs());
        }
    }

    #[test]
    fn eigen_relation_finite_differences() {
        for &a in &[-0.5, 0.5, 1.0, 2.3] {
            let alpha = a1(a);
            for n in 0..=8u32 {
                let k = MultiIndex::new(vec![n]);
                let lam = eigenvalue(n as usize, &alpha);
                let h = 1e-3;
                let phi = |x: f64| phi_eval(&k, &alpha, &[x]).unwrap();
                let (mut res, mut nrm) = (0.0, 0.0);
                let mut x = 0.3;
                while x < lam.sqrt() + 3.0 {
                    let v = phi(x);
                    let d2 = (phi(x + h) - 2.0 * v + phi(x - h)) / (h * h);
                    let pot = x * x + (a * a - 0.25) / (x * x);
                    let lhs = -d2 + pot * v;
                    res += (lhs - lam * v).powi(2);
                    nrm += (lam * v).powi(2);
                    x += 0.01;
                }
                assert!((res / nrm).sqrt() < 1e-4, "a={a} n={n}: {}", (res / nrm).sqrt());
            }
        }
    }

    #[test]
    fn poisson_limits_and_semigroup() {
        let alpha = a1(1.0);
        let f = CoeffField::from_entries(alpha.clone(), (0..6).map(|n| (MultiIndex::new(vec![n]), 1.0))).unwrap();
        let small = poisson_apply(1e-9, 0, &f).unwrap();
        assert!(f.sub(&small).unwrap().l2_norm() < 1e-7);
        assert!(poisson_apply(1e-9, 1, &f).unwrap().l2_norm() < 1e-7);
        assert!(poisson_apply(60.0, 1, &f).unwrap().l2_norm() < 1e-40);
        let (t1, t2) = (0.3, 1.1);
        let ab = poisson_apply(t1, 0, &poisson_apply(t2, 0, &f).unwrap()).unwrap();
        let c = poisson_apply(t1 + t2, 0, &f).unwrap();
        for (k, v) in ab.iter() {
            assert!((v - c.get(k)).abs() <= 1e-15 * v.abs());
        }
        assert!(poisson_apply(0.0, 0, &f).is_err());
    }

    #[test]
    fn limit_profiles() {
        let alpha = a1(0.5);
        let f = CoeffField::from_entries(alpha, (0..4).map(|n| (MultiIndex::new(vec![n]), 0.5))).unwrap();
        let ts: Vec<f64> = (-20..=12).map(|j| 2f64.powi(j)).collect();
        let p = limit_profile(&f, 1, &ts, 1.0, false).unwrap();
        assert!(p.rows[0].norm < 1e-4 && p.rows.last().unwrap().norm < 1e-30);
        assert!(p.small_t_monotone && p.large_t_monotone);
        let c = limit_profile(&f, 0, &ts, 1.0, true).unwrap();
        assert!(c.rows[0].norm < 1e-4);
        let z = limit_profile(&CoeffField::zero(a1(0.5)), 1, &ts, 1.0, false).unwrap();
        assert!(z.rows.iter().all(|r| r.norm == 0.0));
    }

    #[test]
    fn space_params_regimes() {
        let s = SpaceParams::with_defaults(1, 0.0, 2.0, 2.0).unwrap();
        assert_eq!((s.m, s.big_m, s.big_n), (3, 4, 1));
        assert_eq!(s.r0(), 1.0);
        assert_eq!(s.m0(), 2.0);
        assert!(s.norm_admissible() && s.besov_regime());
        let n = SpaceParams::norm_only(1, 1.0, 1.0, f64::INFINITY).unwrap();
        assert_eq!(n.m, 4);
        let quasi = SpaceParams::with_defaults(2, 0.5, 0.5, 1.0).unwrap();
        assert_eq!(quasi.r0(), 0.5);
        assert!(quasi.besov_regime());
        let json = serde_json::to_string(&n).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<SpaceParams>(&json).unwrap(), n);
    }

    #[test]
    fn field_json_round_trip() {
        let f = CoeffField::from_entries(
            AlphaIndex::new(vec![0.5, 1.0]).unwrap(),
            vec![(MultiIndex::new(vec![0, 2]), 0.25), (MultiIndex::new(vec![1, 1]), -3.0)],
        )
        .unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"alpha":[0.5,1.0],"d":2,"entries":[[[0,2],0.25],[[1,1],-3.0]]}"#);
        assert_eq!(serde_json::from_str::<CoeffField>(&s).unwrap(), f);
        assert!(serde_json::from_str::<CoeffField>(r#"{"alpha":[0.5],"d":2,"entries":[]}"#).is_err());
    }

    fn field_strategy() -> impl Strategy<Value = CoeffField> {
        proptest::collection::vec((0u32..8, -2.0f64..2.0), 0..8).prop_map(|v| {
            CoeffField::from_entries(AlphaIndex::uniform(0.5, 1).unwrap(), v.into_iter().map(|(k, c)| (MultiIndex::new(vec![k]), c))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn poisson_contracts_l2(f in field_strategy(), t in 1e-3f64..10.0) {
            prop_assert!(poisson_apply(t, 0, &f).unwrap().l2_norm() <= f.l2_norm());
        }

        #[test]
        fn poisson_commutes_with_multipliers(f in field_strategy(), t in 1e-2f64..5.0, m in 0u32..4) {
            let a = poisson_apply(t, m, &apply_multiplier(|l| l.powf(0.7), &f)).unwrap();
            let b = apply_multiplier(|l| l.powf(0.7), &poisson_apply(t, m, &f).unwrap());
            for (k, v) in a.iter() {
                prop_assert!((v - b.get(k)).abs() <= 4.0 * f64::EPSILON * v.abs());
            }
        }

        #[test]
        fn synthesis_is_linear(f in field_strategy(), g in field_strategy(), x in 0.05f64..6.0) {
            let lhs = synthesize(&f.add(&g).unwrap(), &[x]).unwrap();
            let rhs = synthesize(&f, &[x]).unwrap() + synthesize(&g, &[x]).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
