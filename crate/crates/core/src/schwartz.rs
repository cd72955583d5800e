//! Coefficient-decay seminorms `q_N`, `p_r` and a decay probe for functions of
//! the form `x^{α+1/2} g(x)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{compensated_sum, QuadGrid};
use crate::spectral::{analyze, eigenvalue, CoeffField};
use crate::specfun::AlphaIndex;

/// `q_N(f) = sup_k (1+|k|)^N |c_k|`.
pub fn q_norm(f: &CoeffField, n: u32) -> f64 {
    f.iter()
        .map(|(k, c)| (1.0 + k.length() as f64).powi(n as i32) * c.abs())
        .fold(0.0, f64::max)
}

/// `p_r(f) = Σ_n (n+1)^r (Σ_{|k|=n} c_k²)^{1/2}`.
pub fn p_norm(f: &CoeffField, r: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("p_r needs r >= 0, got {r}")));
    }
    Ok(compensated_sum(
        f.shell_norms().iter().enumerate().map(|(n, s)| (n as f64 + 1.0).powf(r) * s),
    ))
}

/// Both comparison inequalities between the seminorm families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormEquivalence {
    pub n: u32,
    /// `q_N(f)`.
    pub q_n: f64,
    /// `p_{N+(d-1)/2}(f)`.
    pub p_shifted: f64,
    /// `q_N / p_{N+(d-1)/2}`; at most 1.
    pub ratio_q_over_p: f64,
    /// `p_N(f)`.
    pub p_n: f64,
    /// `q_{N+d+1}(f)`.
    pub q_shifted: f64,
    /// `p_N / q_{N+d+1}`; at most `π²/6`.
    pub ratio_p_over_q: f64,
}

/// Bound on `q_N / p_{N+(d-1)/2}`.
pub const Q_OVER_P_BOUND: f64 = 1.0;
/// Bound on `p_N / q_{N+d+1}`: `Σ_n (n+1)^{-2}`.
pub const P_OVER_Q_BOUND: f64 = std::f64::consts::PI * std::f64::consts::PI / 6.0;

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn norm_equivalence_check(f: &CoeffField, n: u32) -> Result<NormEquivalence> {
    let d = f.dim() as u32;
    let q_n = q_norm(f, n);
    let p_shifted = p_norm(f, n as f64 + (d as f64 - 1.0) / 2.0)?;
    let p_n = p_norm(f, n as f64)?;
    let q_shifted = q_norm(f, n + d + 1);
    Ok(NormEquivalence {
        n,
        q_n,
        p_shifted,
        ratio_q_over_p: ratio(q_n, p_shifted),
        p_n,
        q_shifted,
        ratio_p_over_q: ratio(p_n, q_shifted),
    })
}

/// Outcome of the decay probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub alpha: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    /// Log-log slopes of the shell magnitudes over consecutive windows;
    /// `null` when the window lies below the noise floor.
    pub slopes: Vec<Option<f64>>,
    pub ladder: Vec<u32>,
    /// Whether `(1+n)^N s_n` peaks before the last window, per ladder entry.
    pub beats: Vec<bool>,
    pub verdict: String,
}

/// Relative level below which shell magnitudes are treated as unresolved.
pub const NOISE_FLOOR: f64 = 1e-13;

/// Ladder of polynomial rates tested.
pub const DECAY_LADDER: [u32; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

/// Coefficients of `x^{α+1/2} g(x)` up to degree `K` and a decay verdict.
///
/// The shell magnitudes `s_n = max_{|k|=n} |c_k|` are fitted in log-log form over
/// four consecutive windows. For each `N` in the ladder the probe asks whether
/// `(1+n)^N s_n` is larger somewhere before the last window than anywhere in it
/// (values under the noise floor are clamped to it). Super-polynomial decay is
/// declared when every ladder entry passes; the report never claims more than the ladder.
pub fn saficharac_probe<G>(g: G, alpha: &AlphaIndex, k: usize, grid: Option<&QuadGrid>) -> Result<DecayReport>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    if k < 8 {
        return Err(Error::InvalidArgument(format!("decay probe needs K >= 8, got {k}")));
    }
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = QuadGrid::for_spectrum(alpha.dim(), eigenvalue(k, alpha));
            &owned
        }
    };
    let powers: Vec<f64> = alpha.values().iter().map(|a| a + 0.5).collect();
    let coeffs = analyze(
        |x| g(x) * x.iter().zip(&powers).map(|(xi, p)| xi.powf(*p)).product::<f64>(),
        k,
        alpha,
        grid,
    )?;
    let mut shells = vec![0.0f64; k + 1];
    for (idx, c) in coeffs.iter() {
        let n = idx.length();
        shells[n] = shells[n].max(c.abs());
    }
    let top = shells.iter().cloned().fold(0.0, f64::max);
    let floor = NOISE_FLOOR * top;

    let windows = 4;
    let width = k / windows;
    let mut slopes = Vec::with_capacity(windows);
    for w in 0..windows {
        let lo = 1 + w * width;
        let hi = if w + 1 == windows { k } else { (w + 1) * width };
        let pts: Vec<(f64, f64)> = (lo..=hi)
            .filter(|&n| shells[n] > floor)
            .map(|n| ((1.0 + n as f64).ln(), shells[n].ln()))
            .collect();
        slopes.push(if pts.len() < 3 { None } else { Some(ls_slope(&pts)) });
    }

    let tail_start = 1 + (windows - 1) * width;
    let beats: Vec<bool> = DECAY_LADDER
        .iter()
        .map(|&nn| {
            let weighted = |n: usize| (1.0 + n as f64).powi(nn as i32) * shells[n].max(floor);
            let head = (0..tail_start).map(weighted).fold(0.0, f64::max);
            let tail = (tail_start..=k).map(weighted).fold(0.0, f64::max);
            tail < head
        })
        .collect();
    let verdict = if top == 0.0 {
        "zero".to_string()
    } else if beats.iter().all(|&b| b) {
        format!("super-polynomial on ladder N<={}", DECAY_LADDER[DECAY_LADDER.len() - 1])
    } else {
        let passed = DECAY_LADDER.iter().zip(&beats).take_while(|(_, &b)| b).count();
        if passed == 0 {
            "polynomial (no ladder rate beaten)".to_string()
        } else {
            format!("polynomial (beats N<={})", DECAY_LADDER[passed - 1])
        }
    };
    Ok(DecayReport { alpha: alpha.values().to_vec(), k, slopes, ladder: DECAY_LADDER.to_vec(), beats, verdict })
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::MultiIndex;
    use crate::spectral::poisson_apply;
    use proptest::prelude::*;

    fn a(v: f64, d: usize) -> AlphaIndex {
        AlphaIndex::uniform(v, d).unwrap()
    }

    #[test]
    fn unit_entries() {
        let f = CoeffField::unit(a(0.5, 2), MultiIndex::new(vec![2, 1])).unwrap();
        assert_eq!(q_norm(&f, 3), 64.0);
        assert_eq!(q_norm(&f, 0), 1.0);
        assert!((p_norm(&f, 1.5).unwrap() - 4f64.powf(1.5)).abs() < 1e-12);
        let two = CoeffField::from_entries(
            a(0.5, 1),
            vec![(MultiIndex::new(vec![0]), 2.0), (MultiIndex::new(vec![3]), -1.0)],
        )
        .unwrap();
        assert!((p_norm(&two, 1.0).unwrap() - (2.0 + 4.0)).abs() < 1e-14);
        let z = CoeffField::zero(a(0.5, 1));
        let e = norm_equivalence_check(&z, 2).unwrap();
        assert_eq!((e.q_n, e.p_n, e.ratio_q_over_p, e.ratio_p_over_q), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn gaussian_decays_fast() {
        let alpha = a(0.5, 1);
        let r = saficharac_probe(|x| (-x[0] * x[0]).exp(), &alpha, 40, None).unwrap();
        assert!(r.beats[..6].iter().all(|&b| b), "{r:?}");
        assert!(r.verdict.starts_with("super-polynomial"), "{r:?}");
        let resolved: Vec<f64> = r.slopes.iter().flatten().cloned().collect();
        assert!(resolved.windows(2).all(|w| w[1] < w[0]), "{r:?}");
        let json = serde_json::to_value(&r).unwrap();
        for key in ["alpha", "K", "slopes", "verdict"] {
            assert!(json.get(key).is_some());
        }
    }

    #[test]
    fn half_integer_case_is_pure_gaussian() {
        let r = saficharac_probe(|x| (-x[0] * x[0]).exp(), &a(-0.5, 1), 40, None).unwrap();
        assert!(r.verdict.starts_with("super-polynomial"), "{r:?}");
    }

    #[test]
    fn exponential_is_only_polynomial() {
        let r = saficharac_probe(|x| (-x[0]).exp(), &a(0.5, 1), 40, None).unwrap();
        assert!(r.verdict.starts_with("polynomial"), "{r:?}");
        assert!(!r.beats.iter().all(|&b| b));
    }

    fn field() -> impl Strategy<Value = CoeffField> {
        (1usize..3, proptest::collection::vec((0u32..6, 0u32..6, -3.0f64..3.0), 0..10)).prop_map(|(d, v)| {
            CoeffField::from_entries(
                AlphaIndex::uniform(0.5, d).unwrap(),
                v.into_iter().map(|(i, j, c)| (MultiIndex::new(if d == 1 { vec![i] } else { vec![i, j] }), c)),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn comparison_inequalities(f in field(), n in 0u32..5) {
            let e = norm_equivalence_check(&f, n).unwrap();
            prop_assert!(e.ratio_q_over_p <= Q_OVER_P_BOUND * (1.0 + 1e-12));
            prop_assert!(e.ratio_p_over_q <= P_OVER_Q_BOUND);
        }

        #[test]
        fn p_monotone_in_r(f in field(), r1 in 0.0f64..4.0, dr in 0.0f64..3.0) {
            prop_assert!(p_norm(&f, r1).unwrap() <= p_norm(&f, r1 + dr).unwrap() * (1.0 + 1e-14));
        }

        #[test]
        fn q_monotone_in_n(f in field(), n in 0u32..6) {
            prop_assert!(q_norm(&f, n) <= q_norm(&f, n + 1));
        }

        #[test]
        fn homogeneous(f in field(), c in -5.0f64..5.0, r in 0.0f64..3.0, n in 0u32..4) {
            let g = f.scaled(c);
            prop_assert!((q_norm(&g, n) - c.abs() * q_norm(&f, n)).abs() <= 1e-12 * (1.0 + q_norm(&g, n)));
            let (pg, pf) = (p_norm(&g, r).unwrap(), p_norm(&f, r).unwrap());
            prop_assert!((pg - c.abs() * pf).abs() <= 1e-12 * (1.0 + pg));
        }

        #[test]
        fn poisson_does_not_increase(f in field(), t in 1e-3f64..5.0, r in 0.0f64..3.0, n in 0u32..4) {
            let g = poisson_apply(t, 0, &f).unwrap();
            prop_assert!(q_norm(&g, n) <= q_norm(&f, n));
            prop_assert!(p_norm(&g, r).unwrap() <= p_norm(&f, r).unwrap());
        }
    }
}
