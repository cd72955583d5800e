//! Seeded corpora of random coefficient fields.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{AlphaIndex, MultiIndex};
use crate::spectral::CoeffField;

const STANDARD: &str = include_str!("../data/standard_corpus.json");

/// Recipe for a corpus: `count` fields, each with `entries` distinct indices drawn
/// from `{|k| <= degree}` and coefficients of magnitude in `[coef_min, coef_max]`
/// with random sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub count: usize,
    pub alpha: Vec<f64>,
    pub degree: usize,
    pub entries: usize,
    pub coef_min: f64,
    pub coef_max: f64,
}

impl CorpusSpec {
    /// The pinned corpus: 50 fields, `d = 1`, `α = 1/2`, degree 20, 20 entries each.
    pub fn standard() -> Self {
        serde_json::from_str(STANDARD).expect("bundled corpus spec parses")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<AlphaIndex> {
        let alpha = AlphaIndex::new(self.alpha.clone())?;
        let available = MultiIndex::all_up_to(alpha.dim(), self.degree).len();
        if self.entries == 0 || self.entries > available {
            return Err(Error::InvalidArgument(format!(
                "{} entries requested, {available} indices available up to degree {}",
                self.entries, self.degree
            )));
        }
        if !(self.coef_min > 0.0 && self.coef_min <= self.coef_max && self.coef_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "coefficient range [{}, {}] must be positive and ordered",
                self.coef_min, self.coef_max
            )));
        }
        Ok(alpha)
    }

    pub fn fields(&self) -> Result<Vec<CoeffField>> {
        let alpha = self.validate()?;
        let pool = MultiIndex::all_up_to(alpha.dim(), self.degree);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|_| {
                let picked: Vec<MultiIndex> = pool.choose_multiple(&mut rng, self.entries).cloned().collect();
                let entries: Vec<(MultiIndex, f64)> = picked
                    .into_iter()
                    .map(|k| {
                        let mag = if self.coef_max > self.coef_min {
                            rng.gen_range(self.coef_min..=self.coef_max)
                        } else {
                            self.coef_min
                        };
                        let c = if rng.gen_bool(0.5) { mag } else { -mag };
                        (k, c)
                    })
                    .collect();
                CoeffField::from_entries(alpha.clone(), entries)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_corpus_shape() {
        let spec = CorpusSpec::standard();
        let fields = spec.fields().unwrap();
        assert_eq!(fields.len(), 50);
        for f in &fields {
            assert_eq!(f.len(), 20);
            assert_eq!(f.dim(), 1);
            assert!(f.degree() <= 20);
            assert!(f.iter().all(|(_, c)| (0.1..=1.0).contains(&c.abs())));
        }
    }

    #[test]
    fn corpus_is_reproducible() {
        let spec = CorpusSpec::standard();
        assert_eq!(spec.fields().unwrap(), spec.fields().unwrap());
        assert_ne!(spec.fields().unwrap(), spec.clone().with_seed(7).fields().unwrap());
    }

    #[test]
    fn too_many_entries_refused() {
        let mut spec = CorpusSpec::standard();
        spec.entries = 22;
        assert!(spec.fields().is_err());
    }
}
