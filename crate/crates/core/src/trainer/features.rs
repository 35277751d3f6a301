use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::fnv1a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Number of hash buckets; a power of two.
    pub hash_dim: usize,
    /// 1 for unigrams, 2 for unigrams plus bigrams.
    pub ngram_order: u8,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hash_dim: 1 << 18,
            ngram_order: 1,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.hash_dim.is_power_of_two() || self.hash_dim > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "hash_dim {} is not a power of two",
                self.hash_dim
            )));
        }
        if !matches!(self.ngram_order, 1 | 2) {
            return Err(Error::InvalidArgument(format!(
                "ngram_order {} must be 1 or 2",
                self.ngram_order
            )));
        }
        Ok(())
    }

    pub fn bucket(&self, token: &str) -> u32 {
        (fnv1a(token.as_bytes()) & (self.hash_dim as u64 - 1)) as u32
    }

    fn bigram_bucket(&self, a: &str, b: &str) -> u32 {
        let mut key = Vec::with_capacity(a.len() + b.len() + 2);
        key.push(0x02);
        key.extend_from_slice(a.as_bytes());
        key.push(0x1f);
        key.extend_from_slice(b.as_bytes());
        (fnv1a(&key) & (self.hash_dim as u64 - 1)) as u32
    }
}

/// Active buckets of a binary presence vector, sorted and unique. Colliding
/// n-grams share one active coordinate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparseFeatures(pub Vec<u32>);

impl SparseFeatures {
    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn featurize(tokens: &[String], config: &FeatureConfig) -> SparseFeatures {
    let mut idx: Vec<u32> = tokens.iter().map(|t| config.bucket(t)).collect();
    if config.ngram_order >= 2 {
        idx.extend(tokens.windows(2).map(|w| config.bigram_bucket(&w[0], &w[1])));
    }
    idx.sort_unstable();
    idx.dedup();
    SparseFeatures(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn unigram_permutation_invariance() {
        let c = FeatureConfig::default();
        assert_eq!(
            featurize(&toks("who is my manager"), &c),
            featurize(&toks("manager my is who"), &c)
        );
    }

    #[test]
    fn empty_is_zero() {
        assert!(featurize(&[], &FeatureConfig::default()).is_zero());
    }

    #[test]
    fn collisions_are_or() {
        let c = FeatureConfig {
            hash_dim: 16,
            ngram_order: 1,
        };
        let (a, b) = (0..)
            .map(|i| format!("tok{i}"))
            .find_map(|t| {
                let other = (0..1000)
                    .map(|j| format!("alt{j}"))
                    .find(|u| c.bucket(u) == c.bucket(&t))?;
                Some((t, other))
            })
            .unwrap();
        assert_ne!(a, b);
        let f = featurize(&[a.clone(), b.clone()], &c);
        assert_eq!(f.indices(), &[c.bucket(&a)]);
        assert_eq!(featurize(&[a.clone(), a], &c).indices().len(), 1);
    }

    #[test]
    fn bigrams_are_order_sensitive() {
        let c = FeatureConfig {
            hash_dim: 1 << 20,
            ngram_order: 2,
        };
        let f = featurize(&toks("a b"), &c);
        assert_eq!(f.indices().len(), 3);
        assert_ne!(f, featurize(&toks("b a"), &c));
    }

    #[test]
    fn validation() {
        assert!(FeatureConfig {
            hash_dim: 100,
            ngram_order: 1
        }
        .validate()
        .is_err());
        assert!(FeatureConfig {
            hash_dim: 64,
            ngram_order: 3
        }
        .validate()
        .is_err());
        assert!(FeatureConfig::default().validate().is_ok());
    }
}
