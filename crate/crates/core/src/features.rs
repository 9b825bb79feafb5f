//! Hashed bag-of-words and character n-gram features.
//!
//! Every feature string is hashed with 64-bit FNV-1a and reduced modulo the
//! space dimension. Word features are the token bytes. Character n-gram
//! features are taken over the token wrapped in `<` and `>` and prefixed
//! with `#`, so they never spell a word feature (tokens are purely
//! alphanumeric). Counts are L2-normalized; there is no corpus-level state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub const DEFAULT_DIMENSION: usize = 1 << 18;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Splits on maximal runs of non-alphanumeric code points.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct FeatureSpace {
    dimension: usize,
    char_ngrams: Option<NgramRange>,
    lowercase: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    dimension: usize,
    char_ngrams: Option<NgramRange>,
    lowercase: bool,
}

impl TryFrom<RawSpace> for FeatureSpace {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        FeatureSpace::new(raw.dimension, raw.char_ngrams, raw.lowercase)
    }
}

impl Default for FeatureSpace {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            char_ngrams: Some(NgramRange { min: 3, max: 5 }),
            lowercase: true,
        }
    }
}

impl FeatureSpace {
    pub fn new(dimension: usize, char_ngrams: Option<NgramRange>, lowercase: bool) -> Result<Self> {
        if dimension < 2 || !dimension.is_power_of_two() {
            return Err(Error::InvalidFeatureSpace(format!(
                "dimension {dimension} is not a power of two >= 2"
            )));
        }
        if dimension > u32::MAX as usize + 1 {
            return Err(Error::InvalidFeatureSpace(format!(
                "dimension {dimension} exceeds 2^32"
            )));
        }
        if let Some(r) = char_ngrams {
            if r.min == 0 || r.min > r.max {
                return Err(Error::InvalidFeatureSpace(format!(
                    "empty n-gram range {}..{}",
                    r.min, r.max
                )));
            }
        }
        Ok(Self {
            dimension,
            char_ngrams,
            lowercase,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn char_ngrams(&self) -> Option<NgramRange> {
        self.char_ngrams
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text, self.lowercase)
    }

    /// Bucket index of a feature string.
    pub fn index_of(&self, feature: &[u8]) -> u32 {
        (fnv1a64(feature) % self.dimension as u64) as u32
    }

    /// Un-normalized feature counts per bucket.
    pub fn counts(&self, text: &str) -> BTreeMap<u32, f64> {
        let mut counts = BTreeMap::new();
        let mut gram = String::new();
        for token in self.tokenize(text) {
            *counts.entry(self.index_of(token.as_bytes())).or_insert(0.0) += 1.0;
            if let Some(range) = self.char_ngrams {
                let wrapped: Vec<char> = std::iter::once('<')
                    .chain(token.chars())
                    .chain(std::iter::once('>'))
                    .collect();
                for n in range.min..=range.max {
                    for window in wrapped.windows(n) {
                        gram.clear();
                        gram.push('#');
                        gram.extend(window);
                        *counts.entry(self.index_of(gram.as_bytes())).or_insert(0.0) += 1.0;
                    }
                }
            }
        }
        counts
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        FeatureVector::normalized(self.counts(text).into_iter().collect())
    }
}

/// Sparse feature vector with entries sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
    norm: f64,
}

impl FeatureVector {
    pub fn zero() -> Self {
        Self {
            entries: Vec::new(),
            norm: 0.0,
        }
    }

    /// Scales sorted, deduplicated entries to unit L2 norm.
    fn normalized(mut entries: Vec<(u32, f64)>) -> Self {
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Self::zero();
        }
        for (_, w) in &mut entries {
            *w /= norm;
        }
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        Self { entries, norm }
    }

    /// Builds a vector from raw (index, weight) pairs without normalizing.
    /// Duplicate indices are summed.
    pub fn from_entries(entries: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (i, w) in entries {
            *map.entry(i).or_insert(0.0) += w;
        }
        let entries: Vec<(u32, f64)> = map.into_iter().collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        Self { entries, norm }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.entries.last().map(|(i, _)| *i)
    }
}
