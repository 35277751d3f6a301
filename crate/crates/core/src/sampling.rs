//! Upsampling of the new symbol's examples by duplication.
//!
//! Duplicates are added on top of the split: `N` grows by the number of
//! copies, while `SplitSpec::n` keeps the pre-upsampling size.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::splits::{Provenance, Split, SplitEntry};

/// Exact non-negative rational `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Ratio> {
        if den == 0 {
            return Err(Error::InvalidArgument("ratio with zero denominator".into()));
        }
        Ok(Ratio { num, den })
    }

    /// `round(self · n)` with halves rounded up, in exact integer arithmetic.
    pub fn round_mul(self, n: usize) -> usize {
        let num = u128::from(self.num) * n as u128;
        let den = u128::from(self.den);
        ((2 * num + den) / (2 * den)) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum UpsamplePlan {
    Fixed { ratio: u32 },
    Adaptive { base_ratio: Ratio },
}

impl UpsamplePlan {
    pub fn apply(&self, split: &Split, pool: &Corpus) -> Result<Split> {
        match *self {
            UpsamplePlan::Fixed { ratio } => upsample_fixed(split, pool, ratio),
            UpsamplePlan::Adaptive { base_ratio } => upsample_adaptive(split, pool, base_ratio),
        }
    }
}

/// Non-duplicate entries of the split, and which of them carry the new symbol.
fn originals(split: &Split, pool: &Corpus) -> Result<(Vec<SplitEntry>, Vec<usize>)> {
    let base: Vec<SplitEntry> = split
        .entries
        .iter()
        .filter(|e| !matches!(e.provenance, Provenance::Duplicate(_)))
        .cloned()
        .collect();
    let mut positives = Vec::new();
    for (i, e) in base.iter().enumerate() {
        if pool.resolve(&e.id)?.has_symbol(split.new_symbol()) {
            positives.push(i);
        }
    }
    Ok((base, positives))
}

fn with_copies(split: &Split, pool: &Corpus, copies: impl Fn(usize) -> usize) -> Result<Split> {
    let (mut entries, positives) = originals(split, pool)?;
    let mut dups = Vec::new();
    for (rank, &i) in positives.iter().enumerate() {
        for d in 1..copies(rank) {
            dups.push(SplitEntry {
                id: entries[i].id.clone(),
                provenance: Provenance::Duplicate(d as u32),
            });
        }
    }
    entries.extend(dups);
    let mut out = Split::from_entries(split.spec.clone(), entries, pool)?;
    out.deficit = split.deficit;
    out.removed = split.removed.clone();
    Ok(out)
}

/// Every original new-symbol entry appears `ratio` times in total.
pub fn upsample_fixed(split: &Split, pool: &Corpus, ratio: u32) -> Result<Split> {
    if ratio == 0 {
        return Err(Error::InvalidArgument("upsampling ratio must be at least 1".into()));
    }
    with_copies(split, pool, |_| ratio as usize)
}

/// Brings the new symbol to `round(base_ratio · N)` entries, where `N` is the
/// split size before upsampling. Copies cycle over the originals in entry
/// order so no two originals differ by more than one copy.
pub fn upsample_adaptive(split: &Split, pool: &Corpus, base_ratio: Ratio) -> Result<Split> {
    let (base, positives) = originals(split, pool)?;
    let k = positives.len();
    let target = base_ratio.round_mul(base.len());
    if k == 0 {
        return Err(Error::Undefined(format!(
            "no `{}` entries to upsample",
            split.new_symbol()
        )));
    }
    if target < k {
        return Err(Error::InvalidArgument(format!(
            "adaptive target {target} is below the {k} existing examples; downsampling is not supported"
        )));
    }
    let (each, extra) = (target / k, target % k);
    with_copies(split, pool, |rank| each + usize::from(rank < extra))
}
