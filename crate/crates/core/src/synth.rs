//! Synthetic single-label corpora with controlled trigger contamination.
//!
//! Each utterance is a run of Zipf-distributed background tokens. A positive
//! example of symbol `s` gets one of `s`'s triggers with probability
//! `p_trig`; independently, every example gets one trigger of each *other*
//! symbol with probability `p_cross`. Injections overwrite distinct
//! background positions, so trigger presence is exactly Bernoulli and the
//! length distribution does not depend on the label.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus, Example, TaskKind};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolSpec {
    pub name: String,
    pub triggers: Vec<String>,
    pub p_trig: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub symbols: Vec<SymbolSpec>,
    /// Probability that an example of another symbol carries one of this
    /// symbol's triggers. Shared by all symbols.
    pub p_cross: f64,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Probability that a background token is drawn from the symbol's own
    /// permutation of the vocabulary instead of the shared ranking. Zero
    /// makes background tokens label-independent noise.
    #[serde(default)]
    pub background_specificity: f64,
    pub seed: u64,
}

fn default_min_len() -> usize {
    5
}

fn default_max_len() -> usize {
    12
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")))
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.symbols.is_empty() {
            return Err(Error::InvalidArgument("synthetic spec has no symbols".into()));
        }
        check_probability("p_cross", self.p_cross)?;
        check_probability("background_specificity", self.background_specificity)?;
        if self.vocab_size == 0 {
            return Err(Error::InvalidArgument("vocab_size must be positive".into()));
        }
        if self.zipf_exponent.is_nan() || self.zipf_exponent < 0.0 {
            return Err(Error::InvalidArgument("zipf_exponent must be non-negative".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "utterance length range [{}, {}] is invalid",
                self.min_len, self.max_len
            )));
        }
        let mut names = BTreeSet::new();
        let mut all_triggers = BTreeSet::new();
        for s in &self.symbols {
            check_probability(&format!("p_trig of {}", s.name), s.p_trig)?;
            if !names.insert(s.name.as_str()) {
                return Err(Error::InvalidArgument(format!("symbol `{}` listed twice", s.name)));
            }
            if s.triggers.is_empty() {
                return Err(Error::InvalidArgument(format!("symbol `{}` has no triggers", s.name)));
            }
            for t in &s.triggers {
                if tokenize(t) != [t.clone()] {
                    return Err(Error::InvalidArgument(format!(
                        "trigger `{t}` is not a single lowercase token"
                    )));
                }
                if !all_triggers.insert(t.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "trigger `{t}` is shared between symbols"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn symbol(&self, name: &str) -> Option<&SymbolSpec> {
        self.symbols.iter().find(|s| s.name == name)
    }
}

/// Generates `counts[s]` examples for every symbol `s`, symbol by symbol in
/// spec order. Each symbol draws from its own random stream.
pub fn generate_corpus(spec: &SynthSpec, counts: &BTreeMap<String, usize>) -> Result<Corpus> {
    spec.validate()?;
    for name in counts.keys() {
        if spec.symbol(name).is_none() {
            return Err(Error::InvalidArgument(format!(
                "count given for unknown symbol `{name}`"
            )));
        }
    }
    let zipf = Zipf::new(spec.vocab_size as f64, spec.zipf_exponent)
        .map_err(|e| Error::InvalidArgument(format!("zipf distribution: {e}")))?;

    let mut examples = Vec::new();
    for (si, sym) in spec.symbols.iter().enumerate() {
        let n = counts.get(&sym.name).copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidArgument(format!(
                "count for `{}` must be at least 1",
                sym.name
            )));
        }
        let mut perm: Vec<usize> = (0..spec.vocab_size).collect();
        perm.shuffle(&mut stream_rng(spec.seed, &format!("synth/perm/{}", sym.name)));
        let mut rng = stream_rng(spec.seed, &format!("synth/examples/{}", sym.name));

        for i in 0..n {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| {
                    let rank = zipf.sample(&mut rng) as usize - 1;
                    let idx = if rng.random_bool(spec.background_specificity) {
                        perm[rank]
                    } else {
                        rank
                    };
                    format!("w{idx}")
                })
                .collect();
            let mut free: Vec<usize> = (0..len).collect();
            let inject =
                |tokens: &mut Vec<String>, free: &mut Vec<usize>, rng: &mut rand_chacha::ChaCha8Rng, tok: &str| {
                    if free.is_empty() {
                        let at = rng.random_range(0..=tokens.len());
                        tokens.insert(at, tok.to_string());
                    } else {
                        let slot = free.swap_remove(rng.random_range(0..free.len()));
                        tokens[slot] = tok.to_string();
                    }
                };
            if rng.random_bool(sym.p_trig) {
                let t = &sym.triggers[rng.random_range(0..sym.triggers.len())];
                inject(&mut tokens, &mut free, &mut rng, t);
            }
            for (oi, other) in spec.symbols.iter().enumerate() {
                if oi == si {
                    continue;
                }
                if rng.random_bool(spec.p_cross) {
                    let t = &other.triggers[rng.random_range(0..other.triggers.len())];
                    inject(&mut tokens, &mut free, &mut rng, t);
                }
            }
            examples.push(Example::intent(
                format!("{}-{i:05}", sym.name),
                tokens.join(" "),
                sym.name.clone(),
            )?);
        }
    }
    Corpus::new(TaskKind::Intent, examples)
}

/// Expected source signal strength of `symbol`'s triggers in a split with
/// `k` examples of the symbol out of `n`: `k·p_trig / (k·p_trig + (n−k)·p_cross)`.
pub fn expected_strength(spec: &SynthSpec, symbol: &str, n: usize, k: usize) -> Result<f64> {
    let sym = spec
        .symbol(symbol)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown symbol `{symbol}`")))?;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 0 < k <= N, got k={k}, N={n}")));
    }
    let pos = k as f64 * sym.p_trig;
    let denom = pos + (n - k) as f64 * spec.p_cross;
    if denom == 0.0 {
        return Err(Error::Undefined("no example can contain a trigger".into()));
    }
    Ok(pos / denom)
}
