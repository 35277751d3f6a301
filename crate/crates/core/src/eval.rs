//! Test-set metrics with percentile bootstrap intervals.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream_rng};
use crate::trainer::{ModelState, Prediction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall_acc: f64,
    pub n: usize,
    pub per_symbol_acc: BTreeMap<String, f64>,
    pub per_symbol_n: BTreeMap<String, usize>,
    pub new_symbol: String,
    /// `None` when the test set has no example of the new symbol.
    pub new_symbol_acc: Option<f64>,
    pub n_new: usize,
    /// Fraction of new-symbol examples whose predicted set contains the
    /// symbol. Program tasks only.
    pub new_symbol_presence_recall: Option<f64>,
    pub competing_acc: Option<f64>,
    pub n_competing: usize,
    /// Keyed by `overall`, `new_symbol` and `competing`.
    pub ci: BTreeMap<String, Interval>,
}

/// Test examples that contain a trigger but whose gold output lacks `symbol`.
pub fn competing_subset(testset: &Corpus, symbol: &str, triggers: &BTreeSet<String>) -> BTreeSet<String> {
    testset
        .examples()
        .iter()
        .filter(|e| !e.has_symbol(symbol) && e.contains_any(triggers))
        .map(|e| e.id.clone())
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean of `correct`.
pub fn bootstrap_ci(correct: &[bool], resamples: usize, level: f64, seed: u64) -> Result<Interval> {
    if correct.is_empty() {
        return Err(Error::InvalidArgument("bootstrap of an empty vector".into()));
    }
    if resamples < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 resamples, got {resamples}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} outside (0, 1)")));
    }
    let n = correct.len();
    let mut rng = stream_rng(seed, "bootstrap");
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let hits = (0..n).filter(|_| correct[rng.random_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Interval {
        low: percentile(&means, tail),
        high: percentile(&means, 1.0 - tail),
    })
}

fn mean(flags: &[bool]) -> Option<f64> {
    (!flags.is_empty()).then(|| flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64)
}

/// Scores precomputed predictions. `predictions[i]` belongs to
/// `testset.examples()[i]`.
pub fn score(
    predictions: &[Prediction],
    testset: &Corpus,
    symbol: &str,
    triggers: Option<&BTreeSet<String>>,
    boot: &BootstrapConfig,
) -> Result<MetricReport> {
    if testset.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if predictions.len() != testset.len() {
        return Err(Error::InvalidArgument(
            "one prediction per test example required".into(),
        ));
    }
    let examples = testset.examples();
    let correct: Vec<bool> = predictions.iter().zip(examples).map(|(p, e)| p.matches(e)).collect();

    let mut by_symbol: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for (e, &c) in examples.iter().zip(&correct) {
        for s in e.symbols() {
            by_symbol.entry(s.clone()).or_default().push(c);
        }
    }
    let new_flags: Vec<bool> = by_symbol.get(symbol).cloned().unwrap_or_default();
    let presence = match predictions.first() {
        Some(Prediction::Symbols(_)) => {
            let hits: Vec<bool> = predictions
                .iter()
                .zip(examples)
                .filter(|(_, e)| e.has_symbol(symbol))
                .map(|(p, _)| matches!(p, Prediction::Symbols(s) if s.contains(symbol)))
                .collect();
            mean(&hits)
        }
        _ => None,
    };
    let competing: Vec<bool> = match triggers {
        Some(t) => examples
            .iter()
            .zip(&correct)
            .filter(|(e, _)| is_competing(e, symbol, t))
            .map(|(_, &c)| c)
            .collect(),
        None => Vec::new(),
    };

    let mut ci = BTreeMap::new();
    for (name, flags) in [
        ("overall", &correct),
        ("new_symbol", &new_flags),
        ("competing", &competing),
    ] {
        if !flags.is_empty() {
            ci.insert(
                name.to_string(),
                bootstrap_ci(flags, boot.resamples, boot.level, derive_seed(boot.seed, name))?,
            );
        }
    }

    Ok(MetricReport {
        overall_acc: mean(&correct).expect("nonempty"),
        n: correct.len(),
        per_symbol_n: by_symbol.iter().map(|(s, v)| (s.clone(), v.len())).collect(),
        per_symbol_acc: by_symbol
            .iter()
            .map(|(s, v)| (s.clone(), mean(v).expect("nonempty")))
            .collect(),
        new_symbol: symbol.to_string(),
        new_symbol_acc: mean(&new_flags),
        n_new: new_flags.len(),
        new_symbol_presence_recall: presence,
        competing_acc: mean(&competing),
        n_competing: competing.len(),
        ci,
    })
}

fn is_competing(e: &Example, symbol: &str, triggers: &BTreeSet<String>) -> bool {
    !e.has_symbol(symbol) && e.contains_any(triggers)
}

pub fn evaluate(
    model: &ModelState,
    testset: &Corpus,
    symbol: &str,
    triggers: Option<&BTreeSet<String>>,
    boot: &BootstrapConfig,
) -> Result<MetricReport> {
    let predictions: Vec<Prediction> = testset
        .examples()
        .iter()
        .map(|e| crate::trainer::predict(model, e))
        .collect();
    score(&predictions, testset, symbol, triggers, boot)
}
