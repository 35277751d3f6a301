//! Trigger-token statistics over training multisets and the dilution removal
//! intervention.
//!
//! All statistics count duplicated entries with multiplicity: they describe
//! what the trainer sees.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus, Example, SEPARATOR};
use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::splits::{Provenance, Split, SplitEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerOrigin {
    Manual,
    Mined,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerSet {
    pub symbol: String,
    pub tokens: BTreeSet<String>,
    pub origin: TriggerOrigin,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TriggerFile {
    One(TriggerSet),
    Many(Vec<TriggerSet>),
}

/// Manually chosen trigger tables for the intent and program symbols studied
/// in the original experiments. The `n't` trigger of `DoNotConfirm` is
/// stored as `t`, which is the token our tokenizer leaves after splitting a
/// negative contraction.
const BUNDLED: &[(&str, &[&str])] = &[
    ("email_query", &["emails", "inbox"]),
    ("email_querycontact", &["contact", "phone", "number"]),
    ("general_quirky", &["day", "today", "tell", "can"]),
    ("play_radio", &["channel", "radio", "fm", "point", "station", "tune"]),
    ("transport_traffic", &["traffic"]),
    ("FindManager", &["boss", "manager", "supervisor"]),
    ("PlaceHasFeature", &["takeout", "casual", "waiter"]),
    ("Tomorrow", &["tomorrow"]),
    ("FenceAttendee", &["meet", "mom"]),
    ("DoNotConfirm", &["cancel", "t", "no"]),
];

impl TriggerSet {
    pub fn new<I, S>(symbol: impl Into<String>, tokens: I, origin: TriggerOrigin) -> Result<TriggerSet>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set = TriggerSet {
            symbol: symbol.into(),
            tokens: tokens.into_iter().map(Into::into).collect(),
            origin,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "trigger set for `{}` is empty",
                self.symbol
            )));
        }
        for t in &self.tokens {
            if tokenize(t) != [t.clone()] {
                return Err(Error::InvalidArgument(format!(
                    "trigger `{t}` for `{}` is not a single tokenizer output",
                    self.symbol
                )));
            }
        }
        Ok(())
    }

    pub fn bundled() -> Vec<TriggerSet> {
        BUNDLED
            .iter()
            .map(|(s, toks)| {
                TriggerSet::new(*s, toks.iter().copied(), TriggerOrigin::Manual).expect("bundled triggers are valid")
            })
            .collect()
    }

    /// Reads a trigger config: either one object or an array of objects.
    pub fn load_file(path: impl AsRef<Path>) -> Result<Vec<TriggerSet>> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sets = match serde_json::from_str(&text)? {
            TriggerFile::One(s) => vec![s],
            TriggerFile::Many(v) => v,
        };
        for s in &sets {
            s.validate()?;
        }
        Ok(sets)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalReport {
    pub symbol: String,
    pub n: usize,
    pub strength: Option<f64>,
    pub coverage: Option<f64>,
    pub n_with_trigger: usize,
    pub n_with_trigger_and_symbol: usize,
    /// Diluting entries, with multiplicity.
    pub n_diluting: usize,
    pub diluting_ids: BTreeSet<String>,
}

impl SignalReport {
    pub const CSV_HEADER: &'static str = "symbol,N,strength,coverage,n_diluting";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.symbol,
            self.n,
            opt(self.strength),
            opt(self.coverage),
            self.n_diluting
        )
    }
}

/// `P̂(symbol ∈ output | input contains a trigger)` over `examples`.
pub fn strength_of(examples: &[&Example], symbol: &str, triggers: &BTreeSet<String>) -> Result<f64> {
    if triggers.is_empty() {
        return Err(Error::InvalidArgument("empty trigger set".into()));
    }
    let (with_trigger, with_both) = trigger_counts(examples, symbol, triggers);
    if with_trigger == 0 {
        return Err(Error::Undefined(format!("no example contains a trigger of `{symbol}`")));
    }
    Ok(with_both as f64 / with_trigger as f64)
}

fn trigger_counts(examples: &[&Example], symbol: &str, triggers: &BTreeSet<String>) -> (usize, usize) {
    let mut with_trigger = 0;
    let mut with_both = 0;
    for ex in examples {
        if ex.contains_any(triggers) {
            with_trigger += 1;
            if ex.has_symbol(symbol) {
                with_both += 1;
            }
        }
    }
    (with_trigger, with_both)
}

/// Fraction of `symbol`'s examples whose input contains a trigger.
pub fn coverage_of(examples: &[&Example], symbol: &str, triggers: &BTreeSet<String>) -> Result<f64> {
    let positives: Vec<_> = examples.iter().filter(|e| e.has_symbol(symbol)).collect();
    if positives.is_empty() {
        return Err(Error::Undefined(format!("no example of `{symbol}`")));
    }
    let hit = positives.iter().filter(|e| e.contains_any(triggers)).count();
    Ok(hit as f64 / positives.len() as f64)
}

/// Ids of examples containing a trigger but lacking `symbol`.
pub fn diluting_of(examples: &[&Example], symbol: &str, triggers: &BTreeSet<String>) -> BTreeSet<String> {
    examples
        .iter()
        .filter(|e| !e.has_symbol(symbol) && e.contains_any(triggers))
        .map(|e| e.id.clone())
        .collect()
}

pub fn source_signal_strength(split: &Split, pool: &Corpus, symbol: &str, triggers: &BTreeSet<String>) -> Result<f64> {
    strength_of(&split.examples(pool)?, symbol, triggers)
}

pub fn trigger_coverage(split: &Split, pool: &Corpus, symbol: &str, triggers: &BTreeSet<String>) -> Result<f64> {
    coverage_of(&split.examples(pool)?, symbol, triggers)
}

pub fn find_diluting(
    split: &Split,
    pool: &Corpus,
    symbol: &str,
    triggers: &BTreeSet<String>,
) -> Result<BTreeSet<String>> {
    Ok(diluting_of(&split.examples(pool)?, symbol, triggers))
}

pub fn signal_report(split: &Split, pool: &Corpus, symbol: &str, triggers: &BTreeSet<String>) -> Result<SignalReport> {
    let examples = split.examples(pool)?;
    let (n_with_trigger, n_with_trigger_and_symbol) = trigger_counts(&examples, symbol, triggers);
    let n_diluting = examples
        .iter()
        .filter(|e| !e.has_symbol(symbol) && e.contains_any(triggers))
        .count();
    Ok(SignalReport {
        symbol: symbol.to_string(),
        n: examples.len(),
        strength: strength_of(&examples, symbol, triggers).ok(),
        coverage: coverage_of(&examples, symbol, triggers).ok(),
        n_with_trigger,
        n_with_trigger_and_symbol,
        n_diluting,
        diluting_ids: diluting_of(&examples, symbol, triggers),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinedToken {
    pub token: String,
    pub strength: f64,
    /// Entries containing the token.
    pub count: usize,
    /// Entries containing the token whose output has the symbol.
    pub count_with_symbol: usize,
}

/// Ranks tokens seen at least `min_count` times in `symbol`'s inputs by their
/// single-token strength, then count, then lexicographically.
pub fn mine_triggers(
    split: &Split,
    pool: &Corpus,
    symbol: &str,
    min_count: usize,
    top_k: usize,
) -> Result<Vec<MinedToken>> {
    let examples = split.examples(pool)?;
    if !examples.iter().any(|e| e.has_symbol(symbol)) {
        return Err(Error::Undefined(format!("no example of `{symbol}`")));
    }
    // token -> (entries containing it, entries containing it with the symbol)
    let mut stats: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for ex in &examples {
        let distinct: BTreeSet<&str> = ex
            .tokens()
            .iter()
            .map(String::as_str)
            .filter(|t| *t != SEPARATOR)
            .collect();
        let positive = ex.has_symbol(symbol);
        for t in distinct {
            let s = stats.entry(t).or_default();
            s.0 += 1;
            if positive {
                s.1 += 1;
            }
        }
    }
    let mut ranked: Vec<MinedToken> = stats
        .into_iter()
        .filter(|(_, (_, pos))| *pos >= min_count.max(1))
        .map(|(t, (all, pos))| MinedToken {
            token: t.to_string(),
            strength: pos as f64 / all as f64,
            count: all,
            count_with_symbol: pos,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.strength
            .total_cmp(&a.strength)
            .then(b.count.cmp(&a.count))
            .then_with(|| a.token.cmp(&b.token))
    });
    ranked.truncate(top_k);
    Ok(ranked)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DilutionOptions {
    /// Drop diluting entries without replacement when the pool runs out.
    pub allow_deficit: bool,
    /// Remove only enough diluting entries to reach this strength.
    pub target_strength: Option<f64>,
}

/// Removes diluting entries from `split` and backfills the same number of
/// pool examples that contain neither the symbol nor any trigger, so that
/// `N` and `count(symbol)` are unchanged. Backfill candidates are pool
/// examples not already in the split.
pub fn remove_dilution(
    split: &Split,
    pool: &Corpus,
    triggers: &BTreeSet<String>,
    opts: DilutionOptions,
) -> Result<Split> {
    if triggers.is_empty() {
        return Err(Error::InvalidArgument("empty trigger set".into()));
    }
    let symbol = split.new_symbol().to_string();
    let is_diluting = |e: &SplitEntry| -> Result<bool> {
        let ex = pool.resolve(&e.id)?;
        Ok(!ex.has_symbol(&symbol) && ex.contains_any(triggers))
    };

    let mut diluting_positions = Vec::new();
    let mut positives_with_trigger = 0usize;
    for (i, e) in split.entries.iter().enumerate() {
        if is_diluting(e)? {
            diluting_positions.push(i);
        } else {
            let ex = pool.resolve(&e.id)?;
            if ex.has_symbol(&symbol) && ex.contains_any(triggers) {
                positives_with_trigger += 1;
            }
        }
    }

    let mut to_remove = diluting_positions;
    if let Some(target) = opts.target_strength {
        if !(target > 0.0 && target <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target strength {target} outside (0, 1]"
            )));
        }
        let keep = ((positives_with_trigger as f64 * (1.0 - target) / target) + 1e-6).floor() as usize;
        let drop = to_remove.len().saturating_sub(keep);
        to_remove.shuffle(&mut stream_rng(split.spec.seed, &format!("thin/{symbol}")));
        to_remove.truncate(drop);
        to_remove.sort_unstable();
    }
    if to_remove.is_empty() {
        return Ok(split.clone());
    }

    let in_split: HashSet<&str> = split.ids().collect();
    let mut candidates: Vec<usize> = pool
        .examples()
        .iter()
        .enumerate()
        .filter(|(_, e)| !in_split.contains(e.id.as_str()) && !e.has_symbol(&symbol) && !e.contains_any(triggers))
        .map(|(i, _)| i)
        .collect();
    candidates.shuffle(&mut stream_rng(split.spec.seed, &format!("backfill/{symbol}")));

    let needed = to_remove.len();
    if candidates.len() < needed && !opts.allow_deficit {
        return Err(Error::PoolExhausted {
            needed,
            available: candidates.len(),
        });
    }
    let filled = needed.min(candidates.len());

    let removing: HashSet<usize> = to_remove.iter().copied().collect();
    let mut entries: Vec<SplitEntry> = split
        .entries
        .iter()
        .enumerate()
        .filter(|(i, _)| !removing.contains(i))
        .map(|(_, e)| e.clone())
        .collect();
    entries.extend(candidates[..filled].iter().map(|&i| SplitEntry {
        id: pool.examples()[i].id.clone(),
        provenance: Provenance::Backfill,
    }));

    let mut out = Split::from_entries(split.spec.clone(), entries, pool)?;
    out.deficit = split.deficit + (needed - filled);
    out.removed = split.removed.clone();
    out.removed
        .extend(to_remove.iter().map(|&i| split.entries[i].id.clone()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_fixtures::{c0, c0_with_pool, split_over};

    fn managers() -> BTreeSet<String> {
        ["manager", "boss", "supervisor"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn c0_strength_and_coverage() {
        let pool = c0();
        let split = split_over(&pool, "FindManager");
        assert_eq!(
            source_signal_strength(&split, &pool, "FindManager", &managers()).unwrap(),
            0.5
        );
        assert_eq!(
            trigger_coverage(&split, &pool, "FindManager", &managers()).unwrap(),
            1.0
        );
        let none: BTreeSet<String> = ["zebra".to_string()].into();
        assert_eq!(trigger_coverage(&split, &pool, "FindManager", &none).unwrap(), 0.0);
        assert!(matches!(
            source_signal_strength(&split, &pool, "FindManager", &none),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn only_positives_have_triggers() {
        let pool = c0();
        let split = split_over(&pool, "PlayMusic");
        let t: BTreeSet<String> = ["music".to_string()].into();
        assert_eq!(source_signal_strength(&split, &pool, "PlayMusic", &t).unwrap(), 1.0);
    }

    #[test]
    fn coverage_requires_positives() {
        let pool = c0();
        let split = split_over(&pool, "FindManager");
        assert!(trigger_coverage(&split, &pool, "Nope", &managers()).is_err());
    }

    #[test]
    fn c0_diluting() {
        let pool = c0();
        let split = split_over(&pool, "FindManager");
        let d = find_diluting(&split, &pool, "FindManager", &managers()).unwrap();
        assert_eq!(d, ["e3".to_string(), "e6".to_string()].into());
    }

    #[test]
    fn c0_mining() {
        let pool = c0();
        let split = split_over(&pool, "FindManager");
        let mined = mine_triggers(&split, &pool, "FindManager", 1, 100).unwrap();
        let pos = |t: &str| mined.iter().position(|m| m.token == t).unwrap();
        assert!(pos("boss") < pos("manager"));
        assert_eq!(mined[pos("boss")].strength, 1.0);
        assert_eq!(mined[pos("boss")].count, 1);
        assert_eq!(mined[pos("manager")].strength, 0.5);
        assert_eq!(mined[pos("manager")].count, 2);
        // strength-1.0 tokens with count 1 come first, lexicographically
        assert_eq!(mined[0].token, "boss");
        assert!(mine_triggers(&split, &pool, "Nope", 1, 5).is_err());
        assert_eq!(mine_triggers(&split, &pool, "FindManager", 1, 2).unwrap().len(), 2);
        assert!(mine_triggers(&split, &pool, "FindManager", 3, 10).unwrap().is_empty());
    }

    #[test]
    fn c0_removal_with_backfill() {
        let pool = c0_with_pool();
        let split = split_over(&pool.select(&[0, 1, 2, 3, 4, 5]).unwrap(), "FindManager");
        let split = Split::from_entries(split.spec.clone(), split.entries.clone(), &pool).unwrap();
        let out = remove_dilution(&split, &pool, &managers(), DilutionOptions::default()).unwrap();
        let ids: BTreeSet<&str> = out.ids().collect();
        assert_eq!(ids, ["e1", "e2", "e4", "e5", "e7", "e8"].into());
        assert_eq!(out.len(), 6);
        assert_eq!(out.stats.count_new, 2);
        assert_eq!(out.stats.imbalance, split.stats.imbalance);
        assert_eq!(
            source_signal_strength(&out, &pool, "FindManager", &managers()).unwrap(),
            1.0
        );
        assert!(out
            .entries
            .iter()
            .filter(|e| e.id == "e7" || e.id == "e8")
            .all(|e| e.provenance == Provenance::Backfill));
        assert_eq!(out.removed, ["e3", "e6"]);
    }

    #[test]
    fn removal_fixed_point() {
        let pool = c0();
        let split = split_over(&pool, "PlayMusic");
        let t: BTreeSet<String> = ["music".to_string()].into();
        assert_eq!(
            remove_dilution(&split, &pool, &t, DilutionOptions::default()).unwrap(),
            split
        );
    }

    #[test]
    fn removal_deficit() {
        let pool = c0();
        let split = split_over(&pool, "FindManager");
        assert!(matches!(
            remove_dilution(&split, &pool, &managers(), DilutionOptions::default()),
            Err(Error::PoolExhausted {
                needed: 2,
                available: 0
            })
        ));
        let out = remove_dilution(
            &split,
            &pool,
            &managers(),
            DilutionOptions {
                allow_deficit: true,
                target_strength: None,
            },
        )
        .unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out.deficit, 2);
        assert!(out.stats.imbalance > split.stats.imbalance);
    }

    #[test]
    fn thinning_to_target() {
        let pool = c0();
        let split = split_over(&pool, "FindManager");
        let opts = DilutionOptions {
            allow_deficit: true,
            target_strength: Some(2.0 / 3.0),
        };
        let out = remove_dilution(&split, &pool, &managers(), opts).unwrap();
        assert_eq!(out.deficit, 1);
        assert!((source_signal_strength(&out, &pool, "FindManager", &managers()).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn report_identity() {
        let pool = c0();
        let split = split_over(&pool, "FindManager");
        let r = signal_report(&split, &pool, "FindManager", &managers()).unwrap();
        assert_eq!(r.n_with_trigger, 4);
        assert_eq!(r.n_with_trigger_and_symbol, 2);
        assert_eq!(r.n_diluting, 2);
        assert_eq!(r.csv_row(), "FindManager,6,0.5,1,2");
    }

    #[test]
    fn bundled_tables() {
        let b = TriggerSet::bundled();
        assert_eq!(b.len(), 10);
        let fm = b.iter().find(|s| s.symbol == "FindManager").unwrap();
        assert_eq!(fm.tokens, managers());
        let radio = b.iter().find(|s| s.symbol == "play_radio").unwrap();
        assert_eq!(radio.tokens.len(), 6);
        assert!(TriggerSet::new("x", ["n't"], TriggerOrigin::Manual).is_err());
        assert!(TriggerSet::new("x", Vec::<String>::new(), TriggerOrigin::Manual).is_err());
    }

    #[test]
    fn trigger_file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let one = dir.path().join("one.json");
        fs::write(
            &one,
            r#"{"symbol":"FindManager","tokens":["boss","manager"],"origin":"manual"}"#,
        )
        .unwrap();
        assert_eq!(TriggerSet::load_file(&one).unwrap().len(), 1);
        let many = dir.path().join("many.json");
        fs::write(&many, serde_json::to_string(&TriggerSet::bundled()).unwrap()).unwrap();
        assert_eq!(TriggerSet::load_file(&many).unwrap(), TriggerSet::bundled());
    }
}
