//! Incremental-learning training splits: a fixed budget `k` of examples for
//! the new symbol inside a training set of total size `N`.
//!
//! Sampling is nested. For a given pool, symbol and seed the `k` new-symbol
//! examples are the same at every `N`, and the other examples at a smaller
//! `N` are a prefix of the same seeded permutation used at a larger `N`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Corpus, Example, TaskKind};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub new_symbol: String,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    /// Identifies the pool the split was drawn from (usually its digest).
    pub source: String,
}

/// Where a training entry came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Original,
    Duplicate(u32),
    Backfill,
}

impl Provenance {
    fn ordinal(self) -> u32 {
        match self {
            Provenance::Original | Provenance::Backfill => 0,
            Provenance::Duplicate(i) => i,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => f.write_str("original"),
            Provenance::Duplicate(i) => write!(f, "duplicate#{i}"),
            Provenance::Backfill => f.write_str("backfill"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Provenance::Original),
            "backfill" => Ok(Provenance::Backfill),
            _ => s
                .strip_prefix("duplicate#")
                .and_then(|i| i.parse().ok())
                .filter(|&i| i > 0)
                .map(Provenance::Duplicate)
                .ok_or_else(|| Error::InvalidArgument(format!("bad provenance tag `{s}`"))),
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub id: String,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    /// Entries whose output contains the new symbol, with multiplicity.
    pub count_new: usize,
    pub n: usize,
    pub imbalance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub spec: SplitSpec,
    pub entries: Vec<SplitEntry>,
    pub stats: SplitStats,
    /// Diluting entries dropped without a replacement.
    #[serde(default)]
    pub deficit: usize,
    /// Ids removed by interventions, in removal order.
    #[serde(default)]
    pub removed: Vec<String>,
}

impl Split {
    /// Builds a split from entries, ordering them by pool position and
    /// duplicate number and recomputing the stats.
    pub fn from_entries(spec: SplitSpec, mut entries: Vec<SplitEntry>, pool: &Corpus) -> Result<Split> {
        let mut keyed = Vec::with_capacity(entries.len());
        for e in entries.drain(..) {
            let pos = pool.position(&e.id).ok_or_else(|| Error::UnknownId(e.id.clone()))?;
            keyed.push(((pos, e.provenance.ordinal()), e));
        }
        keyed.sort_by_key(|(k, _)| *k);
        let entries: Vec<SplitEntry> = keyed.into_iter().map(|(_, e)| e).collect();
        let count_new = entries
            .iter()
            .filter(|e| pool.get(&e.id).is_some_and(|x| x.has_symbol(&spec.new_symbol)))
            .count();
        let n = entries.len();
        let imbalance = if n == 0 { 0.0 } else { count_new as f64 / n as f64 };
        Ok(Split {
            spec,
            entries,
            stats: SplitStats {
                count_new,
                n,
                imbalance,
            },
            deficit: 0,
            removed: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn new_symbol(&self) -> &str {
        &self.spec.new_symbol
    }

    /// The training multiset, duplicates included.
    pub fn examples<'a>(&self, pool: &'a Corpus) -> Result<Vec<&'a Example>> {
        self.entries.iter().map(|e| pool.resolve(&e.id)).collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("splits always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Split> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Frozen evaluation carve of a corpus.
#[derive(Clone, Debug)]
pub struct Carve {
    pub train_pool: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    /// Strata too small to split proportionally; their examples were carved
    /// together without stratification.
    pub unstratified: Vec<String>,
}

fn stratum(ex: &Example, task: TaskKind) -> String {
    match task {
        TaskKind::Intent => ex.label().unwrap_or_default().to_string(),
        TaskKind::Program => ex.symbols().iter().cloned().collect::<Vec<_>>().join(" "),
    }
}

fn allocate(n: usize, dev_fraction: f64, test_fraction: f64) -> (usize, usize) {
    let dev = ((n as f64 * dev_fraction).round() as usize).min(n);
    let test = ((n as f64 * test_fraction).round() as usize).min(n - dev);
    (dev, test)
}

/// Partitions `corpus` into train pool, dev and test, stratified by label
/// (or by symbol set for programs). Strata with fewer than three examples are
/// pooled and carved unstratified.
pub fn carve_eval(corpus: &Corpus, dev_fraction: f64, test_fraction: f64, seed: u64) -> Result<Carve> {
    if !(dev_fraction > 0.0 && test_fraction > 0.0 && dev_fraction + test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fractions must be positive with sum < 1, got dev={dev_fraction}, test={test_fraction}"
        )));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, ex) in corpus.examples().iter().enumerate() {
        strata.entry(stratum(ex, corpus.task())).or_default().push(i);
    }

    let mut rng = stream_rng(seed, "carve");
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut leftovers = Vec::new();
    let mut unstratified = Vec::new();
    let mut assign = |mut members: Vec<usize>, rng: &mut rand_chacha::ChaCha8Rng| {
        members.shuffle(rng);
        let (nd, nt) = allocate(members.len(), dev_fraction, test_fraction);
        dev.extend_from_slice(&members[..nd]);
        test.extend_from_slice(&members[nd..nd + nt]);
        train.extend_from_slice(&members[nd + nt..]);
    };
    for (key, members) in strata {
        if members.len() < 3 {
            log::warn!(
                "stratum `{key}` has {} examples; carving it unstratified",
                members.len()
            );
            unstratified.push(key);
            leftovers.extend(members);
        } else {
            assign(members, &mut rng);
        }
    }
    leftovers.sort_unstable();
    assign(leftovers, &mut rng);

    for part in [&mut train, &mut dev, &mut test] {
        part.sort_unstable();
    }
    Ok(Carve {
        train_pool: corpus.select(&train)?,
        dev: corpus.select(&dev)?,
        test: corpus.select(&test)?,
        unstratified,
    })
}

/// Largest `N` available for `symbol` when capped at `k` of its examples.
pub fn max_setting_size(pool: &Corpus, symbol: &str, k: usize) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let with = pool.count(symbol);
    if with < k {
        return Err(Error::NotEnoughExamples {
            symbol: symbol.to_string(),
            available: with,
            required: k,
        });
    }
    Ok(pool.len() - with + k)
}

fn seeded_permutation(pool: &Corpus, symbol: &str, containing: bool, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = pool
        .examples()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.has_symbol(symbol) == containing)
        .map(|(i, _)| i)
        .collect();
    let stream = if containing { "split/with" } else { "split/without" };
    idx.shuffle(&mut stream_rng(seed, &format!("{stream}/{symbol}")));
    idx
}

pub fn make_split(pool: &Corpus, spec: SplitSpec) -> Result<Split> {
    let bound = max_setting_size(pool, &spec.new_symbol, spec.k)?;
    if spec.k > spec.n {
        return Err(Error::InvalidArgument(format!("k = {} exceeds N = {}", spec.k, spec.n)));
    }
    if spec.n > bound {
        return Err(Error::ExceedsMaxSetting {
            symbol: spec.new_symbol.clone(),
            requested: spec.n,
            bound,
        });
    }
    let with = seeded_permutation(pool, &spec.new_symbol, true, spec.seed);
    let without = seeded_permutation(pool, &spec.new_symbol, false, spec.seed);
    let entries = with[..spec.k]
        .iter()
        .chain(&without[..spec.n - spec.k])
        .map(|&i| SplitEntry {
            id: pool.examples()[i].id.clone(),
            provenance: Provenance::Original,
        })
        .collect();
    Split::from_entries(spec, entries, pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn pool(n_with: usize, n_without: usize) -> Corpus {
        let mut ex = Vec::new();
        for i in 0..n_with {
            ex.push(Example::intent(format!("y{i}"), format!("play radio {i}"), "play_radio").unwrap());
        }
        for i in 0..n_without {
            ex.push(Example::intent(format!("o{i}"), format!("other thing {i}"), format!("c{}", i % 7)).unwrap());
        }
        Corpus::new(TaskKind::Intent, ex).unwrap()
    }

    fn spec(k: usize, n: usize) -> SplitSpec {
        SplitSpec {
            new_symbol: "play_radio".into(),
            k,
            n,
            seed: 3,
            source: "test".into(),
        }
    }

    #[test]
    fn provenance_tags_round_trip() {
        for p in [Provenance::Original, Provenance::Backfill, Provenance::Duplicate(31)] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
        assert!("duplicate#0".parse::<Provenance>().is_err());
        assert!("copy".parse::<Provenance>().is_err());
    }

    #[test]
    fn counts_and_ratio() {
        let p = pool(60, 2000);
        let s = make_split(&p, spec(30, 750)).unwrap();
        assert_eq!(s.stats.count_new, 30);
        assert_eq!(s.stats.n, 750);
        assert_eq!(s.len(), 750);
        assert!((s.stats.imbalance - 0.04).abs() < 1e-15);
    }

    #[test]
    fn nested_across_n() {
        let p = pool(60, 2000);
        let small = make_split(&p, spec(30, 750)).unwrap();
        let large = make_split(&p, spec(30, 1500)).unwrap();
        let a: BTreeSet<_> = small.ids().collect();
        let b: BTreeSet<_> = large.ids().collect();
        assert!(a.is_subset(&b));
        let pos =
            |s: &Split| -> BTreeSet<String> { s.ids().filter(|id| id.starts_with('y')).map(String::from).collect() };
        assert_eq!(pos(&small), pos(&large));
    }

    #[test]
    fn exceeding_bound_names_it() {
        let p = pool(50, 950);
        match make_split(&p, spec(30, 981)) {
            Err(Error::ExceedsMaxSetting { bound, .. }) => assert_eq!(bound, 980),
            other => panic!("{other:?}"),
        }
        assert_eq!(make_split(&p, spec(30, 980)).unwrap().len(), 980);
    }

    #[test]
    fn max_setting() {
        assert_eq!(max_setting_size(&pool(50, 950), "play_radio", 30).unwrap(), 980);
        assert_eq!(max_setting_size(&pool(10, 0), "play_radio", 10).unwrap(), 10);
        assert!(matches!(
            max_setting_size(&pool(5, 10), "play_radio", 10),
            Err(Error::NotEnoughExamples { available: 5, .. })
        ));
    }

    #[test]
    fn serialization_deterministic() {
        let p = pool(60, 500);
        let a = make_split(&p, spec(30, 400)).unwrap().to_json();
        let b = make_split(&p, spec(30, 400)).unwrap().to_json();
        assert_eq!(a, b);
        assert!(a.contains("\"provenance\": \"original\""));
        assert_eq!(Split::from_json(&a).unwrap().to_json(), a);
    }

    #[test]
    fn carve_six() {
        let c0 = crate::test_fixtures::c0();
        let carve = carve_eval(&c0, 1.0 / 3.0, 1.0 / 3.0, 5).unwrap();
        assert_eq!((carve.train_pool.len(), carve.dev.len(), carve.test.len()), (2, 2, 2));
        let mut all: Vec<String> = [&carve.train_pool, &carve.dev, &carve.test]
            .iter()
            .flat_map(|c| c.examples().iter().map(|e| e.id.clone()))
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 6);
        let again = carve_eval(&c0, 1.0 / 3.0, 1.0 / 3.0, 5).unwrap();
        assert_eq!(carve.test, again.test);
        assert_eq!(carve.unstratified.len(), 5);
    }

    #[test]
    fn carve_rejects_bad_fractions() {
        let c0 = crate::test_fixtures::c0();
        assert!(carve_eval(&c0, 0.5, 0.5, 0).is_err());
        assert!(carve_eval(&c0, 0.0, 0.5, 0).is_err());
    }
}
