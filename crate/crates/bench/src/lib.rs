//! Fixtures shared by the benchmarks.

use std::collections::{BTreeMap, BTreeSet};

use dilution_core::{carve_eval, generate_corpus, make_split, Carve, Split, SplitSpec, SymbolSpec, SynthSpec};

/// Ten synthetic symbols, the first one rare.
pub fn spec() -> SynthSpec {
    SynthSpec {
        symbols: (0..10)
            .map(|i| SymbolSpec {
                name: format!("s{i}"),
                triggers: vec![format!("t{i}a"), format!("t{i}b")],
                p_trig: if i == 0 { 1.0 } else { 0.5 },
            })
            .collect(),
        p_cross: 0.02,
        vocab_size: 300,
        zipf_exponent: 1.0,
        min_len: 5,
        max_len: 12,
        background_specificity: 0.3,
        seed: 7,
    }
}

pub fn carve(per_symbol: usize) -> Carve {
    let counts: BTreeMap<String, usize> = (0..10).map(|i| (format!("s{i}"), per_symbol)).collect();
    let corpus = generate_corpus(&spec(), &counts).expect("valid spec");
    carve_eval(&corpus, 0.1, 0.1, 0).expect("carvable corpus")
}

pub fn split(carve: &Carve, n: usize) -> Split {
    let spec = SplitSpec {
        new_symbol: "s0".into(),
        k: 30,
        n,
        seed: 0,
        source: "bench".into(),
    };
    make_split(&carve.train_pool, spec).expect("split fits the pool")
}

pub fn triggers() -> BTreeSet<String> {
    ["t0a".to_string(), "t0b".to_string()].into()
}
