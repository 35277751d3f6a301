use crate::corpus::{Corpus, Example, TaskKind};
use crate::splits::{Provenance, Split, SplitEntry, SplitSpec};

const C0: &[(&str, &str, &str)] = &[
    ("e1", "who is my manager", "FindManager"),
    ("e2", "what does my boss do", "FindManager"),
    ("e3", "invite my manager s wife", "CreateEvent"),
    ("e4", "schedule lunch tomorrow", "Tomorrow"),
    ("e5", "play some music", "PlayMusic"),
    ("e6", "email my supervisor", "SendEmail"),
    ("e7", "send a note to dad", "SendEmail"),
    ("e8", "book a table", "Restaurant"),
];

fn build(n: usize) -> Corpus {
    let ex = C0[..n]
        .iter()
        .map(|(id, u, l)| Example::intent(*id, *u, *l).unwrap())
        .collect();
    Corpus::new(TaskKind::Intent, ex).unwrap()
}

/// The six-example corpus used throughout the unit tests.
pub fn c0() -> Corpus {
    build(6)
}

/// C0 plus two trigger-free backfill candidates.
pub fn c0_with_pool() -> Corpus {
    build(8)
}

/// A split holding every example of `pool` once.
pub fn split_over(pool: &Corpus, symbol: &str) -> Split {
    let spec = SplitSpec {
        new_symbol: symbol.into(),
        k: pool.count(symbol),
        n: pool.len(),
        seed: 1,
        source: "fixture".into(),
    };
    let entries = pool
        .examples()
        .iter()
        .map(|e| SplitEntry {
            id: e.id.clone(),
            provenance: Provenance::Original,
        })
        .collect();
    Split::from_entries(spec, entries, pool).unwrap()
}
