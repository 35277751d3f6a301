//! Incremental symbol learning at desk scale.
//!
//! A new symbol gets a fixed annotation budget `k` while the training set
//! grows to `N` examples. This crate builds such splits, measures how the
//! association between the symbol and its trigger tokens is diluted by
//! unrelated examples that happen to contain those tokens, applies the
//! usual interventions (upsampling, group DRO, dilution removal) and trains
//! and scores a hashed linear classifier on the result.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod sampling;
pub mod seed;
pub mod signal;
pub mod splits;
pub mod synth;
pub mod trainer;

#[cfg(test)]
mod test_fixtures;

pub use corpus::{Corpus, Example, Output, TaskKind};
pub use error::{Error, Result};
pub use eval::{bootstrap_ci, competing_subset, evaluate, BootstrapConfig, Interval, MetricReport};
pub use sampling::{upsample_adaptive, upsample_fixed, Ratio, UpsamplePlan};
pub use signal::{
    find_diluting, mine_triggers, remove_dilution, signal_report, source_signal_strength, trigger_coverage,
    DilutionOptions, SignalReport, TriggerOrigin, TriggerSet,
};
pub use splits::{carve_eval, make_split, max_setting_size, Carve, Provenance, Split, SplitEntry, SplitSpec};
pub use synth::{expected_strength, generate_corpus, SymbolSpec, SynthSpec};
pub use trainer::{featurize, predict, train, FeatureConfig, ModelState, Objective, Prediction, TrainConfig};
