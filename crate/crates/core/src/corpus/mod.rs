//! Canonical data model: examples, corpora, JSONL ingestion and the
//! model-input construction shared by every downstream stage.

mod lisp;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use lisp::extract_symbols;
pub use tokenize::{tokenize, SEPARATOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// One label per example.
    Intent,
    /// A set of symbols per example, extracted from a program.
    Program,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Output {
    Intent { label: String },
    Program { lisp: String },
}

impl Output {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            Output::Intent { .. } => TaskKind::Intent,
            Output::Program { .. } => TaskKind::Program,
        }
    }
}

/// On-disk shape of one JSONL line. Field order here is the canonical key
/// order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    #[serde(default)]
    pub context: Vec<Turn>,
    pub utterance: String,
    pub output: Output,
}

/// One labeled unit with its model input and gold symbols cached.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Record", into = "Record")]
pub struct Example {
    pub id: String,
    pub context: Vec<Turn>,
    pub utterance: String,
    pub output: Output,
    symbols: BTreeSet<String>,
    tokens: Vec<String>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        context: Vec<Turn>,
        utterance: impl Into<String>,
        output: Output,
    ) -> Result<Self> {
        let utterance = utterance.into();
        let symbols = match &output {
            Output::Intent { label } => {
                if label.is_empty() {
                    return Err(Error::InvalidArgument("empty intent label".into()));
                }
                BTreeSet::from([label.clone()])
            }
            Output::Program { lisp } => {
                let symbols = extract_symbols(lisp)?;
                if symbols.is_empty() {
                    return Err(Error::InvalidArgument("program output has no symbols".into()));
                }
                symbols
            }
        };
        let tokens = context_input(&context, &utterance)?;
        Ok(Example {
            id: id.into(),
            context,
            utterance,
            output,
            symbols,
            tokens,
        })
    }

    /// Convenience constructor for a context-free single-label example.
    pub fn intent(id: impl Into<String>, utterance: impl Into<String>, label: impl Into<String>) -> Result<Self> {
        Example::new(id, Vec::new(), utterance, Output::Intent { label: label.into() })
    }

    pub fn program(id: impl Into<String>, utterance: impl Into<String>, lisp: impl Into<String>) -> Result<Self> {
        Example::new(id, Vec::new(), utterance, Output::Program { lisp: lisp.into() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn symbols(&self) -> &BTreeSet<String> {
        &self.symbols
    }

    pub fn has_symbol(&self, symbol: &str) -> bool {
        self.symbols.contains(symbol)
    }

    /// The single gold label, for intent examples.
    pub fn label(&self) -> Option<&str> {
        match &self.output {
            Output::Intent { label } => Some(label),
            Output::Program { .. } => None,
        }
    }

    pub fn contains_any(&self, triggers: &BTreeSet<String>) -> bool {
        self.tokens.iter().any(|t| triggers.contains(t))
    }
}

impl TryFrom<Record> for Example {
    type Error = Error;

    fn try_from(r: Record) -> Result<Self> {
        Example::new(r.id, r.context, r.utterance, r.output)
    }
}

impl From<Example> for Record {
    fn from(e: Example) -> Self {
        Record {
            id: e.id,
            context: e.context,
            utterance: e.utterance,
            output: e.output,
        }
    }
}

/// Concatenates the previous user turn, the agent response and the current
/// utterance with [`SEPARATOR`] between non-empty turns.
pub fn build_context_input(prev_user: Option<&str>, agent: Option<&str>, current: &str) -> Result<Vec<String>> {
    let current_tokens = tokenize(current);
    if current_tokens.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    let mut out = Vec::new();
    for turn in [prev_user, agent].into_iter().flatten() {
        let toks = tokenize(turn);
        if !toks.is_empty() {
            out.extend(toks);
            out.push(SEPARATOR.to_string());
        }
    }
    out.extend(current_tokens);
    Ok(out)
}

/// Model input for a record: the most recent user turn and the most recent
/// agent turn from `context`, then the utterance.
pub fn context_input(context: &[Turn], utterance: &str) -> Result<Vec<String>> {
    let last = |who: Speaker| context.iter().rev().find(|t| t.speaker == who).map(|t| t.text.as_str());
    build_context_input(last(Speaker::User), last(Speaker::Agent), utterance)
}

/// An ordered, id-indexed collection of examples of one task kind.
#[derive(Clone, Debug)]
pub struct Corpus {
    task: TaskKind,
    examples: Vec<Example>,
    inventory: BTreeMap<String, usize>,
    index: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.task == other.task && self.examples == other.examples
    }
}

impl Corpus {
    pub fn new(task: TaskKind, examples: Vec<Example>) -> Result<Self> {
        let mut index = HashMap::with_capacity(examples.len());
        let mut inventory = BTreeMap::new();
        for (i, ex) in examples.iter().enumerate() {
            if ex.output.task_kind() != task {
                return Err(Error::Record {
                    line: i + 1,
                    message: format!("output kind {:?} in a {:?} corpus", ex.output.task_kind(), task),
                });
            }
            if index.insert(ex.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: ex.id.clone(),
                    line: i + 1,
                });
            }
            for s in ex.symbols() {
                *inventory.entry(s.clone()).or_insert(0) += 1;
            }
        }
        Ok(Corpus {
            task,
            examples,
            inventory,
            index,
        })
    }

    pub fn load(path: impl AsRef<Path>, task: TaskKind) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Corpus::parse_jsonl(&text, task)
    }

    pub fn parse_jsonl(text: &str, task: TaskKind) -> Result<Self> {
        let mut examples = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line).map_err(|e| Error::Record {
                line: line_no,
                message: e.to_string(),
            })?;
            let example = Example::try_from(record).map_err(|e| Error::Record {
                line: line_no,
                message: e.to_string(),
            })?;
            if example.output.task_kind() != task {
                return Err(Error::Record {
                    line: line_no,
                    message: format!("output kind {:?} in a {:?} corpus", example.output.task_kind(), task),
                });
            }
            if seen.insert(example.id.clone(), line_no).is_some() {
                return Err(Error::DuplicateId {
                    id: example.id,
                    line: line_no,
                });
            }
            examples.push(example);
        }
        if examples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Corpus::new(task, examples)
    }

    /// Canonical serialization: one record per line, keys in schema order,
    /// LF line endings.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("records always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Number of examples containing each symbol.
    pub fn inventory(&self) -> &BTreeMap<String, usize> {
        &self.inventory
    }

    pub fn count(&self, symbol: &str) -> usize {
        self.inventory.get(symbol).copied().unwrap_or(0)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.position(id).map(|i| &self.examples[i])
    }

    pub fn resolve(&self, id: &str) -> Result<&Example> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// The examples at `positions`, in the given order.
    pub fn select(&self, positions: &[usize]) -> Result<Corpus> {
        Corpus::new(self.task, positions.iter().map(|&i| self.examples[i].clone()).collect())
    }
}
