use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{featurize, FeatureConfig, SparseFeatures};
use crate::corpus::{Example, TaskKind};
use crate::error::{Error, Result};

/// Label of the reserved class that absorbs symbols unseen in training.
pub const OTHER: &str = "<other>";

const MAGIC: &[u8; 4] = b"DILM";
const FORMAT_VERSION: u32 = 1;

/// Linear model over hashed features: a softmax over labels for intent
/// tasks, one independent sigmoid head per symbol for program tasks.
///
/// Weights are stored feature-major (`[bucket][output]`) and multiplied by a
/// lazily applied scale, so L2 decay costs O(1) per step.
#[derive(Clone, Debug)]
pub struct ModelState {
    task: TaskKind,
    features: FeatureConfig,
    labels: Vec<String>,
    raw: Vec<f64>,
    scale: f64,
    bias: Vec<f64>,
}

/// Compares effective parameters, so a model equals its reloaded artifact
/// whatever its pending weight scale.
impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.task == other.task
            && self.features == other.features
            && self.labels == other.labels
            && self.bias == other.bias
            && self.raw.len() == other.raw.len()
            && self
                .raw
                .iter()
                .zip(&other.raw)
                .all(|(a, b)| self.scale * a == other.scale * b)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    task: TaskKind,
    features: FeatureConfig,
    labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Prediction {
    Label(String),
    Symbols(BTreeSet<String>),
}

/// What an example asks of the model, in output indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    Symbols(Vec<usize>),
}

impl ModelState {
    /// Zero-initialised model. For intent tasks `labels` gets the reserved
    /// [`OTHER`] class appended.
    pub fn zeros(task: TaskKind, features: FeatureConfig, symbols: impl IntoIterator<Item = String>) -> Result<Self> {
        features.validate()?;
        let mut labels: Vec<String> = symbols.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if labels.iter().any(|l| l == OTHER) {
            return Err(Error::InvalidArgument(format!("`{OTHER}` is reserved")));
        }
        if task == TaskKind::Intent {
            labels.push(OTHER.to_string());
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one symbol".into()));
        }
        let n_out = labels.len();
        Ok(ModelState {
            task,
            features,
            raw: vec![0.0; features.hash_dim * n_out],
            scale: 1.0,
            bias: vec![0.0; n_out],
            labels,
        })
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_outputs(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        let sorted = match self.task {
            TaskKind::Intent => &self.labels[..self.labels.len() - 1],
            TaskKind::Program => &self.labels[..],
        };
        sorted
            .binary_search_by(|l| l.as_str().cmp(label))
            .ok()
            .or_else(|| (self.task == TaskKind::Intent && label == OTHER).then(|| self.labels.len() - 1))
    }

    pub fn weight(&self, bucket: usize, output: usize) -> f64 {
        self.scale * self.raw[bucket * self.n_outputs() + output]
    }

    pub fn set_weight(&mut self, bucket: usize, output: usize, value: f64) {
        let n = self.n_outputs();
        self.raw[bucket * n + output] = value / self.scale;
    }

    pub fn bias(&self, output: usize) -> f64 {
        self.bias[output]
    }

    pub fn set_bias(&mut self, output: usize, value: f64) {
        self.bias[output] = value;
    }

    /// Multiplies every weight (not the biases) by `factor`.
    pub fn scale_weights(&mut self, factor: f64) {
        self.scale *= factor;
        if self.scale.abs() < 1e-9 {
            self.fold_scale();
        }
    }

    fn fold_scale(&mut self) {
        let s = self.scale;
        self.raw.iter_mut().for_each(|w| *w *= s);
        self.scale = 1.0;
    }

    /// Adds `delta` to the effective weight of (`bucket`, `output`).
    pub(crate) fn add_weight(&mut self, bucket: usize, output: usize, delta: f64) {
        let n = self.n_outputs();
        self.raw[bucket * n + output] += delta / self.scale;
    }

    pub(crate) fn add_bias(&mut self, output: usize, delta: f64) {
        self.bias[output] += delta;
    }

    pub fn is_finite(&self) -> bool {
        self.scale.is_finite() && self.raw.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn featurize(&self, tokens: &[String]) -> SparseFeatures {
        featurize(tokens, &self.features)
    }

    pub fn logits(&self, x: &SparseFeatures) -> Vec<f64> {
        let n = self.n_outputs();
        let mut acc = vec![0.0; n];
        for &f in x.indices() {
            let row = &self.raw[f as usize * n..(f as usize + 1) * n];
            for (a, w) in acc.iter_mut().zip(row) {
                *a += w;
            }
        }
        acc.iter().zip(&self.bias).map(|(a, b)| self.scale * a + b).collect()
    }

    /// Gold target of `example` in output indices. Unknown intent labels map
    /// to [`OTHER`]; unknown program symbols are dropped.
    pub fn target(&self, example: &Example) -> Target {
        match self.task {
            TaskKind::Intent => {
                let label = example.label().unwrap_or(OTHER);
                let other = self.n_outputs() - 1;
                Target::Class(self.label_index(label).unwrap_or(other))
            }
            TaskKind::Program => {
                Target::Symbols(example.symbols().iter().filter_map(|s| self.label_index(s)).collect())
            }
        }
    }

    pub fn predict_features(&self, x: &SparseFeatures) -> Prediction {
        let z = self.logits(x);
        match self.task {
            TaskKind::Intent => Prediction::Label(self.labels[argmax(&z)].clone()),
            TaskKind::Program => Prediction::Symbols(
                z.iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(i, _)| self.labels[i].clone())
                    .collect(),
            ),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            task: self.task,
            features: self.features,
            labels: self.labels.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * (self.raw.len() + self.bias.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for b in &self.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for w in &self.raw {
            out.extend_from_slice(&(self.scale * w).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Artifact(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a model artifact"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Artifact(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        let header: Header = serde_json::from_slice(body.get(..hlen).ok_or_else(|| bad("truncated header"))?)?;
        header.features.validate()?;
        let n_out = header.labels.len();
        let floats = &body[hlen..];
        if floats.len() != 8 * n_out * (header.features.hash_dim + 1) {
            return Err(bad("parameter block has the wrong size"));
        }
        let mut values = floats
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let bias: Vec<f64> = values.by_ref().take(n_out).collect();
        let raw: Vec<f64> = values.collect();
        Ok(ModelState {
            task: header.task,
            features: header.features,
            labels: header.labels,
            raw,
            scale: 1.0,
            bias,
        })
    }

    /// Hex SHA-256 of the serialized artifact.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Prediction {
    /// Exact match against the example's gold output.
    pub fn matches(&self, example: &Example) -> bool {
        match self {
            Prediction::Label(l) => example.label() == Some(l.as_str()),
            Prediction::Symbols(s) => s == example.symbols(),
        }
    }
}

pub fn predict(model: &ModelState, example: &Example) -> Prediction {
    model.predict_features(&model.featurize(example.tokens()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: TaskKind) -> ModelState {
        ModelState::zeros(
            task,
            FeatureConfig {
                hash_dim: 16,
                ngram_order: 1,
            },
            ["b".to_string(), "a".to_string(), "c".to_string()],
        )
        .unwrap()
    }

    #[test]
    fn zero_model_predicts_first_class() {
        let m = small(TaskKind::Intent);
        let ex = Example::intent("x", "hello there", "c").unwrap();
        assert_eq!(predict(&m, &ex), Prediction::Label("a".into()));
        assert_eq!(m.labels(), ["a", "b", "c", OTHER]);
    }

    #[test]
    fn negative_logits_predict_empty_set() {
        let mut m = small(TaskKind::Program);
        for o in 0..m.n_outputs() {
            m.set_bias(o, -1.0);
        }
        let ex = Example::program("x", "hello", "(a)").unwrap();
        assert_eq!(predict(&m, &ex), Prediction::Symbols(BTreeSet::new()));
    }

    #[test]
    fn targets() {
        let m = small(TaskKind::Intent);
        assert_eq!(m.target(&Example::intent("x", "hi", "b").unwrap()), Target::Class(1));
        assert_eq!(m.target(&Example::intent("x", "hi", "zzz").unwrap()), Target::Class(3));
        let p = small(TaskKind::Program);
        assert_eq!(
            p.target(&Example::program("x", "hi", "(c (zzz) (a))").unwrap()),
            Target::Symbols(vec![0, 2])
        );
    }

    #[test]
    fn scale_is_transparent() {
        let mut m = small(TaskKind::Intent);
        m.set_weight(3, 1, 2.0);
        m.scale_weights(0.5);
        assert_eq!(m.weight(3, 1), 1.0);
        m.add_weight(3, 1, 1.0);
        assert_eq!(m.weight(3, 1), 2.0);
        m.scale_weights(1e-12);
        assert!((m.weight(3, 1) - 2e-12).abs() < 1e-24);
    }

    #[test]
    fn artifact_round_trip() {
        let mut m = small(TaskKind::Program);
        m.set_weight(5, 2, -0.25);
        m.set_bias(1, 3.5);
        m.scale_weights(2.0);
        let bytes = m.to_bytes();
        let back = ModelState::from_bytes(&bytes).unwrap();
        assert_eq!(back.weight(5, 2), -0.5);
        assert_eq!(back.bias(1), 3.5);
        assert_eq!(back.to_bytes(), bytes);
        assert!(ModelState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ModelState::from_bytes(b"nope").is_err());
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
