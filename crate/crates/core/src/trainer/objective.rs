//! Batch losses and their gradients.
//!
//! ERM averages per-example losses over the batch. Group DRO takes the
//! largest per-group mean among the groups present in the batch; its
//! (sub)gradient is the mean gradient of that group alone, with ties going
//! to the lowest group index.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::features::SparseFeatures;
use super::model::{ModelState, Target};
use crate::corpus::{Example, TaskKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Erm,
    GroupDro,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grouping {
    /// One group per gold label (intent tasks only).
    PerSymbol,
    /// Group 1 holds examples whose output contains `symbol`, group 0 the rest.
    ContainsSymbol { symbol: String },
}

impl Grouping {
    pub fn validate(&self, task: TaskKind) -> Result<()> {
        if task == TaskKind::Program && *self == Grouping::PerSymbol {
            return Err(Error::InvalidArgument(
                "per-symbol grouping needs single-label outputs; use contains_symbol for programs".into(),
            ));
        }
        Ok(())
    }

    fn group_of(&self, target: &Target, example: &Example) -> u32 {
        match (self, target) {
            (Grouping::ContainsSymbol { symbol }, _) => u32::from(example.has_symbol(symbol)),
            (Grouping::PerSymbol, Target::Class(c)) => *c as u32,
            (Grouping::PerSymbol, Target::Symbols(_)) => unreachable!("rejected by validate"),
        }
    }
}

/// An example reduced to what the objective needs.
#[derive(Clone, Debug)]
pub struct Instance {
    pub features: SparseFeatures,
    pub target: Target,
    pub group: u32,
}

pub fn prepare(model: &ModelState, examples: &[&Example], grouping: &Grouping) -> Result<Vec<Instance>> {
    grouping.validate(model.task())?;
    Ok(examples
        .iter()
        .map(|ex| {
            let target = model.target(ex);
            Instance {
                features: model.featurize(ex.tokens()),
                group: grouping.group_of(&target, ex),
                target,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    /// Mean loss of each group present in the batch.
    pub group_means: BTreeMap<u32, f64>,
    /// Group with the largest mean (lowest index on ties).
    pub worst_group: u32,
}

/// Gradient of a batch loss, sparse over feature buckets.
#[derive(Clone, Debug, Default)]
pub struct Gradient {
    pub(crate) rows: HashMap<u32, Vec<f64>>,
    pub(crate) bias: Vec<f64>,
}

impl Gradient {
    pub fn weight(&self, bucket: usize, output: usize) -> f64 {
        self.rows.get(&(bucket as u32)).map_or(0.0, |r| r[output])
    }

    pub fn bias(&self, output: usize) -> f64 {
        self.bias[output]
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss of one instance and its derivative with respect to the logits.
/// Softmax cross-entropy for a class target; summed binary cross-entropy
/// for a symbol-set target.
pub fn instance_loss(model: &ModelState, inst: &Instance) -> (f64, Vec<f64>) {
    let z = model.logits(&inst.features);
    match &inst.target {
        Target::Class(y) => {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let loss = m + sum.ln() - z[*y];
            let mut d: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            d[*y] -= 1.0;
            (loss, d)
        }
        Target::Symbols(gold) => {
            let mut y = vec![0.0; z.len()];
            for &g in gold {
                y[g] = 1.0;
            }
            let loss = z.iter().zip(&y).map(|(&zi, &yi)| softplus(zi) - yi * zi).sum();
            let d = z.iter().zip(&y).map(|(&zi, &yi)| sigmoid(zi) - yi).collect();
            (loss, d)
        }
    }
}

struct Forward {
    losses: Vec<f64>,
    dlogits: Vec<Vec<f64>>,
    summary: BatchLoss,
}

fn forward(model: &ModelState, batch: &[&Instance], objective: Objective) -> Result<Forward> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (losses, dlogits): (Vec<f64>, Vec<Vec<f64>>) = batch.iter().map(|i| instance_loss(model, i)).unzip();
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (inst, l) in batch.iter().zip(&losses) {
        let s = sums.entry(inst.group).or_default();
        s.0 += l;
        s.1 += 1;
    }
    let group_means: BTreeMap<u32, f64> = sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect();
    let mut worst_group = *group_means.keys().next().expect("nonempty batch");
    for (&g, &m) in &group_means {
        if m > group_means[&worst_group] {
            worst_group = g;
        }
    }
    let loss = match objective {
        Objective::Erm => losses.iter().sum::<f64>() / losses.len() as f64,
        Objective::GroupDro => group_means[&worst_group],
    };
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(Forward {
        losses,
        dlogits,
        summary: BatchLoss {
            loss,
            group_means,
            worst_group,
        },
    })
}

pub fn instance_batch_loss(model: &ModelState, batch: &[&Instance], objective: Objective) -> Result<BatchLoss> {
    forward(model, batch, objective).map(|f| f.summary)
}

pub fn batch_gradient(model: &ModelState, batch: &[&Instance], objective: Objective) -> Result<(BatchLoss, Gradient)> {
    let fwd = forward(model, batch, objective)?;
    let weights: Vec<f64> = match objective {
        Objective::Erm => vec![1.0 / batch.len() as f64; batch.len()],
        Objective::GroupDro => {
            let g = fwd.summary.worst_group;
            let n = batch.iter().filter(|i| i.group == g).count() as f64;
            batch.iter().map(|i| if i.group == g { 1.0 / n } else { 0.0 }).collect()
        }
    };
    let n_out = model.n_outputs();
    let mut grad = Gradient {
        rows: HashMap::new(),
        bias: vec![0.0; n_out],
    };
    for ((inst, d), &w) in batch.iter().zip(&fwd.dlogits).zip(&weights) {
        if w == 0.0 {
            continue;
        }
        for (b, di) in grad.bias.iter_mut().zip(d) {
            *b += w * di;
        }
        for &f in inst.features.indices() {
            let row = grad.rows.entry(f).or_insert_with(|| vec![0.0; n_out]);
            for (r, di) in row.iter_mut().zip(d) {
                *r += w * di;
            }
        }
    }
    debug_assert_eq!(fwd.losses.len(), batch.len());
    Ok((fwd.summary, grad))
}

/// Loss of a batch of examples under `objective` with the given grouping.
pub fn batch_loss(
    model: &ModelState,
    batch: &[&Example],
    objective: Objective,
    grouping: &Grouping,
) -> Result<BatchLoss> {
    let instances = prepare(model, batch, grouping)?;
    let refs: Vec<&Instance> = instances.iter().collect();
    instance_batch_loss(model, &refs, objective)
}
