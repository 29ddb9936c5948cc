//! Seeded training and evaluation loops.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{total_loss, LossWeights};
use crate::model::{ClipInput, ModelConfig, Network};
use crate::param::sgd_step;
use crate::synthdata::{generate_dataset, Dataset, DatasetConfig, Sample, Split};
use crate::tape::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Seeds weight init and shuffling.
    pub seed: u64,
    /// Class-balanced batches instead of a uniform shuffle.
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 25, lr: 0.01, momentum: 0.9, batch_size: 16, seed: 0, balanced: false }
    }
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub synthdata: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.synthdata.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        let tc = &self.train;
        if !(tc.lr >= 0.0) || !tc.lr.is_finite() {
            return Err(Error::Invalid(format!("train.lr must be a finite value >= 0, got {}", tc.lr)));
        }
        if !(tc.momentum >= 0.0) || tc.momentum >= 1.0 {
            return Err(Error::Invalid(format!("train.momentum must be in [0, 1), got {}", tc.momentum)));
        }
        if tc.batch_size < 1 {
            return Err(Error::Invalid("train.batch_size must be >= 1".into()));
        }
        if self.loss.lambda1 > 0.0 && tc.batch_size < 2 {
            return Err(Error::Invalid("train.batch_size must be >= 2 when loss.lambda1 > 0".into()));
        }
        if self.model.classes != self.synthdata.num_classes {
            return Err(Error::Invalid(format!(
                "model.classes ({}) must equal synthdata.num_classes ({})",
                self.model.classes, self.synthdata.num_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub loss: f64,
    pub cross_entropy: f64,
    pub three_d: f64,
    pub cam_reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub train_seen: f64,
    pub test_seen: f64,
    pub test_unseen: f64,
}

impl Accuracies {
    pub fn get(&self, split: Split) -> f64 {
        match split {
            Split::TrainSeen => self.train_seen,
            Split::TestSeen => self.test_seen,
            Split::TestUnseen => self.test_unseen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochLosses>,
    pub accuracy: Accuracies,
}

/// All `(i, j)`, `i < j`, with `labels[i] == labels[j]`.
pub fn pair_same_label(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                out.push((i, j));
            }
        }
    }
    out
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Item {
    clip: ClipInput,
    label: usize,
}

fn items(samples: &[&Sample]) -> Result<Vec<Item>> {
    let mut out = Vec::new();
    for s in samples {
        for v in &s.views {
            out.push(Item { clip: ClipInput::from_view(v)?, label: s.class });
        }
    }
    Ok(out)
}

fn epoch_order(rng: &mut ChaCha8Rng, items: &[Item], classes: usize, balanced: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    if !balanced {
        return order;
    }
    let mut queues: Vec<Vec<usize>> = (0..classes).map(|_| Vec::new()).collect();
    for &i in &order {
        queues[items[i].label % classes].push(i);
    }
    let mut out = Vec::with_capacity(order.len());
    let mut round = 0;
    while out.len() < order.len() {
        for q in &queues {
            if let Some(&i) = q.get(round) {
                out.push(i);
            }
        }
        round += 1;
    }
    out
}

/// Fraction of views whose argmax logit is the label.
pub fn accuracy(net: &Network, samples: &[&Sample]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in samples {
        for v in &s.views {
            if argmax(&net.predict(v)?) == s.class {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptySplit("no views".into()));
    }
    Ok(correct as f64 / total as f64)
}

pub fn evaluate(net: &Network, dataset: &Dataset, split: Split) -> Result<f64> {
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(Error::EmptySplit(split.as_str().into()));
    }
    accuracy(net, &samples)
}

pub fn evaluate_all(net: &Network, dataset: &Dataset) -> Result<Accuracies> {
    Ok(Accuracies {
        train_seen: evaluate(net, dataset, Split::TrainSeen)?,
        test_seen: evaluate(net, dataset, Split::TestSeen)?,
        test_unseen: evaluate(net, dataset, Split::TestUnseen)?,
    })
}

/// Trains on the train-seen split of `dataset`, calling `on_epoch` after every epoch.
pub fn train_on<F>(exp: &Experiment, dataset: &Dataset, mut on_epoch: F) -> Result<(Network, Metrics)>
where
    F: FnMut(usize, &EpochLosses),
{
    exp.validate()?;
    let tc = &exp.train;
    let mut net = Network::new(&exp.model, tc.seed)?;
    let train = dataset.split(Split::TrainSeen);
    if train.is_empty() {
        return Err(Error::EmptySplit(Split::TrainSeen.as_str().into()));
    }
    let items = items(&train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(1);
    let mut history = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        let order = epoch_order(&mut rng, &items, exp.model.classes, tc.balanced);
        let mut sums = EpochLosses { loss: 0.0, cross_entropy: 0.0, three_d: 0.0, cam_reg: 0.0 };
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let mut t = Tape::new();
            let bound = net.bind(&mut t);
            let mut logits = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            let mut reps = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let out = net.forward(&mut t, &bound, &items[i].clip)?;
                logits.push(out.logits);
                labels.push(items[i].label);
                if let Some(r) = out.aux.var() {
                    reps.push(r);
                }
            }
            let pairs = if reps.len() == chunk.len() { pair_same_label(&labels) } else { Vec::new() };
            let cams = net.camera_matrices(&mut t, &bound)?;
            let parts = total_loss(&mut t, &logits, &labels, &reps, &pairs, &cams, &exp.loss)?;
            let loss = t.value(parts.total).item();
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch: b });
            }
            sums.loss += loss;
            sums.cross_entropy += t.value(parts.cross_entropy).item();
            sums.three_d += t.value(parts.three_d).item();
            sums.cam_reg += t.value(parts.cam_reg).item();
            batches += 1;
            net.store.zero_grad();
            t.backward(parts.total, &mut net.store)?;
            sgd_step(&mut net.store, tc.lr, tc.momentum)?;
        }
        let n = batches as f64;
        let e = EpochLosses {
            loss: sums.loss / n,
            cross_entropy: sums.cross_entropy / n,
            three_d: sums.three_d / n,
            cam_reg: sums.cam_reg / n,
        };
        on_epoch(epoch, &e);
        history.push(e);
    }
    let accuracy = evaluate_all(&net, dataset)?;
    Ok((net, Metrics { epochs: history, accuracy }))
}

/// Generates the dataset and trains.
pub fn train(exp: &Experiment) -> Result<(Network, Metrics)> {
    exp.validate()?;
    let ds = generate_dataset(&exp.synthdata)?;
    train_on(exp, &ds, |_, _| {})
}
