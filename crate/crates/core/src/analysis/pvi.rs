//! Pointwise V-usable information in bits, relative to a small model
//! family: multinomial logistic regression over hashed unigram and bigram
//! counts, trained by full-batch gradient descent.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexical::tokens;
use super::semantic::{fnv1a, Embedding};
use super::AnalysisError;
use crate::instance::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelFamilyConfig {
    /// Number of hashed feature buckets.
    pub dimension: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight of the (l2 / 2)·‖W‖² penalty; the bias is not penalized.
    pub l2: f64,
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for ModelFamilyConfig {
    fn default() -> Self {
        Self {
            dimension: 1 << 16,
            learning_rate: 1.0,
            epochs: 300,
            l2: 1e-3,
            eval_fraction: 0.2,
            seed: 0,
        }
    }
}

/// L2-normalized counts of hashed lowercased unigrams and bigrams.
pub fn featurize(text: &str, dimension: usize) -> Embedding {
    let words: Vec<String> = tokens(text).collect();
    let bucket = |feature: &str| (fnv1a(feature.as_bytes()) as usize % dimension.max(1)) as u32;
    let mut entries: Vec<(u32, f64)> = words.iter().map(|w| (bucket(&format!("u:{w}")), 1.0)).collect();
    entries.extend(words.windows(2).map(|p| (bucket(&format!("b:{} {}", p[0], p[1])), 1.0)));
    Embedding::from_entries(entries).normalized()
}

/// Softmax regression with dense weights (`classes × dimension`) and a bias
/// per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    classes: usize,
    dimension: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LogisticModel {
    pub fn zeros(classes: usize, dimension: usize) -> Self {
        Self {
            classes,
            dimension,
            weights: vec![0.0; classes * dimension],
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Weights (row-major by class) followed by the biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    pub fn set_parameters(&mut self, parameters: &[f64]) {
        assert_eq!(parameters.len(), self.weights.len() + self.bias.len());
        let (w, b) = parameters.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }

    fn logits(&self, x: &Embedding) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let row = &self.weights[k * self.dimension..(k + 1) * self.dimension];
                self.bias[k] + x.entries().iter().map(|&(j, v)| row[j as usize] * v).sum::<f64>()
            })
            .collect()
    }

    /// Class probabilities for one feature vector.
    pub fn predict(&self, x: &Embedding) -> Vec<f64> {
        let logits = self.logits(x);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    }

    /// Mean cross-entropy (nats) plus the L2 penalty, and its gradient laid
    /// out like [`Self::parameters`].
    pub fn loss_and_gradient(&self, xs: &[Embedding], ys: &[usize], l2: f64) -> (f64, Vec<f64>) {
        let n = xs.len().max(1) as f64;
        let mut grad_w: Vec<f64> = self.weights.iter().map(|w| l2 * w).collect();
        let mut grad_b = vec![0.0; self.classes];
        let mut loss = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (x, &y) in xs.iter().zip(ys) {
            let p = self.predict(x);
            loss -= p[y].max(f64::MIN_POSITIVE).ln() / n;
            for (k, pk) in p.iter().enumerate() {
                let delta = (pk - if k == y { 1.0 } else { 0.0 }) / n;
                grad_b[k] += delta;
                let row = &mut grad_w[k * self.dimension..(k + 1) * self.dimension];
                for &(j, v) in x.entries() {
                    row[j as usize] += delta * v;
                }
            }
        }
        grad_w.extend(grad_b);
        (loss, grad_w)
    }

    /// Mean cross-entropy in nats, without the penalty.
    pub fn cross_entropy(&self, xs: &[Embedding], ys: &[usize]) -> f64 {
        let total: f64 = xs.iter().zip(ys).map(|(x, &y)| -self.predict(x)[y].ln()).sum();
        total / xs.len().max(1) as f64
    }

    /// Runs `config.epochs` gradient steps. Columns no training example
    /// touches only decay, so the descent runs on the active columns and the
    /// rest are scaled once at the end.
    pub fn fit(&mut self, xs: &[Embedding], ys: &[usize], config: &ModelFamilyConfig) {
        let mut active: Vec<u32> = xs.iter().flat_map(|x| x.entries().iter().map(|&(j, _)| j)).collect();
        active.sort_unstable();
        active.dedup();
        if active.len() == self.dimension {
            return self.fit_dense(xs, ys, config);
        }
        let position = |j: u32| active.binary_search(&j).expect("active column") as u32;
        let compact_xs: Vec<Embedding> = xs
            .iter()
            .map(|x| Embedding::from_entries(x.entries().iter().map(|&(j, v)| (position(j), v))))
            .collect();
        let mut compact = LogisticModel::zeros(self.classes, active.len());
        for k in 0..self.classes {
            for (c, &j) in active.iter().enumerate() {
                compact.weights[k * active.len() + c] = self.weights[k * self.dimension + j as usize];
            }
        }
        compact.bias.clone_from(&self.bias);
        compact.fit_dense(&compact_xs, ys, config);

        let decay = (1.0 - config.learning_rate * config.l2).powi(config.epochs as i32);
        for w in &mut self.weights {
            *w *= decay;
        }
        for k in 0..self.classes {
            for (c, &j) in active.iter().enumerate() {
                self.weights[k * self.dimension + j as usize] = compact.weights[k * active.len() + c];
            }
        }
        self.bias = compact.bias;
    }

    fn fit_dense(&mut self, xs: &[Embedding], ys: &[usize], config: &ModelFamilyConfig) {
        for _ in 0..config.epochs {
            let (_, grad) = self.loss_and_gradient(xs, ys, config.l2);
            let (gw, gb) = grad.split_at(self.weights.len());
            for (w, g) in self.weights.iter_mut().zip(gw) {
                *w -= config.learning_rate * g;
            }
            for (b, g) in self.bias.iter_mut().zip(gb) {
                *b -= config.learning_rate * g;
            }
        }
    }
}

/// Entropy of a distribution in bits.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.log2()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Seeded stratified split: each class with at least two members gives
/// `round(fraction · size)` of them (at least one, never all) to eval.
/// A zero fraction keeps everything in train.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> Split {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let take = if members.len() < 2 || fraction <= 0.0 {
            0
        } else {
            ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1)
        };
        eval.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    Split { train, eval }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFamily {
    pub classes: Vec<String>,
    pub conditional: LogisticModel,
    /// Trained on all-zero features, so only its bias moves.
    pub null: LogisticModel,
    pub split: Split,
    pub features: Vec<Embedding>,
    pub labels: Vec<usize>,
}

fn class_index(labels: &[String], classes: Option<&[String]>) -> Result<(Vec<String>, Vec<usize>), AnalysisError> {
    let classes: Vec<String> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut observed: Vec<String> = labels.to_vec();
            observed.sort();
            observed.dedup();
            observed
        }
    };
    let ys = labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| AnalysisError::UnknownLabel(l.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut present: Vec<usize> = ys.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(AnalysisError::SingleLabel(present.len()));
    }
    Ok((classes, ys))
}

/// Trains the conditional and null models on the train split of
/// `(texts, labels)`. `classes` fixes the label order (observed labels,
/// sorted, when `None`).
pub fn train_examples(
    texts: &[String],
    labels: &[String],
    classes: Option<&[String]>,
    config: &ModelFamilyConfig,
) -> Result<ModelFamily, AnalysisError> {
    let (classes, ys) = class_index(labels, classes)?;
    let features: Vec<Embedding> = texts.iter().map(|t| featurize(t, config.dimension)).collect();
    let split = stratified_split(&ys, config.eval_fraction, config.seed);
    let train_x: Vec<Embedding> = split.train.iter().map(|&i| features[i].clone()).collect();
    let train_y: Vec<usize> = split.train.iter().map(|&i| ys[i]).collect();
    let mut conditional = LogisticModel::zeros(classes.len(), config.dimension);
    conditional.fit(&train_x, &train_y, config);
    let zero = vec![Embedding::default(); train_x.len()];
    let mut null = LogisticModel::zeros(classes.len(), config.dimension);
    null.fit(&zero, &train_y, config);
    Ok(ModelFamily {
        classes,
        conditional,
        null,
        split,
        features,
        labels: ys,
    })
}

/// Trains on a dataset's final labels, using the selected fields (all
/// fields when empty) as input text.
pub fn train_model_family(
    dataset: &Dataset,
    fields: &[String],
    config: &ModelFamilyConfig,
) -> Result<ModelFamily, AnalysisError> {
    let labels: Vec<String> = dataset.instances().iter().map(|i| i.final_label().to_string()).collect();
    let schema = &dataset.manifest().labels;
    let classes = (!schema.is_open()).then(|| schema.labels());
    train_examples(&dataset.texts_of(fields), &labels, classes, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PviRecord {
    pub instance_id: String,
    pub log2_p_conditional: f64,
    pub log2_p_null: f64,
    pub pvi_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PviSummary {
    pub mean_pvi_bits: f64,
    pub train_size: usize,
    pub eval_size: usize,
    pub classes: Vec<String>,
    pub records: Vec<PviRecord>,
}

/// PVI of each `(id, x, y)` under a given pair of models.
pub fn pvi_with_models(
    conditional: &LogisticModel,
    null: &LogisticModel,
    examples: &[(String, Embedding, usize)],
) -> Vec<PviRecord> {
    let zero = Embedding::default();
    examples
        .iter()
        .map(|(id, x, y)| {
            let log2_p_conditional = conditional.predict(x)[*y].log2();
            let log2_p_null = null.predict(&zero)[*y].log2();
            PviRecord {
                instance_id: id.clone(),
                log2_p_conditional,
                log2_p_null,
                pvi_bits: log2_p_conditional - log2_p_null,
            }
        })
        .collect()
}

pub fn mean_pvi(records: &[PviRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| r.pvi_bits).sum::<f64>() / records.len() as f64
}

/// Trains a model family and scores its eval split.
pub fn pvi_examples(
    ids: &[String],
    texts: &[String],
    labels: &[String],
    classes: Option<&[String]>,
    config: &ModelFamilyConfig,
) -> Result<PviSummary, AnalysisError> {
    let family = train_examples(texts, labels, classes, config)?;
    let eval: Vec<(String, Embedding, usize)> = family
        .split
        .eval
        .iter()
        .map(|&i| (ids[i].clone(), family.features[i].clone(), family.labels[i]))
        .collect();
    let records = pvi_with_models(&family.conditional, &family.null, &eval);
    Ok(PviSummary {
        mean_pvi_bits: mean_pvi(&records),
        train_size: family.split.train.len(),
        eval_size: records.len(),
        classes: family.classes,
        records,
    })
}

pub fn pvi_dataset(dataset: &Dataset, fields: &[String], config: &ModelFamilyConfig) -> Result<PviSummary, AnalysisError> {
    let ids: Vec<String> = dataset.instances().iter().map(|i| i.instance_id().to_string()).collect();
    let labels: Vec<String> = dataset.instances().iter().map(|i| i.final_label().to_string()).collect();
    let schema = &dataset.manifest().labels;
    let classes = (!schema.is_open()).then(|| schema.labels());
    pvi_examples(&ids, &dataset.texts_of(fields), &labels, classes, config)
}
