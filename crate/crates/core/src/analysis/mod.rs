//! Dataset quality metrics: vocabulary size, pairwise embedding similarity,
//! pointwise V-usable information, entity bias, label counts and leakage
//! against a reference set.

pub mod entities;
pub mod leakage;
pub mod lexical;
pub mod pvi;
pub mod semantic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{Dataset, LabelCount};

pub use entities::{entity_distribution, EntityTag, EntityTagger, Gazetteer};
pub use leakage::{leakage_check, LeakagePair};
pub use lexical::vocab_count;
pub use pvi::{pvi_dataset, train_model_family, ModelFamilyConfig, PviRecord, PviSummary};
pub use semantic::{pairwise_similarity_stats, EmbeddingProvider, HashedProvider, SimilarityOptions, SimilarityStats};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least two texts, got {0}")]
    TooFewTexts(usize),
    #[error("need at least two distinct labels, got {0}")]
    SingleLabel(usize),
    #[error("label \"{0}\" is not one of the model classes")]
    UnknownLabel(String),
    #[error("unknown entity tag \"{0}\" (expected GPE, PERSON, NORP, PRODUCT or OTHER)")]
    UnknownTag(String),
    #[error("gazetteer line {line}: {message}")]
    Gazetteer { line: usize, message: String },
}

/// Per-label counts before and after self-correction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub original: Vec<LabelCount>,
    #[serde(rename = "final")]
    pub corrected: Vec<LabelCount>,
}

/// Closed schemas list every label (zeros included) in schema order; open
/// schemas list the observed labels sorted.
pub fn label_distribution(dataset: &Dataset) -> LabelDistribution {
    let schema = &dataset.manifest().labels;
    let count = |label_of: &dyn Fn(usize) -> String| {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        if !schema.is_open() {
            for label in schema.labels() {
                counts.insert(label.clone(), 0);
            }
        }
        for i in 0..dataset.len() {
            *counts.entry(label_of(i)).or_default() += 1;
        }
        let order: Vec<String> = if schema.is_open() {
            counts.keys().cloned().collect()
        } else {
            schema.labels().to_vec()
        };
        order
            .into_iter()
            .map(|label| LabelCount {
                count: counts[&label],
                label,
            })
            .collect::<Vec<_>>()
    };
    let instances = dataset.instances();
    LabelDistribution {
        original: count(&|i| instances[i].original_label().to_string()),
        corrected: count(&|i| instances[i].final_label().to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalReport {
    pub vocab: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_vocab: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticReport {
    pub provider: String,
    #[serde(flatten)]
    pub stats: SimilarityStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub tag: EntityTag,
    pub tagger: String,
    pub entities: Vec<(String, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_entities: Option<Vec<(String, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub reference_size: usize,
    pub pairs: Vec<LeakagePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub task: String,
    pub instances: usize,
    pub fields: Vec<String>,
    pub lexical: LexicalReport,
    /// `None` with fewer than two texts.
    pub semantic: Option<SemanticReport>,
    /// `None` when disabled or when fewer than two labels occur.
    pub pvi: Option<PviSummary>,
    pub bias: Vec<BiasReport>,
    pub leakage: Option<LeakageReport>,
    pub labels: LabelDistribution,
}

pub struct AnalysisOptions {
    /// Fields whose concatenation is analysed; all fields when empty.
    pub fields: Vec<String>,
    pub similarity: SimilarityOptions,
    pub provider: Box<dyn EmbeddingProvider>,
    pub pvi: Option<ModelFamilyConfig>,
    pub tagger: Option<Box<dyn EntityTagger>>,
    pub tags: Vec<EntityTag>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            fields: Vec::new(),
            similarity: SimilarityOptions::default(),
            provider: Box::new(HashedProvider::default()),
            pvi: Some(ModelFamilyConfig::default()),
            tagger: None,
            tags: Vec::new(),
        }
    }
}

pub fn analyze(dataset: &Dataset, reference: Option<&Dataset>, options: &AnalysisOptions) -> Result<AnalysisReport, AnalysisError> {
    let texts = dataset.texts_of(&options.fields);
    let reference_texts = reference.map(|r| r.texts_of(&options.fields));
    let semantic = if texts.len() < 2 {
        None
    } else {
        Some(SemanticReport {
            provider: options.provider.name(),
            stats: pairwise_similarity_stats(&texts, options.provider.as_ref(), &options.similarity)?,
        })
    };
    let pvi = match &options.pvi {
        Some(config) => match pvi_dataset(dataset, &options.fields, config) {
            Ok(summary) => Some(summary),
            Err(AnalysisError::SingleLabel(n)) => {
                log::warn!("skipping PVI: {n} distinct label(s)");
                None
            }
            Err(e) => return Err(e),
        },
        None => None,
    };
    let bias = match &options.tagger {
        Some(tagger) => options
            .tags
            .iter()
            .map(|&tag| BiasReport {
                tag,
                tagger: tagger.name(),
                entities: entity_distribution(&texts, tagger.as_ref(), tag),
                reference_entities: reference_texts
                    .as_ref()
                    .map(|r| entity_distribution(r, tagger.as_ref(), tag)),
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(AnalysisReport {
        task: dataset.task_id().to_string(),
        instances: dataset.len(),
        fields: if options.fields.is_empty() {
            dataset.manifest().fields.clone()
        } else {
            options.fields.clone()
        },
        lexical: LexicalReport {
            vocab: vocab_count(&texts),
            reference_vocab: reference_texts.as_ref().map(|r| vocab_count(r)),
        },
        semantic,
        pvi,
        bias,
        leakage: reference_texts.as_ref().map(|r| LeakageReport {
            reference_size: r.len(),
            pairs: leakage_check(&texts, r),
        }),
        labels: label_distribution(dataset),
    })
}
