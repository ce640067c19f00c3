//! OOD-ness and diversity metrics over embedded text datasets.
//!
//! OOD-ness of a sample is its negated nearest-neighbor cosine similarity
//! against a baseline dataset: a sample deep inside the baseline scores
//! about −1, a sample unlike everything in the baseline scores near 0, so
//! higher means more out-of-distribution. The `literal_min` convention
//! (minimum cosine instead of negated maximum) is kept available behind a
//! flag. Diversity of a dataset is the negated mean of each sample's
//! maximum similarity to any other sample.

use crate::gateway::EmbeddingVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedItem {
    pub id: String,
    pub text: String,
    pub vector: Vec<f64>,
}

/// Embedded texts sharing one embedding model. Construction rejects
/// mixed dimensions and zero-norm vectors, so metric code can assume both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedDataset {
    pub model_id: String,
    pub items: Vec<EmbeddedItem>,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("vector dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("zero-norm vector for item `{id}`")]
    ZeroNorm { id: String },
    #[error("vector entries must be finite for item `{id}`")]
    NonFinite { id: String },
    #[error("{0} must be non-empty")]
    Empty(&'static str),
    #[error("dataset needs at least {need} items, got {got}")]
    TooSmall { need: usize, got: usize },
    #[error("model_id mismatch: ours `{ours}` vs baseline `{baseline}` — embeddings not comparable")]
    ModelIdMismatch { ours: String, baseline: String },
    #[error("lower threshold {lower} exceeds upper threshold {upper}")]
    BadThresholds { lower: f64, upper: f64 },
    #[error("batch size {batch} must be smaller than the baseline size {size}")]
    BatchTooLarge { batch: usize, size: usize },
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
}

impl EmbeddedDataset {
    pub fn new(model_id: impl Into<String>, items: Vec<EmbeddedItem>) -> Result<Self, MetricsError> {
        let model_id = model_id.into();
        let mut ids = BTreeSet::new();
        let mut dim: Option<usize> = None;
        for item in &items {
            if !ids.insert(item.id.clone()) {
                return Err(MetricsError::DuplicateId(item.id.clone()));
            }
            match dim {
                None => dim = Some(item.vector.len()),
                Some(d) if d != item.vector.len() => {
                    return Err(MetricsError::DimensionMismatch { a: d, b: item.vector.len() })
                }
                _ => {}
            }
            if item.vector.iter().any(|v| !v.is_finite()) {
                return Err(MetricsError::NonFinite { id: item.id.clone() });
            }
            if norm(&item.vector) == 0.0 {
                return Err(MetricsError::ZeroNorm { id: item.id.clone() });
            }
        }
        Ok(EmbeddedDataset { model_id, items })
    }

    /// Pair ids and texts with their embedding vectors.
    pub fn from_embeddings(
        model_id: impl Into<String>,
        ids_texts: Vec<(String, String)>,
        vectors: Vec<EmbeddingVector>,
    ) -> Result<Self, MetricsError> {
        assert_eq!(ids_texts.len(), vectors.len());
        let items = ids_texts
            .into_iter()
            .zip(vectors)
            .map(|((id, text), v)| EmbeddedItem { id, text, vector: v.values })
            .collect();
        Self::new(model_id, items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.items.first().map(|i| i.vector.len())
    }
}

/// Which reading of the OOD-ness formula to use. `NegatedMax` is the default:
/// it makes higher mean more OOD and reproduces the reported magnitudes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    NegatedMax,
    LiteralMin,
}

impl std::str::FromStr for Convention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negated_max" => Ok(Convention::NegatedMax),
            "literal_min" => Ok(Convention::LiteralMin),
            other => Err(format!("unknown convention `{other}` (negated_max | literal_min)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Oodness,
    Diversity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub score: f64,
}

/// Parameters echoed into reports so they are self-describing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<Convention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric_kind: MetricKind,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_name: Option<String>,
    pub parameters: ReportParams,
    pub per_sample: Vec<SampleScore>,
    /// Arithmetic mean of the per-sample scores.
    pub aggregate: f64,
}

impl MetricReport {
    fn from_scores(
        metric_kind: MetricKind,
        model_id: &str,
        baseline_name: Option<String>,
        parameters: ReportParams,
        per_sample: Vec<SampleScore>,
    ) -> Self {
        let mean = per_sample.iter().map(|s| s.score).sum::<f64>() / per_sample.len() as f64;
        MetricReport {
            metric_kind,
            model_id: model_id.to_string(),
            baseline_name,
            parameters,
            per_sample,
            aggregate: mean,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

// Bit-identical vectors must score exactly 1.0; sqrt round-off in
// `norm(u) * norm(v)` can otherwise land one ulp below and break the exact
// self-comparison identities (a dataset scored against itself is −1.0, not
// −0.9999999999999998).
fn pairwise_cosine(u: &[f64], nu: f64, v: &[f64], nv: f64) -> f64 {
    if u == v {
        return 1.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Cosine similarity in [−1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    if u.len() != v.len() {
        return Err(MetricsError::DimensionMismatch { a: u.len(), b: v.len() });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(MetricsError::ZeroNorm { id: "<anonymous>".into() });
    }
    Ok(pairwise_cosine(u, nu, v, nv))
}

fn nearest_neighbor_cosine(e: &[f64], baseline: &EmbeddedDataset) -> f64 {
    let ne = norm(e);
    baseline
        .items
        .iter()
        .map(|b| pairwise_cosine(&b.vector, norm(&b.vector), e, ne))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn smallest_cosine(e: &[f64], baseline: &EmbeddedDataset) -> f64 {
    let ne = norm(e);
    baseline
        .items
        .iter()
        .map(|b| pairwise_cosine(&b.vector, norm(&b.vector), e, ne))
        .fold(f64::INFINITY, f64::min)
}

/// OOD-ness of one embedding against a baseline.
pub fn sample_oodness(
    e: &[f64],
    baseline: &EmbeddedDataset,
    convention: Convention,
) -> Result<f64, MetricsError> {
    if baseline.is_empty() {
        return Err(MetricsError::Empty("baseline"));
    }
    let dim = baseline.dim().unwrap();
    if e.len() != dim {
        return Err(MetricsError::DimensionMismatch { a: e.len(), b: dim });
    }
    if norm(e) == 0.0 {
        return Err(MetricsError::ZeroNorm { id: "<probe>".into() });
    }
    Ok(match convention {
        Convention::NegatedMax => -nearest_neighbor_cosine(e, baseline),
        Convention::LiteralMin => smallest_cosine(e, baseline),
    })
}

/// Mean OOD-ness of a dataset against a baseline.
pub fn dataset_oodness(
    ours: &EmbeddedDataset,
    baseline: &EmbeddedDataset,
    convention: Convention,
) -> Result<MetricReport, MetricsError> {
    if ours.is_empty() {
        return Err(MetricsError::Empty("dataset"));
    }
    if baseline.is_empty() {
        return Err(MetricsError::Empty("baseline"));
    }
    if ours.model_id != baseline.model_id {
        return Err(MetricsError::ModelIdMismatch {
            ours: ours.model_id.clone(),
            baseline: baseline.model_id.clone(),
        });
    }
    if ours.dim() != baseline.dim() {
        return Err(MetricsError::DimensionMismatch {
            a: ours.dim().unwrap(),
            b: baseline.dim().unwrap(),
        });
    }
    // per-sample scoring is embarrassingly parallel; collect preserves order
    let per_sample: Vec<SampleScore> = ours
        .items
        .par_iter()
        .map(|item| SampleScore {
            id: item.id.clone(),
            score: match convention {
                Convention::NegatedMax => -nearest_neighbor_cosine(&item.vector, baseline),
                Convention::LiteralMin => smallest_cosine(&item.vector, baseline),
            },
        })
        .collect();
    Ok(MetricReport::from_scores(
        MetricKind::Oodness,
        &ours.model_id,
        Some(baseline.model_id.clone()),
        ReportParams { convention: Some(convention), ..Default::default() },
        per_sample,
    ))
}

/// Maximum cosine similarity between sample `j` and every other sample.
pub fn sample_self_similarity(j: usize, dataset: &EmbeddedDataset) -> Result<f64, MetricsError> {
    if dataset.len() < 2 {
        return Err(MetricsError::TooSmall { need: 2, got: dataset.len() });
    }
    assert!(j < dataset.len(), "index {j} out of range");
    let e = &dataset.items[j].vector;
    let ne = norm(e);
    Ok(dataset
        .items
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != j)
        .map(|(_, other)| pairwise_cosine(&other.vector, norm(&other.vector), e, ne))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Diversity = negated mean self-similarity; higher is more diverse.
/// Per-sample scores are already negated so the aggregate stays the plain
/// mean of the per-sample column.
pub fn dataset_diversity(dataset: &EmbeddedDataset) -> Result<MetricReport, MetricsError> {
    if dataset.len() < 2 {
        return Err(MetricsError::TooSmall { need: 2, got: dataset.len() });
    }
    let per_sample: Vec<SampleScore> = (0..dataset.len())
        .into_par_iter()
        .map(|j| SampleScore {
            id: dataset.items[j].id.clone(),
            score: -sample_self_similarity(j, dataset).expect("size checked"),
        })
        .collect();
    Ok(MetricReport::from_scores(
        MetricKind::Diversity,
        &dataset.model_id,
        None,
        ReportParams::default(),
        per_sample,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item: EmbeddedItem,
    pub score: f64,
}

/// Partition of a dataset by OOD-ness thresholds, order preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<ScoredItem>,
    pub rejected_low: Vec<ScoredItem>,
    pub rejected_high: Vec<ScoredItem>,
}

/// Keep samples whose OOD-ness lies in [lower, upper]; sort the rest into
/// too-similar (`rejected_low`) and implausibly-far (`rejected_high`) bins.
pub fn filter_by_oodness(
    dataset: &EmbeddedDataset,
    baseline: &EmbeddedDataset,
    lower: f64,
    upper: f64,
    convention: Convention,
) -> Result<FilterOutcome, MetricsError> {
    if lower > upper {
        return Err(MetricsError::BadThresholds { lower, upper });
    }
    let report = dataset_oodness(dataset, baseline, convention)?;
    let mut outcome = FilterOutcome {
        kept: Vec::new(),
        rejected_low: Vec::new(),
        rejected_high: Vec::new(),
    };
    for (item, scored) in dataset.items.iter().zip(&report.per_sample) {
        let entry = ScoredItem { item: item.clone(), score: scored.score };
        if scored.score < lower {
            outcome.rejected_low.push(entry);
        } else if scored.score > upper {
            outcome.rejected_high.push(entry);
        } else {
            outcome.kept.push(entry);
        }
    }
    Ok(outcome)
}

/// How in-distribution the baseline looks to itself: repeatedly sample a
/// batch, score it against the unsampled remainder, and average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReport {
    pub value: f64,
    pub per_repeat: Vec<f64>,
    pub parameters: ReportParams,
    pub model_id: String,
}

pub fn baseline_reference_oodness(
    baseline: &EmbeddedDataset,
    batch: usize,
    repeats: usize,
    seed: u64,
    convention: Convention,
) -> Result<ReferenceReport, MetricsError> {
    if batch == 0 {
        return Err(MetricsError::Empty("batch"));
    }
    if repeats == 0 {
        return Err(MetricsError::Empty("repeats"));
    }
    if batch >= baseline.len() {
        return Err(MetricsError::BatchTooLarge { batch, size: baseline.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_repeat = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        // sample `batch` indices without replacement
        let mut indices: Vec<usize> = (0..baseline.len()).collect();
        indices.shuffle(&mut rng);
        let (sampled, rest) = indices.split_at(batch);
        let complement = EmbeddedDataset {
            model_id: baseline.model_id.clone(),
            items: rest.iter().map(|&i| baseline.items[i].clone()).collect(),
        };
        let mean = sampled
            .iter()
            .map(|&i| {
                sample_oodness(&baseline.items[i].vector, &complement, convention)
                    .expect("complement non-empty, dims equal")
            })
            .sum::<f64>()
            / batch as f64;
        per_repeat.push(mean);
    }
    let value = per_repeat.iter().sum::<f64>() / repeats as f64;
    Ok(ReferenceReport {
        value,
        per_repeat,
        parameters: ReportParams {
            convention: Some(convention),
            batch: Some(batch),
            repeats: Some(repeats),
            seed: Some(seed),
            ..Default::default()
        },
        model_id: baseline.model_id.clone(),
    })
}
