//! Preference-data synthesis.
//!
//! For each cluster's m most representative training examples, every
//! candidate prompt is run through the synthesizer LLM; binary fitness
//! against the gold answer splits the prompts into good and bad sets at
//! the decision threshold, and every (good, bad) pair becomes one
//! training tuple.

use serde::{Deserialize, Serialize};

use crate::cluster::{nearest_to_centroid, ClusterModel};
use crate::domain::{
    canonical_answer, Artifact, ArtifactHeader, CanonicalAnswer, ExampleIndex, PairsMode,
    PipelineConfig, PreferenceTuple, Prompt, PromptDatabase, QAExample,
};
use crate::error::{ApsError, Result};
use crate::gateway::{answer_request, complete_many, LlmGateway, Stage};

/// Binary exact-match fitness. A missing answer never matches.
pub fn fitness(predicted: &CanonicalAnswer, gold: &str) -> f64 {
    match predicted {
        CanonicalAnswer::Answer(a) if a == gold => 1.0,
        _ => 0.0,
    }
}

/// Decision threshold over one example's fitness scores:
/// (max - min) / 2, exactly.
pub fn decision_threshold(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(ApsError::Precondition(
            "decision threshold needs at least one score".into(),
        ));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((max - min) / 2.0)
}

/// One scored (example, prompt) pair with the raw synthesizer output,
/// so fitness stays recomputable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub example_id: String,
    pub prompt_id: String,
    pub raw_output: String,
    pub fitness: f64,
}

/// Per-example split of the prompt set at the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedPrompts {
    pub example_id: String,
    pub lambda: f64,
    pub good: Vec<String>,
    pub bad: Vec<String>,
}

impl PartitionedPrompts {
    pub fn is_degenerate(&self) -> bool {
        self.good.is_empty() || self.bad.is_empty()
    }
}

/// Score every candidate prompt against one example and split at the
/// threshold. Good and bad sets keep prompt-id order.
pub fn partition_prompts(
    example: &QAExample,
    prompts: &[&Prompt],
    gateway: &dyn LlmGateway,
    config: &PipelineConfig,
) -> Result<(PartitionedPrompts, Vec<FitnessRecord>)> {
    if prompts.is_empty() {
        return Err(ApsError::Precondition(
            "cannot partition an empty prompt set".into(),
        ));
    }
    let requests: Vec<_> = prompts
        .iter()
        .map(|prompt| answer_request(Stage::Synthesize, Some(&prompt.text), example, config))
        .collect();
    let responses = complete_many(gateway, &requests, gateway.max_in_flight());
    let mut records = Vec::with_capacity(prompts.len());
    for (prompt, outcome) in prompts.iter().zip(responses) {
        let raw = outcome.map_err(|e| match e {
            ApsError::Gateway {
                stage,
                attempts,
                message,
            } => ApsError::Gateway {
                stage,
                attempts,
                message: format!("example {}: {message}", example.id),
            },
            other => other,
        })?;
        let predicted = canonical_answer(&raw, example.answer_type);
        records.push(FitnessRecord {
            example_id: example.id.clone(),
            prompt_id: prompt.id.clone(),
            raw_output: raw,
            fitness: fitness(&predicted, &example.gold_answer),
        });
    }
    let scores: Vec<f64> = records.iter().map(|r| r.fitness).collect();
    let lambda = decision_threshold(&scores)?;
    let partition = partition_from_records(&example.id, &records, lambda);
    Ok((partition, records))
}

/// The pure split rule, reusable when recomputing from stored records.
pub fn partition_from_records(
    example_id: &str,
    records: &[FitnessRecord],
    lambda: f64,
) -> PartitionedPrompts {
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for record in records {
        if record.fitness >= lambda {
            good.push(record.prompt_id.clone());
        } else {
            bad.push(record.prompt_id.clone());
        }
    }
    PartitionedPrompts {
        example_id: example_id.to_string(),
        lambda,
        good,
        bad,
    }
}

/// Everything the synthesis stage produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub tuples: Vec<PreferenceTuple>,
    pub fitness: Vec<FitnessRecord>,
    pub partitions: Vec<PartitionedPrompts>,
    /// Examples whose partition had an empty side and contributed no tuples.
    pub degenerate_examples: Vec<String>,
    /// Number of representative examples actually processed.
    pub processed_examples: usize,
}

/// Build the preference corpus over every cluster's m nearest
/// representatives. Tuples are emitted in (cluster, example rank,
/// good id, bad id) order.
pub fn build_preference_dataset(
    train: &ExampleIndex,
    cluster_model: &ClusterModel,
    db: &PromptDatabase,
    gateway: &dyn LlmGateway,
    config: &PipelineConfig,
) -> Result<SynthesisResult> {
    if db.is_empty() {
        return Err(ApsError::Precondition("prompt database is empty".into()));
    }
    let mut result = SynthesisResult {
        tuples: Vec::new(),
        fitness: Vec::new(),
        partitions: Vec::new(),
        degenerate_examples: Vec::new(),
        processed_examples: 0,
    };

    for cluster in 0..cluster_model.c {
        let representative_ids = nearest_to_centroid(cluster_model, cluster, config.m)?;
        for example_id in representative_ids {
            let example = train.get(&example_id).ok_or_else(|| {
                ApsError::Train(format!("cluster model references unknown example {example_id}"))
            })?;
            let prompts: Vec<&Prompt> = match config.pairs {
                PairsMode::FullDb => db.prompts.iter().collect(),
                PairsMode::WithinCluster => db
                    .prompts
                    .iter()
                    .filter(|p| p.origin_cluster == Some(cluster) || p.origin_cluster.is_none())
                    .collect(),
            };
            if prompts.is_empty() {
                result.degenerate_examples.push(example_id.clone());
                continue;
            }
            let (partition, records) = partition_prompts(example, &prompts, gateway, config)?;
            result.processed_examples += 1;

            if partition.is_degenerate() {
                log::warn!(
                    "example {} produced a degenerate partition (|good|={}, |bad|={}); no tuples",
                    example_id,
                    partition.good.len(),
                    partition.bad.len()
                );
                result.degenerate_examples.push(example_id.clone());
            } else {
                let fitness_of = |prompt_id: &str| {
                    records
                        .iter()
                        .find(|r| r.prompt_id == prompt_id)
                        .map(|r| r.fitness)
                        .unwrap_or(0.0)
                };
                for good_id in &partition.good {
                    for bad_id in &partition.bad {
                        result.tuples.push(PreferenceTuple {
                            example_id: example_id.clone(),
                            good_prompt_id: good_id.clone(),
                            bad_prompt_id: bad_id.clone(),
                            good_fitness: fitness_of(good_id),
                            bad_fitness: fitness_of(bad_id),
                            lambda: partition.lambda,
                        });
                    }
                }
            }
            result.fitness.extend(records);
            result.partitions.push(partition);
        }
    }
    Ok(result)
}

// --- artifacts ---------------------------------------------------------------

/// The preference tuples as a stored artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub pairs_mode: PairsMode,
    pub tuples: Vec<PreferenceTuple>,
    pub fingerprint: String,
    pub parent_fingerprint: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    pairs_mode: PairsMode,
}

impl Artifact for PreferenceDataset {
    const KIND: &'static str = "preference-dataset";
    const VERSION: u32 = 1;

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn parent(&self) -> Option<&str> {
        self.parent_fingerprint.as_deref()
    }

    fn record_lines(&self) -> Result<Vec<String>> {
        use crate::domain::artifact::to_record;
        let mut lines = Vec::with_capacity(1 + self.tuples.len());
        lines.push(to_record(&DatasetMeta {
            pairs_mode: self.pairs_mode,
        })?);
        for tuple in &self.tuples {
            lines.push(to_record(tuple)?);
        }
        Ok(lines)
    }

    fn from_parts(header: &ArtifactHeader, records: &[&str]) -> Result<Self> {
        use crate::domain::artifact::parse_record;
        let meta_line = records
            .first()
            .ok_or_else(|| ApsError::StaleArtifact("missing dataset meta record".into()))?;
        let meta: DatasetMeta = parse_record(meta_line, "dataset meta")?;
        let tuples = records[1..]
            .iter()
            .map(|line| parse_record(line, "preference tuple"))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreferenceDataset {
            pairs_mode: meta.pairs_mode,
            tuples,
            fingerprint: header.fingerprint.clone(),
            parent_fingerprint: header.parent.clone(),
        })
    }
}

/// Fitness records and partitions from the synthesis run, stored for
/// audit and for the fixed-prompt baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLog {
    pub records: Vec<FitnessRecord>,
    pub partitions: Vec<PartitionedPrompts>,
    pub fingerprint: String,
    pub parent_fingerprint: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SynthRecord {
    Meta {
        fitness_records: usize,
        partition_records: usize,
    },
    Fitness(FitnessRecord),
    Partition(PartitionedPrompts),
}

impl Artifact for SynthLog {
    const KIND: &'static str = "synth-log";
    const VERSION: u32 = 1;

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn parent(&self) -> Option<&str> {
        self.parent_fingerprint.as_deref()
    }

    fn record_lines(&self) -> Result<Vec<String>> {
        use crate::domain::artifact::to_record;
        let mut lines = Vec::with_capacity(1 + self.records.len() + self.partitions.len());
        lines.push(to_record(&SynthRecord::Meta {
            fitness_records: self.records.len(),
            partition_records: self.partitions.len(),
        })?);
        for record in &self.records {
            lines.push(to_record(&SynthRecord::Fitness(record.clone()))?);
        }
        for partition in &self.partitions {
            lines.push(to_record(&SynthRecord::Partition(partition.clone()))?);
        }
        Ok(lines)
    }

    fn from_parts(header: &ArtifactHeader, record_lines: &[&str]) -> Result<Self> {
        use crate::domain::artifact::parse_record;
        let mut records = Vec::new();
        let mut partitions = Vec::new();
        for line in record_lines {
            match parse_record::<SynthRecord>(line, "synth record")? {
                SynthRecord::Meta { .. } => {}
                SynthRecord::Fitness(r) => records.push(r),
                SynthRecord::Partition(p) => partitions.push(p),
            }
        }
        Ok(SynthLog {
            records,
            partitions,
            fingerprint: header.fingerprint.clone(),
            parent_fingerprint: header.parent.clone(),
        })
    }
}
