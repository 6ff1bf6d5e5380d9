//! Prompt database construction: build a meta-prompt from cluster
//! demonstrations, ask the generator LLM for candidate prompts, parse
//! and deduplicate, and assemble the database.

use once_cell::sync::Lazy;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::cluster::ClusterModel;
use crate::domain::{PipelineConfig, Prompt, PromptDatabase, QAExample};
use crate::error::{ApsError, Result};
use crate::gateway::{ChatMessage, ChatRequest, LlmGateway, Role, Stage};
use crate::hashing::derive_seed;

/// Template wording is part of the artifact contract: any change must
/// bump this version, which feeds the database fingerprint and so
/// invalidates downstream artifacts.
pub const META_TEMPLATE_VERSION: &str = "meta-v1";

const META_HEADER: &str =
    "You are designing instruction prompts for a model that must solve problems \
     like the examples below.";

const META_REQUEST: &str =
    "Generate {n} distinct instruction prompts, one per line as a numbered list. \
     Each prompt should tell the model how to approach problems of this kind. \
     Reply with only the numbered list.";

/// Extra completions issued when a completion yields fewer than the
/// requested number of distinct prompts.
const GENERATION_RETRY_CAP: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub question: String,
    pub context: String,
    pub answer: String,
}

/// Rendered request for candidate prompts, built from one group's
/// demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPrompt {
    pub cluster: Option<usize>,
    pub demonstrations: Vec<Demonstration>,
    pub requested: usize,
}

impl MetaPrompt {
    pub fn render(&self) -> String {
        let mut out = String::from(META_HEADER);
        out.push_str("\n\n");
        for demo in &self.demonstrations {
            out.push_str(&format!("Q: {}\n", demo.question));
            out.push_str(&format!("C: {}\n", demo.context));
            out.push_str(&format!("A: {}\n\n", demo.answer));
        }
        out.push_str(&META_REQUEST.replace("{n}", &self.requested.to_string()));
        out
    }
}

/// Sample demonstrations without replacement and render the template.
/// `demo_count` saturates at the group size.
pub fn build_meta_prompt(
    members: &[&QAExample],
    demo_count: usize,
    requested: usize,
    seed: u64,
    cluster: Option<usize>,
) -> Result<MetaPrompt> {
    if members.is_empty() {
        return Err(ApsError::Precondition(
            "cannot build a meta-prompt from an empty group".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..members.len()).collect();
    indices.shuffle(&mut rng);
    let demonstrations = indices
        .into_iter()
        .take(demo_count.min(members.len()))
        .map(|i| Demonstration {
            question: members[i].question.clone(),
            context: members[i].context.clone(),
            answer: members[i].gold_answer.clone(),
        })
        .collect();
    Ok(MetaPrompt {
        cluster,
        demonstrations,
        requested,
    })
}

static NUMBERED_ITEM: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*\d+[.)]\s*(.+)$").unwrap());

/// Parse candidate prompt texts out of a completion: numbered-list
/// items when any line matches, otherwise every non-empty line.
pub fn parse_prompt_candidates(completion: &str) -> Vec<String> {
    let numbered: Vec<String> = completion
        .lines()
        .filter_map(|line| {
            NUMBERED_ITEM
                .captures(line)
                .map(|caps| caps.get(1).unwrap().as_str().trim().to_string())
        })
        .filter(|text| !text.is_empty())
        .collect();
    if !numbered.is_empty() {
        return numbered;
    }
    completion
        .lines()
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .map(str::to_string)
        .collect()
}

/// Key under which two prompt texts count as duplicates: trimmed,
/// internal whitespace runs collapsed, case-folded.
pub fn normalize_prompt_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Drop prompts equal under normalization; first occurrence wins and
/// order is otherwise preserved.
pub fn dedup(prompts: Vec<Prompt>) -> Vec<Prompt> {
    let mut seen = std::collections::HashSet::new();
    prompts
        .into_iter()
        .filter(|p| seen.insert(normalize_prompt_text(&p.text)))
        .collect()
}

/// Ask the generator for up to `n_p` distinct prompt texts, issuing
/// additional completions (up to a fixed cap) while short.
pub fn generate_prompts(
    gateway: &dyn LlmGateway,
    meta: &MetaPrompt,
    n_p: usize,
    config: &PipelineConfig,
) -> Result<Vec<String>> {
    let request = ChatRequest::new(
        Stage::Forge,
        vec![ChatMessage {
            role: Role::User,
            content: meta.render(),
        }],
        config,
    );
    let cluster_name = match meta.cluster {
        Some(g) => g.to_string(),
        None => "none".to_string(),
    };

    let mut seen = std::collections::HashSet::new();
    let mut texts: Vec<String> = Vec::new();
    for _attempt in 0..=GENERATION_RETRY_CAP {
        let completion = gateway.complete(&request)?;
        for candidate in parse_prompt_candidates(&completion) {
            let key = normalize_prompt_text(&candidate);
            if key.is_empty() || seen.contains(&key) {
                continue;
            }
            seen.insert(key);
            texts.push(candidate);
            if texts.len() == n_p {
                return Ok(texts);
            }
        }
        if texts.len() >= n_p {
            break;
        }
    }
    if texts.is_empty() {
        return Err(ApsError::Forge {
            cluster: cluster_name,
            message: "no parsable prompts after retries".into(),
        });
    }
    texts.truncate(n_p);
    Ok(texts)
}

/// Run prompt generation over every cluster (or over the whole train
/// split as one group when clustering is disabled), deduplicate across
/// the union, and assemble the database.
pub fn build_database(
    train: &[QAExample],
    cluster_model: &ClusterModel,
    gateway: &dyn LlmGateway,
    config: &PipelineConfig,
    fingerprint: String,
    parent_fingerprint: Option<String>,
) -> Result<PromptDatabase> {
    let by_id: std::collections::HashMap<&str, &QAExample> =
        train.iter().map(|e| (e.id.as_str(), e)).collect();

    let mut raw: Vec<Prompt> = Vec::new();
    if config.clustering {
        for cluster in 0..cluster_model.c {
            let members: Vec<&QAExample> = cluster_model
                .members(cluster)
                .into_iter()
                .filter_map(|id| by_id.get(id).copied())
                .collect();
            if members.is_empty() {
                return Err(ApsError::Forge {
                    cluster: cluster.to_string(),
                    message: "cluster has no members".into(),
                });
            }
            let meta = build_meta_prompt(
                &members,
                config.demo_count,
                config.n_p,
                derive_seed(config.seed, "forge-demos", cluster as u64),
                Some(cluster),
            )?;
            let texts = generate_prompts(gateway, &meta, config.n_p, config)?;
            raw.extend(texts.into_iter().map(|text| Prompt {
                id: String::new(),
                text,
                origin_cluster: Some(cluster),
            }));
        }
    } else {
        // No-clustering mode: the whole split is one group; the same
        // total budget of c * n_p prompts is drawn in c rounds with
        // fresh demonstration samples.
        let members: Vec<&QAExample> = train.iter().collect();
        for round in 0..config.c {
            let meta = build_meta_prompt(
                &members,
                config.demo_count,
                config.n_p,
                derive_seed(config.seed, "forge-demos-unclustered", round as u64),
                None,
            )?;
            let texts = generate_prompts(gateway, &meta, config.n_p, config)?;
            raw.extend(texts.into_iter().map(|text| Prompt {
                id: String::new(),
                text,
                origin_cluster: None,
            }));
        }
    }

    let mut prompts = dedup(raw);
    for (i, prompt) in prompts.iter_mut().enumerate() {
        prompt.id = format!("p{i:03}");
    }
    let capacity = config.c * config.n_p;
    if prompts.len() > capacity {
        return Err(ApsError::Forge {
            cluster: "all".into(),
            message: format!(
                "{} prompts exceed the c * n_p capacity of {capacity}",
                prompts.len()
            ),
        });
    }
    Ok(PromptDatabase {
        prompts,
        config_fingerprint: fingerprint,
        parent_fingerprint,
    })
}
