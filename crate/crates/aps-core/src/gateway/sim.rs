//! Deterministic offline simulator.
//!
//! The simulator stands in for a live LLM so the whole pipeline can be
//! verified against known ground truth. Its world assigns every
//! question a topic and recognizes prompts by topic keyword; a solve or
//! synthesize request is answered correctly if and only if the prompt's
//! topic matches the question's topic, otherwise with a fixed
//! perturbation of the gold answer (numeric +1, or the next option
//! letter). Prompt-generation requests return prompts tagged with the
//! majority topic of the demonstrations shown. Every response is a pure
//! function of (world, request).

use std::sync::Arc;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CallLedger, ChatRequest, LedgerSnapshot, LlmGateway, Stage};
use crate::domain::{format_number, AnswerType, QAExample, Split};
use crate::error::{ApsError, Result};

const KEYWORD_POOL: &[(&str, &str)] = &[
    ("algebra", "equations"),
    ("geometry", "triangles"),
    ("fractions", "slices"),
    ("percentages", "discounts"),
    ("ratios", "mixtures"),
    ("probability", "draws"),
    ("sequences", "terms"),
    ("interest", "deposits"),
    ("speed", "trips"),
    ("volume", "tanks"),
    ("angles", "corners"),
    ("primes", "factors"),
];

const SIM_PROMPT_TEMPLATES: &[&str] = &[
    "Work through this {kw} problem step by step and state the final number clearly.",
    "List the quantities in the {kw} setup, combine them carefully, and end with the answer.",
    "Treat the task as a {kw} exercise: write out each step, then give the result.",
    "Before answering, check the {kw} details twice and finish with a single number.",
    "Break the {kw} question into parts, solve each part, and report the total.",
];

static REQUESTED_COUNT: Lazy<Regex> = Lazy::new(|| Regex::new(r"Generate (\d+)").unwrap());

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimQuestion {
    pub example_id: String,
    pub text: String,
    pub topic: usize,
    pub gold: String,
    pub answer_type: AnswerType,
}

/// Ground truth for the simulator: topics for questions and prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub topic_count: usize,
    pub keywords: Vec<String>,
    pub questions: Vec<SimQuestion>,
    pub sim_seed: u64,
}

impl SimWorld {
    pub fn new(
        topic_count: usize,
        keywords: Vec<String>,
        questions: Vec<SimQuestion>,
        sim_seed: u64,
    ) -> Result<Self> {
        if keywords.len() != topic_count {
            return Err(ApsError::Config(format!(
                "{} keywords for {} topics",
                keywords.len(),
                topic_count
            )));
        }
        if questions.iter().any(|q| q.topic >= topic_count) {
            return Err(ApsError::Config("question topic out of range".into()));
        }
        Ok(SimWorld {
            topic_count,
            keywords,
            questions,
            sim_seed,
        })
    }

    pub fn question_topic(&self, example_id: &str) -> Option<usize> {
        self.questions
            .iter()
            .find(|q| q.example_id == example_id)
            .map(|q| q.topic)
    }

    /// Keyword-based prompt classification: the lowest topic index whose
    /// keyword occurs in the prompt, or None for a topicless prompt.
    pub fn prompt_topic(&self, prompt: &str) -> Option<usize> {
        let lower = prompt.to_lowercase();
        self.keywords.iter().position(|kw| lower.contains(kw.as_str()))
    }

    /// The gold answer perturbed by a fixed rule; never equal to gold.
    pub fn wrong_answer(gold: &str, answer_type: AnswerType) -> String {
        match answer_type {
            AnswerType::FreeFormNumeric => match gold.parse::<f64>() {
                Ok(v) => format_number(v + 1.0),
                Err(_) => format!("{gold}1"),
            },
            AnswerType::MultipleChoice => {
                let letter = gold.as_bytes().first().copied().unwrap_or(b'A');
                let next = if letter >= b'E' { b'A' } else { letter + 1 };
                (next as char).to_string()
            }
        }
    }

    fn find_question(&self, text: &str) -> Option<&SimQuestion> {
        self.questions
            .iter()
            .filter(|q| text.contains(q.text.as_str()))
            .max_by_key(|q| q.text.len())
    }
}

/// Pure simulator completion.
pub fn sim_complete(world: &SimWorld, request: &ChatRequest) -> Result<String> {
    request.validate()?;
    match request.stage {
        Stage::Forge => forge_response(world, request),
        Stage::Synthesize | Stage::Solve => answer_response(world, request),
    }
}

fn forge_response(world: &SimWorld, request: &ChatRequest) -> Result<String> {
    let text = request
        .user_text()
        .ok_or_else(|| ApsError::Harness("prompt-generation request has no user message".into()))?;
    let requested: usize = REQUESTED_COUNT
        .captures(text)
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse().ok())
        .ok_or_else(|| ApsError::Harness("cannot find requested prompt count".into()))?;

    let mut counts = vec![0usize; world.topic_count];
    for q in &world.questions {
        if text.contains(q.text.as_str()) {
            counts[q.topic] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(ApsError::Harness(
            "no known demonstrations found in prompt-generation request".into(),
        ));
    }
    let majority = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(topic, _)| topic)
        .unwrap();
    let keyword = &world.keywords[majority];

    let mut lines = Vec::with_capacity(requested);
    for i in 0..requested {
        let template = SIM_PROMPT_TEMPLATES[i % SIM_PROMPT_TEMPLATES.len()];
        let mut prompt = template.replace("{kw}", keyword);
        let round = i / SIM_PROMPT_TEMPLATES.len();
        if round > 0 {
            prompt.push_str(&format!(" (variant {})", round + 1));
        }
        lines.push(format!("{}. {}", i + 1, prompt));
    }
    Ok(lines.join("\n"))
}

fn answer_response(world: &SimWorld, request: &ChatRequest) -> Result<String> {
    let user = request
        .user_text()
        .ok_or_else(|| ApsError::Harness("solve request has no user message".into()))?;
    let question = world.find_question(user).ok_or_else(|| {
        ApsError::Harness("solve request does not contain a known question".into())
    })?;
    let prompt_topic = request.system_text().and_then(|p| world.prompt_topic(p));
    let correct = prompt_topic == Some(question.topic);
    let answer = if correct {
        question.gold.clone()
    } else {
        SimWorld::wrong_answer(&question.gold, question.answer_type)
    };
    let line = match question.answer_type {
        AnswerType::FreeFormNumeric => format!("The final answer is {answer}."),
        AnswerType::MultipleChoice => format!("The answer is {answer})."),
    };
    Ok(format!("Let's work through it carefully.\n{line}"))
}

/// Gateway wrapper around a simulated world.
pub struct SimGateway {
    world: SimWorld,
    ledger: Arc<CallLedger>,
}

impl SimGateway {
    pub fn new(world: SimWorld) -> Self {
        SimGateway {
            world,
            ledger: Arc::new(CallLedger::default()),
        }
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }
}

impl LlmGateway for SimGateway {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let response = sim_complete(&self.world, request)?;
        self.ledger.record(request.stage);
        Ok(response)
    }

    fn ledger(&self) -> LedgerSnapshot {
        self.ledger.snapshot()
    }

    fn model_id(&self) -> String {
        format!("sim/{}t/{}", self.world.topic_count, self.world.sim_seed)
    }
}

/// Synthetic world parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub topics: usize,
    pub train: usize,
    pub test: usize,
    pub sim_seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            topics: 4,
            train: 200,
            test: 80,
            sim_seed: 7,
        }
    }
}

/// Build a topic-structured corpus and its matching world. Questions
/// repeat their topic keyword several times so embedding distances
/// separate topics; the numeric payload varies per question.
pub fn build_sim_world(settings: &SimSettings) -> Result<(Vec<QAExample>, Vec<QAExample>, SimWorld)> {
    if settings.topics < 1 || settings.topics > KEYWORD_POOL.len() {
        return Err(ApsError::Config(format!(
            "topics must lie in 1..={}",
            KEYWORD_POOL.len()
        )));
    }
    if settings.train < settings.topics {
        return Err(ApsError::Config(
            "train size must be at least the topic count".into(),
        ));
    }
    let rotation = (settings.sim_seed as usize) % KEYWORD_POOL.len();
    let pool: Vec<(&str, &str)> = (0..settings.topics)
        .map(|t| KEYWORD_POOL[(t + rotation) % KEYWORD_POOL.len()])
        .collect();

    let per_topic_train = settings.train.div_ceil(settings.topics);
    let mut train = Vec::with_capacity(settings.train);
    let mut test = Vec::with_capacity(settings.test);
    let mut questions = Vec::with_capacity(settings.train + settings.test);

    let mut emit = |index: usize, split: Split, variant_offset: usize| -> Result<()> {
        let topic = index % settings.topics;
        let variant = index / settings.topics + variant_offset;
        let (kw, noun) = pool[topic];
        let a = 2 + variant % 9;
        let b = 3 + (variant / 9) % 9;
        let gold = (a + b).to_string();
        let split_tag = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let id = format!("sim-{split_tag}-{index:04}");
        let text = format!(
            "In {kw} practice today, the {kw} worksheet lists {a} {noun}, and the {kw} review \
             adds {b} more {noun}. After the {kw} session, how many {noun} are counted?"
        );
        let example = QAExample::new(
            id.clone(),
            text.clone(),
            "",
            "",
            gold.clone(),
            AnswerType::FreeFormNumeric,
            split,
        )?;
        questions.push(SimQuestion {
            example_id: id,
            text,
            topic,
            gold,
            answer_type: AnswerType::FreeFormNumeric,
        });
        match split {
            Split::Train => train.push(example),
            Split::Test => test.push(example),
        }
        Ok(())
    };

    for i in 0..settings.train {
        emit(i, Split::Train, 0)?;
    }
    for i in 0..settings.test {
        emit(i, Split::Test, per_topic_train)?;
    }

    let keywords = pool.iter().map(|(kw, _)| kw.to_string()).collect();
    let world = SimWorld::new(settings.topics, keywords, questions, settings.sim_seed)?;
    Ok((train, test, world))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{canonical_answer, CanonicalAnswer, PipelineConfig};
    use crate::gateway::answer_request;

    fn small_world() -> (Vec<QAExample>, Vec<QAExample>, SimWorld) {
        build_sim_world(&SimSettings {
            topics: 3,
            train: 12,
            test: 6,
            sim_seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn matching_topic_recovers_gold() {
        let (train, _, world) = small_world();
        let config = PipelineConfig::default();
        let example = &train[0];
        let topic = world.question_topic(&example.id).unwrap();
        let prompt = format!("Use {} reasoning.", world.keywords[topic]);
        let req = answer_request(Stage::Solve, Some(&prompt), example, &config);
        let out = sim_complete(&world, &req).unwrap();
        assert_eq!(
            canonical_answer(&out, AnswerType::FreeFormNumeric),
            CanonicalAnswer::Answer(example.gold_answer.clone())
        );
    }

    #[test]
    fn mismatched_topic_perturbs_numeric_gold() {
        let (train, _, world) = small_world();
        let config = PipelineConfig::default();
        let example = &train[0];
        let topic = world.question_topic(&example.id).unwrap();
        let other = (topic + 1) % world.topic_count;
        let prompt = format!("Use {} reasoning.", world.keywords[other]);
        let req = answer_request(Stage::Synthesize, Some(&prompt), example, &config);
        let out = sim_complete(&world, &req).unwrap();
        let gold: f64 = example.gold_answer.parse().unwrap();
        assert_eq!(
            canonical_answer(&out, AnswerType::FreeFormNumeric),
            CanonicalAnswer::Answer(format_number(gold + 1.0))
        );
    }

    #[test]
    fn responses_are_byte_identical() {
        let (train, _, world) = small_world();
        let config = PipelineConfig::default();
        let req = answer_request(Stage::Solve, Some("no keyword here"), &train[3], &config);
        let a = sim_complete(&world, &req).unwrap();
        let b = sim_complete(&world, &req).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn answer_soundness_is_exhaustive_on_a_small_world() {
        // For every (example, prompt-topic) pair: correct iff match.
        let (train, test, world) = small_world();
        let config = PipelineConfig::default();
        for example in train.iter().chain(&test) {
            let q_topic = world.question_topic(&example.id).unwrap();
            for p_topic in 0..world.topic_count {
                let prompt = format!("Solve the {} question.", world.keywords[p_topic]);
                let req = answer_request(Stage::Solve, Some(&prompt), example, &config);
                let out = sim_complete(&world, &req).unwrap();
                let answer = canonical_answer(&out, AnswerType::FreeFormNumeric);
                let is_gold = answer == CanonicalAnswer::Answer(example.gold_answer.clone());
                assert_eq!(is_gold, p_topic == q_topic, "example {}", example.id);
            }
            // Topicless prompt is always wrong.
            let req = answer_request(Stage::Solve, None, example, &config);
            let out = sim_complete(&world, &req).unwrap();
            assert_ne!(
                canonical_answer(&out, AnswerType::FreeFormNumeric),
                CanonicalAnswer::Answer(example.gold_answer.clone())
            );
        }
    }

    #[test]
    fn wrong_answer_rules() {
        assert_eq!(
            SimWorld::wrong_answer("42", AnswerType::FreeFormNumeric),
            "43"
        );
        assert_eq!(
            SimWorld::wrong_answer("4.5", AnswerType::FreeFormNumeric),
            "5.5"
        );
        assert_eq!(SimWorld::wrong_answer("B", AnswerType::MultipleChoice), "C");
        assert_eq!(SimWorld::wrong_answer("E", AnswerType::MultipleChoice), "A");
    }

    #[test]
    fn forge_emits_requested_count_with_majority_keyword() {
        let (train, _, world) = small_world();
        let config = PipelineConfig::default();
        // Demos all from topic 0 (round-robin: indices 0, 3, 6, ...).
        let demos: Vec<&QAExample> = train.iter().step_by(3).take(4).collect();
        let mut text = String::from("Here are examples:\n");
        for d in &demos {
            text.push_str(&format!("Q: {}\nA: {}\n\n", d.question, d.gold_answer));
        }
        text.push_str("Generate 3 distinct instruction prompts, one per line.");
        let req = ChatRequest::new(
            Stage::Forge,
            vec![crate::gateway::ChatMessage {
                role: crate::gateway::Role::User,
                content: text,
            }],
            &config,
        );
        let out = sim_complete(&world, &req).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 3);
        for line in &lines {
            assert!(
                line.to_lowercase().contains(&world.keywords[0]),
                "line {line:?} lacks keyword {}",
                world.keywords[0]
            );
        }
    }

    #[test]
    fn unknown_question_is_a_harness_error() {
        let (_, _, world) = small_world();
        let config = PipelineConfig::default();
        let fake = QAExample::new(
            "fake",
            "a question the world never saw",
            "",
            "",
            "1",
            AnswerType::FreeFormNumeric,
            Split::Test,
        )
        .unwrap();
        let req = answer_request(Stage::Solve, Some("x"), &fake, &config);
        assert!(matches!(
            sim_complete(&world, &req),
            Err(ApsError::Harness(_))
        ));
    }

    #[test]
    fn gateway_wrapper_counts_stages() {
        let (train, _, world) = small_world();
        let config = PipelineConfig::default();
        let gw = SimGateway::new(world);
        let req = answer_request(Stage::Solve, Some("x"), &train[0], &config);
        gw.complete(&req).unwrap();
        gw.complete(&req).unwrap();
        assert_eq!(gw.ledger().solve, 2);
        assert_eq!(gw.ledger().total(), 2);
    }

    #[test]
    fn corpus_is_balanced_and_distinct_across_splits() {
        let (train, test, world) = build_sim_world(&SimSettings::default()).unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 80);
        assert_eq!(world.questions.len(), 280);
        for t in 0..4 {
            let n = train
                .iter()
                .filter(|e| world.question_topic(&e.id) == Some(t))
                .count();
            assert_eq!(n, 50);
        }
        // Same-topic train and test questions never share text.
        for te in &test {
            assert!(!train.iter().any(|tr| tr.question == te.question));
        }
    }
}
