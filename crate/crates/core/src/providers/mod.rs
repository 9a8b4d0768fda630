//! Contracts for the external model capabilities the engine depends on:
//! detection/tracking, segment reasoning, attribute description and image
//! similarity.
//!
//! Every provider call is request/response. [`with_retry`] applies the retry
//! budget and [`InflightLimiter`] bounds concurrent calls per provider.
//! [`mock`] holds deterministic scripted implementations keyed by fixture id;
//! [`live`] forwards the same requests to an HTTP endpoint.

pub mod live;
pub mod mock;

use std::fmt;
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FrameRecord, PatrolSession};
use crate::pipeline::{ObjectAwareFrame, SegmentSpan};
use crate::taxonomy::EntityCategory;

pub const PERSONA_PROMPT: &str = include_str!("../../assets/persona_prompt.txt");
const QUESTION_SETS_JSON: &str = include_str!("../../assets/question_sets.json");

/// Fallback answers every option-form question accepts.
pub const OTHER: &str = "other";
pub const UNCLEAR: &str = "unclear";

pub fn is_fallback(value: &str) -> bool {
    value == OTHER || value == UNCLEAR
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider call failed: {0}")]
    Unavailable(String),
    #[error("provider call timed out after {0:?}")]
    Timeout(Duration),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("unresolvable reference {0:?}")]
    Unresolvable(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Unavailable(_) | ProviderError::Timeout(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl Confidence {
    /// 0 for High; lower is more certain.
    pub fn rank(self) -> u8 {
        match self {
            Confidence::High => 0,
            Confidence::Medium => 1,
            Confidence::Low => 2,
        }
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Confidence::High => "High",
            Confidence::Medium => "Medium",
            Confidence::Low => "Low",
        })
    }
}

impl FromStr for Confidence {
    type Err = ProviderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Confidence::High),
            "medium" => Ok(Confidence::Medium),
            "low" => Ok(Confidence::Low),
            _ => Err(ProviderError::ContractViolation(format!(
                "confidence {s:?} is not one of high, medium, low"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams { temperature: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerRequest {
    pub session_id: String,
    pub persona_prompt: String,
    pub taxonomy_digest: String,
    pub segment_span: SegmentSpan,
    pub annotated_frames: Vec<ObjectAwareFrame>,
    pub generation_params: GenerationParams,
}

impl ReasonerRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let span = self.segment_span;
        if let Some(f) = self
            .annotated_frames
            .iter()
            .find(|f| !span.contains(f.frame.t_ms))
        {
            return Err(ProviderError::ContractViolation(format!(
                "frame {} at {} ms lies outside segment [{}, {})",
                f.frame.frame_index, f.frame.t_ms, span.start_ms, span.end_ms
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEventProposal {
    pub label_text: String,
    pub description: String,
    pub rationale: String,
    pub confidence: Confidence,
    pub claimed_span: Option<(i64, i64)>,
}

/// A proposal as a provider emits it; `confidence` is still free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalWire {
    pub label_text: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub rationale: String,
    pub confidence: String,
    #[serde(default)]
    pub start_ms: Option<i64>,
    #[serde(default)]
    pub end_ms: Option<i64>,
}

impl ProposalWire {
    pub fn into_proposal(self) -> Result<RawEventProposal, ProviderError> {
        let confidence = self.confidence.parse()?;
        let claimed_span = match (self.start_ms, self.end_ms) {
            (Some(s), Some(e)) if s < e => Some((s, e)),
            (None, None) => None,
            (s, e) => {
                return Err(ProviderError::ContractViolation(format!(
                    "claimed span {s:?}..{e:?} is not a valid interval"
                )))
            }
        };
        Ok(RawEventProposal {
            label_text: self.label_text,
            description: self.description,
            rationale: self.rationale,
            confidence,
            claimed_span,
        })
    }
}

/// Checks a reasoner response against its request.
pub fn check_proposals(
    req: &ReasonerRequest,
    proposals: &[RawEventProposal],
) -> Result<(), ProviderError> {
    if proposals.len() > req.annotated_frames.len() {
        return Err(ProviderError::ContractViolation(format!(
            "{} proposals for {} sampled frames",
            proposals.len(),
            req.annotated_frames.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerForm {
    Options(Vec<String>),
    YesNo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    /// Noun used when rephrasing as a yes/no check ("shirt").
    pub subject: String,
    pub prompt: String,
    pub form: AnswerForm,
}

pub const VERIFY_PREFIX: &str = "verify:";

impl Question {
    /// Binary re-check of a previously given answer.
    pub fn verification(&self, value: &str) -> Question {
        let prompt = match self.form {
            AnswerForm::Options(_) => format!("Is the {} {}?", self.subject, value),
            AnswerForm::YesNo => format!("{} Is the answer \"{}\" correct?", self.prompt, value),
        };
        Question {
            id: format!("{VERIFY_PREFIX}{}", self.id),
            subject: self.subject.clone(),
            prompt,
            form: AnswerForm::YesNo,
        }
    }

    pub fn accepts(&self, answer: &str) -> bool {
        match &self.form {
            AnswerForm::Options(opts) => is_fallback(answer) || opts.iter().any(|o| o == answer),
            AnswerForm::YesNo => answer == "yes" || answer == "no",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeAnswer {
    pub question_id: String,
    pub answer: String,
}

/// One answer per question, in order, each from the declared option set.
pub fn check_answers(questions: &[Question], answers: &[AttributeAnswer]) -> Result<(), ProviderError> {
    if answers.len() != questions.len() {
        return Err(ProviderError::ContractViolation(format!(
            "{} answers for {} questions",
            answers.len(),
            questions.len()
        )));
    }
    for (q, a) in questions.iter().zip(answers) {
        if a.question_id != q.id {
            return Err(ProviderError::ContractViolation(format!(
                "answer for {:?} where {:?} was expected",
                a.question_id, q.id
            )));
        }
        if !q.accepts(&a.answer) {
            return Err(ProviderError::ContractViolation(format!(
                "answer {:?} not an option of {:?}",
                a.answer, q.id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct QuestionWire {
    id: String,
    subject: String,
    prompt: String,
    #[serde(default)]
    options: Vec<String>,
    #[serde(default)]
    yes_no: bool,
}

impl From<QuestionWire> for Question {
    fn from(w: QuestionWire) -> Question {
        Question {
            id: w.id,
            subject: w.subject,
            prompt: w.prompt,
            form: if w.yes_no {
                AnswerForm::YesNo
            } else {
                AnswerForm::Options(w.options)
            },
        }
    }
}

#[derive(Debug, Deserialize)]
struct QuestionSetsWire {
    version: String,
    person: Vec<QuestionWire>,
    vehicle: Vec<QuestionWire>,
}

/// Versioned extraction question sets per entity class.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSets {
    pub version: String,
    pub person: Vec<Question>,
    pub vehicle: Vec<Question>,
}

impl QuestionSets {
    pub fn bundled() -> QuestionSets {
        QuestionSets::from_json_str(QUESTION_SETS_JSON).expect("bundled question sets are valid")
    }

    pub fn from_json_str(text: &str) -> Result<QuestionSets, String> {
        let w: QuestionSetsWire = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let sets = QuestionSets {
            version: w.version,
            person: w.person.into_iter().map(Question::from).collect(),
            vehicle: w.vehicle.into_iter().map(Question::from).collect(),
        };
        for q in sets.person.iter().chain(&sets.vehicle) {
            if let AnswerForm::Options(opts) = &q.form {
                if opts.is_empty() {
                    return Err(format!("question {:?} declares no options", q.id));
                }
                if opts.iter().any(|o| is_fallback(o)) {
                    return Err(format!("question {:?} lists a fallback as an option", q.id));
                }
            }
        }
        Ok(sets)
    }

    pub fn for_class(&self, class: EntityCategory) -> &[Question] {
        match class {
            EntityCategory::Person => &self.person,
            EntityCategory::Vehicle => &self.vehicle,
            EntityCategory::Other => &[],
        }
    }
}

pub trait Reasoner: Send + Sync {
    fn reason_segment(&self, req: &ReasonerRequest) -> Result<Vec<RawEventProposal>, ProviderError>;
}

pub trait AttributeDescriber: Send + Sync {
    fn describe_attributes(
        &self,
        crop: &str,
        entity_class: EntityCategory,
        questions: &[Question],
    ) -> Result<Vec<AttributeAnswer>, ProviderError>;
}

pub trait SimilarityScorer: Send + Sync {
    /// Similarity of two crops in [0, 1].
    fn similarity(&self, a: &str, b: &str) -> Result<f64, ProviderError>;
}

pub trait DetectorTracker: Send + Sync {
    fn detect_and_track(&self, session: &PatrolSession) -> Result<Vec<FrameRecord>, ProviderError>;
}

/// Retry budget and per-call timeout applied to every provider call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallPolicy {
    pub retries: u32,
    pub timeout: Duration,
}

impl Default for CallPolicy {
    fn default() -> Self {
        CallPolicy {
            retries: 2,
            timeout: Duration::from_secs(60),
        }
    }
}

/// Runs `call`, retrying retryable failures up to `policy.retries` times.
pub fn with_retry<T>(
    policy: &CallPolicy,
    mut call: impl FnMut() -> Result<T, ProviderError>,
) -> Result<T, ProviderError> {
    let mut attempt = 0;
    loop {
        match call() {
            Err(e) if e.is_retryable() && attempt < policy.retries => attempt += 1,
            other => return other,
        }
    }
}

/// Counting semaphore bounding in-flight calls to one provider.
#[derive(Debug)]
pub struct InflightLimiter {
    max: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(max: usize) -> InflightLimiter {
        InflightLimiter {
            max: max.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_use.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_use.lock().unwrap()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_use.lock().unwrap();
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Mock,
    Live,
}

impl FromStr for ProviderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(ProviderMode::Mock),
            "live" => Ok(ProviderMode::Live),
            _ => Err(format!("unknown provider mode {s:?} (expected mock or live)")),
        }
    }
}
