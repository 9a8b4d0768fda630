//! HTTP adapter forwarding provider calls to an external model service.
//!
//! Endpoint and credential come from `MRVS_PROVIDER_ENDPOINT` and
//! `MRVS_PROVIDER_KEY`. Routes are `POST {endpoint}/reason`, `/describe`,
//! `/similarity` and `/track`, each taking and returning JSON.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    check_answers, AttributeAnswer, AttributeDescriber, DetectorTracker, ProposalWire,
    ProviderError, Question, RawEventProposal, Reasoner, ReasonerRequest, SimilarityScorer,
};
use crate::ingest::{validate_frames, FrameRecord, PatrolSession};
use crate::taxonomy::EntityCategory;

pub const ENDPOINT_VAR: &str = "MRVS_PROVIDER_ENDPOINT";
pub const KEY_VAR: &str = "MRVS_PROVIDER_KEY";

pub struct HttpProvider {
    endpoint: String,
    key: Option<String>,
    timeout: Duration,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct DescribeBody<'a> {
    crop: &'a str,
    entity_class: EntityCategory,
    questions: &'a [Question],
}

#[derive(Serialize)]
struct SimilarityBody<'a> {
    a: &'a str,
    b: &'a str,
}

#[derive(Deserialize)]
struct SimilarityReply {
    similarity: f64,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, timeout: Duration) -> HttpProvider {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        HttpProvider {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            key,
            timeout,
            agent,
        }
    }

    pub fn from_env(timeout: Duration) -> Result<HttpProvider, ProviderError> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| ProviderError::Unavailable(format!("{ENDPOINT_VAR} is not set")))?;
        Ok(HttpProvider::new(endpoint, std::env::var(KEY_VAR).ok(), timeout))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, route: &str, body: &B) -> Result<T, ProviderError> {
        let url = format!("{}/{route}", self.endpoint);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| self.map_err(e))?;
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| ProviderError::ContractViolation(format!("{route}: {e}")))
    }

    fn map_err(&self, e: ureq::Error) -> ProviderError {
        match e {
            ureq::Error::Timeout(_) => ProviderError::Timeout(self.timeout),
            ureq::Error::StatusCode(code) if (400..500).contains(&code) && code != 429 => {
                ProviderError::ContractViolation(format!("endpoint rejected request with {code}"))
            }
            other => ProviderError::Unavailable(other.to_string()),
        }
    }
}

impl Reasoner for HttpProvider {
    fn reason_segment(&self, req: &ReasonerRequest) -> Result<Vec<RawEventProposal>, ProviderError> {
        req.validate()?;
        let wire: Vec<ProposalWire> = self.post("reason", req)?;
        wire.into_iter().map(ProposalWire::into_proposal).collect()
    }
}

impl AttributeDescriber for HttpProvider {
    fn describe_attributes(
        &self,
        crop: &str,
        entity_class: EntityCategory,
        questions: &[Question],
    ) -> Result<Vec<AttributeAnswer>, ProviderError> {
        let answers: Vec<AttributeAnswer> = self.post(
            "describe",
            &DescribeBody {
                crop,
                entity_class,
                questions,
            },
        )?;
        check_answers(questions, &answers)?;
        Ok(answers)
    }
}

impl SimilarityScorer for HttpProvider {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, ProviderError> {
        // Canonical argument order keeps the score symmetric.
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let reply: SimilarityReply = self.post("similarity", &SimilarityBody { a, b })?;
        if !(0.0..=1.0).contains(&reply.similarity) {
            return Err(ProviderError::ContractViolation(format!(
                "similarity {} outside [0, 1]",
                reply.similarity
            )));
        }
        Ok(reply.similarity)
    }
}

impl DetectorTracker for HttpProvider {
    fn detect_and_track(&self, session: &PatrolSession) -> Result<Vec<FrameRecord>, ProviderError> {
        let frames: Vec<FrameRecord> = self.post("track", session)?;
        validate_frames(&frames).map_err(|e| ProviderError::ContractViolation(e.to_string()))?;
        Ok(frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_endpoint_is_retryable() {
        // Port 9 on localhost is discard; nothing should be listening there.
        let p = HttpProvider::new("http://127.0.0.1:9", None, Duration::from_millis(300));
        let err = p.similarity("a", "b").unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }
}
