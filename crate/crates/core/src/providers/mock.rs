//! Scripted providers for offline runs and tests.
//!
//! Each mock is a pure function of its fixture table and the request: no call
//! counters, no clocks, no randomness. Fixtures are JSON maps from fixture id
//! (session id, crop reference) to the scripted response.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    AnswerForm, AttributeAnswer, AttributeDescriber, DetectorTracker, ProposalWire, ProviderError,
    Question, RawEventProposal, Reasoner, ReasonerRequest, SimilarityScorer, VERIFY_PREFIX,
};
use crate::ingest::{validate_frames, FrameRecord, PatrolSession};
use crate::taxonomy::EntityCategory;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ProviderError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProviderError::Unresolvable(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| ProviderError::ContractViolation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionScript {
    #[serde(default)]
    pub events: Vec<ProposalWire>,
    /// Segment start times at which the reasoner always fails.
    #[serde(default)]
    pub fail_segments: Vec<i64>,
}

/// Reports each scripted event in every segment it overlaps, with the
/// event's own interval as the claimed span.
#[derive(Debug, Clone, Default)]
pub struct ScriptedReasoner {
    pub sessions: BTreeMap<String, SessionScript>,
}

impl ScriptedReasoner {
    pub fn new(sessions: BTreeMap<String, SessionScript>) -> ScriptedReasoner {
        ScriptedReasoner { sessions }
    }

    pub fn from_json_str(text: &str) -> Result<ScriptedReasoner, ProviderError> {
        serde_json::from_str(text)
            .map(ScriptedReasoner::new)
            .map_err(|e| ProviderError::ContractViolation(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScriptedReasoner, ProviderError> {
        read_json(path.as_ref()).map(ScriptedReasoner::new)
    }
}

impl Reasoner for ScriptedReasoner {
    fn reason_segment(&self, req: &ReasonerRequest) -> Result<Vec<RawEventProposal>, ProviderError> {
        req.validate()?;
        let Some(script) = self.sessions.get(&req.session_id) else {
            return Ok(Vec::new());
        };
        let span = req.segment_span;
        if script.fail_segments.contains(&span.start_ms) {
            return Err(ProviderError::Unavailable(format!(
                "scripted failure at segment {}",
                span.start_ms
            )));
        }
        script
            .events
            .iter()
            .filter(|ev| match (ev.start_ms, ev.end_ms) {
                (Some(s), Some(e)) => s < span.end_ms && e > span.start_ms,
                _ => true,
            })
            .map(|ev| ev.clone().into_proposal())
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CropScript {
    /// Option-form answers by question id. Unlisted option questions answer
    /// "unclear"; unlisted yes/no questions answer "no".
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
    /// Binary re-check answers by attribute. Unlisted attributes answer "yes".
    #[serde(default)]
    pub verify: BTreeMap<String, String>,
    /// Attributes whose binary re-check fails as a provider error.
    #[serde(default)]
    pub fail_verify: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedDescriber {
    pub crops: BTreeMap<String, CropScript>,
}

impl ScriptedDescriber {
    pub fn new(crops: BTreeMap<String, CropScript>) -> ScriptedDescriber {
        ScriptedDescriber { crops }
    }

    pub fn from_json_str(text: &str) -> Result<ScriptedDescriber, ProviderError> {
        serde_json::from_str(text)
            .map(ScriptedDescriber::new)
            .map_err(|e| ProviderError::ContractViolation(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScriptedDescriber, ProviderError> {
        read_json(path.as_ref()).map(ScriptedDescriber::new)
    }
}

impl AttributeDescriber for ScriptedDescriber {
    fn describe_attributes(
        &self,
        crop: &str,
        _entity_class: EntityCategory,
        questions: &[Question],
    ) -> Result<Vec<AttributeAnswer>, ProviderError> {
        let script = self
            .crops
            .get(crop)
            .ok_or_else(|| ProviderError::Unresolvable(crop.to_owned()))?;
        questions
            .iter()
            .map(|q| {
                let answer = if let Some(attr) = q.id.strip_prefix(VERIFY_PREFIX) {
                    if script.fail_verify.iter().any(|a| a == attr) {
                        return Err(ProviderError::Unavailable(format!("scripted failure on {attr}")));
                    }
                    script.verify.get(attr).cloned().unwrap_or_else(|| "yes".into())
                } else {
                    script.answers.get(&q.id).cloned().unwrap_or_else(|| match q.form {
                        AnswerForm::Options(_) => super::UNCLEAR.into(),
                        AnswerForm::YesNo => "no".into(),
                    })
                };
                Ok(AttributeAnswer {
                    question_id: q.id.clone(),
                    answer,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPair {
    pub a: String,
    pub b: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScript {
    #[serde(default)]
    pub crops: Vec<String>,
    #[serde(default)]
    pub pairs: Vec<ScriptedPair>,
    /// Score for known crops with no declared pair.
    #[serde(default = "default_unrelated")]
    pub default_score: f64,
}

fn default_unrelated() -> f64 {
    0.40
}

/// Symmetric by construction: pairs are stored under their sorted key.
#[derive(Debug, Clone)]
pub struct ScriptedSimilarity {
    known: BTreeSet<String>,
    pairs: BTreeMap<(String, String), f64>,
    default_score: f64,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

impl ScriptedSimilarity {
    pub fn new(script: SimilarityScript) -> Result<ScriptedSimilarity, ProviderError> {
        let mut known: BTreeSet<String> = script.crops.into_iter().collect();
        let mut pairs = BTreeMap::new();
        for p in script.pairs {
            if !(0.0..=1.0).contains(&p.score) {
                return Err(ProviderError::ContractViolation(format!(
                    "score {} for {}/{} outside [0, 1]",
                    p.score, p.a, p.b
                )));
            }
            known.insert(p.a.clone());
            known.insert(p.b.clone());
            pairs.insert(pair_key(&p.a, &p.b), p.score);
        }
        Ok(ScriptedSimilarity {
            known,
            pairs,
            default_score: script.default_score,
        })
    }

    pub fn from_json_str(text: &str) -> Result<ScriptedSimilarity, ProviderError> {
        let script: SimilarityScript = serde_json::from_str(text)
            .map_err(|e| ProviderError::ContractViolation(e.to_string()))?;
        ScriptedSimilarity::new(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScriptedSimilarity, ProviderError> {
        ScriptedSimilarity::new(read_json(path.as_ref())?)
    }

    pub fn known_crops(&self) -> impl Iterator<Item = &str> {
        self.known.iter().map(String::as_str)
    }
}

impl SimilarityScorer for ScriptedSimilarity {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, ProviderError> {
        for c in [a, b] {
            if !self.known.contains(c) {
                return Err(ProviderError::Unresolvable(c.to_owned()));
            }
        }
        if a == b {
            return Ok(1.0);
        }
        Ok(*self.pairs.get(&pair_key(a, b)).unwrap_or(&self.default_score))
    }
}

/// Replays recorded sidecar frames verbatim.
#[derive(Debug, Clone, Default)]
pub struct ReplayTracker {
    pub sidecars: HashMap<String, Vec<FrameRecord>>,
}

impl ReplayTracker {
    pub fn new(sidecars: HashMap<String, Vec<FrameRecord>>) -> ReplayTracker {
        ReplayTracker { sidecars }
    }
}

impl DetectorTracker for ReplayTracker {
    fn detect_and_track(&self, session: &PatrolSession) -> Result<Vec<FrameRecord>, ProviderError> {
        let frames = self
            .sidecars
            .get(&session.session_id)
            .ok_or_else(|| ProviderError::Unresolvable(format!("no sidecar for {}", session.session_id)))?;
        validate_frames(frames).map_err(|e| ProviderError::ContractViolation(e.to_string()))?;
        Ok(frames.clone())
    }
}

/// Mock fixture directory: `reasoner.json`, `describer.json` and
/// `similarity.json`, each optional.
#[derive(Debug, Clone)]
pub struct MockFixtures {
    pub reasoner: ScriptedReasoner,
    pub describer: ScriptedDescriber,
    pub similarity: ScriptedSimilarity,
}

impl Default for MockFixtures {
    fn default() -> Self {
        MockFixtures {
            reasoner: ScriptedReasoner::default(),
            describer: ScriptedDescriber::default(),
            similarity: ScriptedSimilarity::new(SimilarityScript {
                crops: Vec::new(),
                pairs: Vec::new(),
                default_score: default_unrelated(),
            })
            .expect("empty script is valid"),
        }
    }
}

impl MockFixtures {
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<MockFixtures, ProviderError> {
        let dir = dir.as_ref();
        let reasoner = match dir.join("reasoner.json") {
            p if p.exists() => ScriptedReasoner::load(p)?,
            _ => ScriptedReasoner::default(),
        };
        let describer = match dir.join("describer.json") {
            p if p.exists() => ScriptedDescriber::load(p)?,
            _ => ScriptedDescriber::default(),
        };
        let similarity = match dir.join("similarity.json") {
            p if p.exists() => ScriptedSimilarity::load(p)?,
            _ => MockFixtures::default().similarity,
        };
        Ok(MockFixtures {
            reasoner,
            describer,
            similarity,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::SegmentSpan;
    use crate::providers::{Confidence, GenerationParams, QuestionSets};

    fn request(session: &str, start: i64, end: i64) -> ReasonerRequest {
        ReasonerRequest {
            session_id: session.into(),
            persona_prompt: String::new(),
            taxonomy_digest: String::new(),
            segment_span: SegmentSpan { index: 0, start_ms: start, end_ms: end },
            annotated_frames: Vec::new(),
            generation_params: GenerationParams::default(),
        }
    }

    const FIGHT: &str = r#"{"s3": {"events": [{"label_text": "Brawling", "description": "two people fighting",
        "rationale": "punches exchanged", "confidence": "high", "start_ms": 50000, "end_ms": 60000}]}}"#;

    #[test]
    fn fight_fixture() {
        let r = ScriptedReasoner::from_json_str(FIGHT).unwrap();
        let out = r.reason_segment(&request("s3", 48000, 58000)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].label_text, "Brawling");
        assert_eq!(out[0].confidence, Confidence::High);
        assert_eq!(out[0].claimed_span, Some((50000, 60000)));
        assert!(r.reason_segment(&request("s3", 0, 10000)).unwrap().is_empty());
        assert!(r.reason_segment(&request("s9", 48000, 58000)).unwrap().is_empty());
    }

    #[test]
    fn bad_confidence_is_contract_violation() {
        let r = ScriptedReasoner::from_json_str(&FIGHT.replace("high", "certain")).unwrap();
        let err = r.reason_segment(&request("s3", 48000, 58000)).unwrap_err();
        assert!(matches!(err, ProviderError::ContractViolation(_)));
    }

    #[test]
    fn scripted_segment_failure_is_retryable() {
        let text = r#"{"s1": {"fail_segments": [8000]}}"#;
        let r = ScriptedReasoner::from_json_str(text).unwrap();
        assert!(r.reason_segment(&request("s1", 8000, 18000)).unwrap_err().is_retryable());
        assert!(r.reason_segment(&request("s1", 0, 10000)).unwrap().is_empty());
    }

    #[test]
    fn describer_answers_and_fallbacks() {
        let d = ScriptedDescriber::from_json_str(
            r#"{"p7": {"answers": {"shirt_color": "red", "pants_color": "black"}},
                "p9": {"answers": {"shirt_color": "unclear"}, "verify": {"shirt_color": "no"}}}"#,
        )
        .unwrap();
        let qs = QuestionSets::bundled();
        let out = d.describe_attributes("p7", EntityCategory::Person, &qs.person).unwrap();
        assert_eq!(out[0].answer, "red");
        assert_eq!(out[2].answer, "unclear");
        assert_eq!(out[3].answer, "no");
        let check = qs.person[0].verification("red");
        let out = d.describe_attributes("p7", EntityCategory::Person, std::slice::from_ref(&check)).unwrap();
        assert_eq!(out[0].answer, "yes");
        let out = d.describe_attributes("p9", EntityCategory::Person, &[check]).unwrap();
        assert_eq!(out[0].answer, "no");
        assert!(matches!(
            d.describe_attributes("nope", EntityCategory::Person, &qs.person),
            Err(ProviderError::Unresolvable(_))
        ));
    }

    #[test]
    fn similarity_script() {
        let s = ScriptedSimilarity::from_json_str(
            r#"{"crops": ["c"], "pairs": [{"a": "b", "b": "a", "score": 0.97}]}"#,
        )
        .unwrap();
        assert_eq!(s.similarity("a", "a").unwrap(), 1.0);
        assert_eq!(s.similarity("a", "b").unwrap(), 0.97);
        assert_eq!(s.similarity("b", "a").unwrap(), 0.97);
        assert_eq!(s.similarity("a", "c").unwrap(), 0.40);
        assert!(s.similarity("a", "zz").is_err());
    }

    #[test]
    fn replay_tracker() {
        use crate::ingest::{BBox, Detection};
        let frame = |i: u64, t: i64, tracks: &[&str]| FrameRecord {
            frame_index: i,
            t_ms: t,
            detections: tracks
                .iter()
                .map(|id| Detection {
                    track_id: (*id).into(),
                    class_label: EntityCategory::Person,
                    bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
                    crop_uri: None,
                })
                .collect(),
        };
        let session: PatrolSession = serde_json::from_str(
            r#"{"session_id":"s1","robot_id":"r","robot_label":"x","period":"Day","video_uri":"v",
                "duration_ms":1000,"start_wall_clock":"2025-01-01T00:00:00Z","gps_trace":[]}"#,
        )
        .unwrap();
        let frames = vec![frame(0, 0, &["a", "b"]), frame(1, 40, &["a", "b", "c"])];
        let mut map = HashMap::new();
        map.insert("s1".to_string(), frames.clone());
        let t = ReplayTracker::new(map.clone());
        assert_eq!(t.detect_and_track(&session).unwrap(), frames);

        map.insert("s1".to_string(), Vec::new());
        assert!(ReplayTracker::new(map.clone()).detect_and_track(&session).unwrap().is_empty());

        map.insert("s1".to_string(), vec![frame(0, 40, &[]), frame(1, 0, &[])]);
        assert!(ReplayTracker::new(map).detect_and_track(&session).is_err());
    }
}
