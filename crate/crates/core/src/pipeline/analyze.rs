use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    annotate_frames, build_event_card, card_id, event_wall_clock, segment_video, select_keyframe,
    EventCard, ObjectAwareFrame, PipelineError, Pose, SegmentSpan, TimeSpan,
};
use crate::ingest::PatrolSession;
use crate::providers::{
    check_proposals, with_retry, CallPolicy, DetectorTracker, GenerationParams, InflightLimiter,
    ProviderMode, Reasoner, ReasonerRequest, PERSONA_PROMPT,
};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub analysis_window_ms: i64,
    pub analysis_stride_ms: i64,
    pub min_tail_ms: i64,
    /// Frames per second sent to the reasoner; <= 0 sends every frame.
    pub frame_sample_hz: f64,
    pub provider_mode: ProviderMode,
    pub max_inflight: usize,
    pub retries: u32,
    pub timeout_ms: u64,
    /// Worker threads used for segments and sessions.
    pub parallelism: usize,
    pub temperature: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            analysis_window_ms: 10_000,
            analysis_stride_ms: 8_000,
            min_tail_ms: 5_000,
            frame_sample_hz: 1.0,
            provider_mode: ProviderMode::Mock,
            max_inflight: 4,
            retries: 2,
            timeout_ms: 60_000,
            parallelism: 4,
            temperature: 1.0,
        }
    }
}

impl AnalysisConfig {
    pub fn from_json_str(text: &str) -> Result<AnalysisConfig, PipelineError> {
        let cfg: AnalysisConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let w = self.analysis_window_ms;
        let s = self.analysis_stride_ms;
        if !(0 < s && s <= w) {
            return Err(PipelineError::Config(format!("need 0 < stride ({s}) <= window ({w})")));
        }
        if !(0..=w).contains(&self.min_tail_ms) {
            return Err(PipelineError::Config(format!(
                "min_tail_ms {} outside [0, {w}]",
                self.min_tail_ms
            )));
        }
        if self.max_inflight == 0 || self.parallelism == 0 {
            return Err(PipelineError::Config("max_inflight and parallelism must be >= 1".into()));
        }
        Ok(())
    }

    pub fn call_policy(&self) -> CallPolicy {
        CallPolicy {
            retries: self.retries,
            timeout: Duration::from_millis(self.timeout_ms),
        }
    }

    /// Segmentation for one session. Videos shorter than the window get a
    /// single whole-video segment.
    pub fn segments_for(&self, duration_ms: i64) -> Result<Vec<SegmentSpan>, PipelineError> {
        let window = self.analysis_window_ms.min(duration_ms);
        let stride = self.analysis_stride_ms.min(window);
        segment_video(duration_ms, window, stride, self.min_tail_ms.min(window))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFailure {
    pub session_id: String,
    pub segment: SegmentSpan,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub session_id: String,
    pub segments_analyzed: usize,
    pub cards: Vec<EventCard>,
    /// Segments marked analysis-failed; distinct from segments judged normal.
    pub failures: Vec<SegmentFailure>,
}

/// Reasoner input frames: the first frame of each `1/hz` bucket in `span`.
pub fn sample_frames(frames: &[ObjectAwareFrame], span: TimeSpan, hz: f64) -> Vec<ObjectAwareFrame> {
    let in_span = frames.iter().filter(|f| span.contains(f.t_ms()));
    if hz <= 0.0 {
        return in_span.cloned().collect();
    }
    let mut last_bucket = None;
    let mut out = Vec::new();
    for f in in_span {
        let bucket = ((f.t_ms() - span.start_ms) as f64 * hz / 1000.0).floor() as i64;
        if last_bucket != Some(bucket) {
            last_bucket = Some(bucket);
            out.push(f.clone());
        }
    }
    out
}

fn join_with_spans(parts: &[(TimeSpan, &str)]) -> String {
    let mut distinct: Vec<&str> = Vec::new();
    for (_, text) in parts {
        if !distinct.contains(text) {
            distinct.push(text);
        }
    }
    if distinct.len() <= 1 {
        return distinct.first().map(|s| s.to_string()).unwrap_or_default();
    }
    let mut seen: Vec<&str> = Vec::new();
    let mut lines = Vec::new();
    for (span, text) in parts {
        if !seen.contains(text) {
            seen.push(text);
            lines.push(format!("[{}-{} ms] {}", span.start_ms, span.end_ms, text));
        }
    }
    lines.join("\n")
}

fn combine(
    chain: Vec<EventCard>,
    session: &PatrolSession,
    frames: &[ObjectAwareFrame],
) -> Result<EventCard, PipelineError> {
    if chain.len() == 1 {
        return Ok(chain.into_iter().next().unwrap());
    }
    let span = TimeSpan::new(
        chain.iter().map(|c| c.span.start_ms).min().unwrap(),
        chain.iter().map(|c| c.span.end_ms).max().unwrap(),
    );
    let confidence = chain.iter().map(|c| c.confidence).min_by_key(|c| c.rank()).unwrap();
    let descriptions: Vec<_> = chain.iter().map(|c| (c.span, c.description.as_str())).collect();
    let rationales: Vec<_> = chain.iter().map(|c| (c.span, c.rationale.as_str())).collect();
    let mut segments: Vec<u32> = chain.iter().flat_map(|c| c.segments.iter().copied()).collect();
    segments.sort_unstable();
    segments.dedup();

    let first = &chain[0];
    let (lat, lon) = session.interpolate_pose(span.start_ms)?;
    Ok(EventCard {
        card_id: card_id(&session.session_id, span, &first.label_text),
        session_id: first.session_id.clone(),
        robot_id: first.robot_id.clone(),
        eoi: first.eoi.clone(),
        label_text: first.label_text.clone(),
        priority: first.priority,
        description: join_with_spans(&descriptions),
        rationale: join_with_spans(&rationales),
        confidence,
        span,
        keyframe: select_keyframe(span, frames)?,
        pose: Pose { lat, lon },
        status: first.status,
        created_at: event_wall_clock(session, span.start_ms),
        segments,
    })
}

/// Collapses cards of the same event type whose spans overlap or touch into
/// one card over their union. The result is sorted by `(span.start, card_id)`
/// and does not depend on the input order.
pub fn merge_duplicate_cards(
    cards: Vec<EventCard>,
    session: &PatrolSession,
    frames: &[ObjectAwareFrame],
) -> Result<Vec<EventCard>, PipelineError> {
    let mut groups: BTreeMap<String, Vec<EventCard>> = BTreeMap::new();
    for c in cards {
        groups.entry(c.eoi.merge_key()).or_default().push(c);
    }
    let mut out = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(|a, b| {
            (a.span, a.confidence.rank(), &a.card_id, &a.description)
                .cmp(&(b.span, b.confidence.rank(), &b.card_id, &b.description))
        });
        let mut chain: Vec<EventCard> = Vec::new();
        let mut chain_end = i64::MIN;
        for c in group {
            if !chain.is_empty() && c.span.start_ms > chain_end {
                out.push(combine(std::mem::take(&mut chain), session, frames)?);
            }
            chain_end = if chain.is_empty() {
                c.span.end_ms
            } else {
                chain_end.max(c.span.end_ms)
            };
            chain.push(c);
        }
        if !chain.is_empty() {
            out.push(combine(chain, session, frames)?);
        }
    }
    out.sort_by(|a, b| (a.span.start_ms, &a.card_id).cmp(&(b.span.start_ms, &b.card_id)));
    Ok(out)
}

/// Runs detection replay, segment reasoning and card assembly. Segment calls
/// fan out over a fixed-size worker pool; cards are reduced in segment order
/// so output is identical for any worker count.
pub struct Engine {
    taxonomy: Arc<Taxonomy>,
    tracker: Arc<dyn DetectorTracker>,
    reasoner: Arc<dyn Reasoner>,
    config: AnalysisConfig,
    reasoner_slots: InflightLimiter,
    tracker_slots: InflightLimiter,
    pool: rayon::ThreadPool,
}

impl Engine {
    pub fn new(
        taxonomy: Arc<Taxonomy>,
        tracker: Arc<dyn DetectorTracker>,
        reasoner: Arc<dyn Reasoner>,
        config: AnalysisConfig,
    ) -> Result<Engine, PipelineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Engine {
            taxonomy,
            tracker,
            reasoner,
            reasoner_slots: InflightLimiter::new(config.max_inflight),
            tracker_slots: InflightLimiter::new(config.max_inflight),
            config,
            pool,
        })
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn analyze_session(&self, session: &PatrolSession) -> Result<AnalysisOutcome, PipelineError> {
        self.pool.install(|| self.run_session(session))
    }

    /// Outcomes in input order.
    pub fn analyze_sessions(&self, sessions: &[PatrolSession]) -> Result<Vec<AnalysisOutcome>, PipelineError> {
        use rayon::prelude::*;
        self.pool
            .install(|| sessions.par_iter().map(|s| self.run_session(s)).collect())
    }

    fn run_session(&self, session: &PatrolSession) -> Result<AnalysisOutcome, PipelineError> {
        use rayon::prelude::*;

        let segments = self.config.segments_for(session.duration_ms)?;
        let policy = self.config.call_policy();
        let fail_all = |reason: String| AnalysisOutcome {
            session_id: session.session_id.clone(),
            segments_analyzed: segments.len(),
            cards: Vec::new(),
            failures: segments
                .iter()
                .map(|&segment| SegmentFailure {
                    session_id: session.session_id.clone(),
                    segment,
                    reason: reason.clone(),
                })
                .collect(),
        };
        let tracked = with_retry(&policy, || {
            let _slot = self.tracker_slots.acquire();
            self.tracker.detect_and_track(session)
        });
        let frames = match tracked {
            Ok(f) => f,
            Err(e) => return Ok(fail_all(format!("detection: {e}"))),
        };
        let frames = match annotate_frames(&frames) {
            Ok(f) => f,
            Err(e) => return Ok(fail_all(format!("detection: {e}"))),
        };

        let digest = self.taxonomy.digest();
        let per_segment: Vec<Result<Vec<EventCard>, SegmentFailure>> = segments
            .par_iter()
            .map(|seg| self.run_segment(session, seg, &frames, &digest, &policy))
            .collect();

        let mut cards = Vec::new();
        let mut failures = Vec::new();
        for r in per_segment {
            match r {
                Ok(c) => cards.extend(c),
                Err(f) => failures.push(f),
            }
        }
        let cards = merge_duplicate_cards(cards, session, &frames)?;
        Ok(AnalysisOutcome {
            session_id: session.session_id.clone(),
            segments_analyzed: segments.len(),
            cards,
            failures,
        })
    }

    fn run_segment(
        &self,
        session: &PatrolSession,
        seg: &SegmentSpan,
        frames: &[ObjectAwareFrame],
        digest: &str,
        policy: &CallPolicy,
    ) -> Result<Vec<EventCard>, SegmentFailure> {
        let fail = |reason: String| SegmentFailure {
            session_id: session.session_id.clone(),
            segment: *seg,
            reason,
        };
        let req = ReasonerRequest {
            session_id: session.session_id.clone(),
            persona_prompt: PERSONA_PROMPT.to_owned(),
            taxonomy_digest: digest.to_owned(),
            segment_span: *seg,
            annotated_frames: sample_frames(frames, seg.span(), self.config.frame_sample_hz),
            generation_params: GenerationParams {
                temperature: self.config.temperature,
            },
        };
        let proposals = with_retry(policy, || {
            let _slot = self.reasoner_slots.acquire();
            self.reasoner.reason_segment(&req)
        })
        .map_err(|e| fail(e.to_string()))?;
        check_proposals(&req, &proposals).map_err(|e| fail(e.to_string()))?;
        proposals
            .iter()
            .map(|p| build_event_card(p, seg, session, frames, &self.taxonomy).map_err(|e| fail(e.to_string())))
            .collect()
    }
}
