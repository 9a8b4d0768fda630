//! Per-video analysis: temporal segmentation, object-aware annotation,
//! keyframe selection and Event Card construction.

mod analyze;

pub use analyze::{
    merge_duplicate_cards, sample_frames, AnalysisConfig, AnalysisOutcome, Engine, SegmentFailure,
};

use std::collections::HashSet;
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{FrameOrderError, FrameRecord, IngestError, PatrolSession};
use crate::providers::{Confidence, RawEventProposal};
use crate::taxonomy::{normalize_label, EntityCategory, PriorityLevel, Taxonomy};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid segmentation: {0}")]
    Segmentation(String),
    #[error("empty segment [{0}, {1})")]
    EmptySegment(i64, i64),
    #[error(transparent)]
    Frames(#[from] FrameOrderError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("invalid analysis config: {0}")]
    Config(String),
}

/// Half-open interval `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start_ms: i64,
    pub end_ms: i64,
}

impl TimeSpan {
    pub fn new(start_ms: i64, end_ms: i64) -> TimeSpan {
        TimeSpan { start_ms, end_ms }
    }

    pub fn len(&self) -> i64 {
        self.end_ms - self.start_ms
    }

    pub fn is_empty(&self) -> bool {
        self.end_ms <= self.start_ms
    }

    pub fn contains(&self, t_ms: i64) -> bool {
        self.start_ms <= t_ms && t_ms < self.end_ms
    }

    pub fn overlap(&self, other: &TimeSpan) -> i64 {
        (self.end_ms.min(other.end_ms) - self.start_ms.max(other.start_ms)).max(0)
    }

    pub fn intersect(&self, other: &TimeSpan) -> Option<TimeSpan> {
        let s = TimeSpan::new(self.start_ms.max(other.start_ms), self.end_ms.min(other.end_ms));
        (!s.is_empty()).then_some(s)
    }
}

impl fmt::Display for TimeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start_ms, self.end_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub index: u32,
    pub start_ms: i64,
    pub end_ms: i64,
}

impl SegmentSpan {
    pub fn span(&self) -> TimeSpan {
        TimeSpan::new(self.start_ms, self.end_ms)
    }

    pub fn contains(&self, t_ms: i64) -> bool {
        self.span().contains(t_ms)
    }

    pub fn len(&self) -> i64 {
        self.end_ms - self.start_ms
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0
    }
}

/// Sliding-window segmentation. Starts at `k * stride` while the start lies
/// inside the video; ends are clipped to the duration, and clipped trailing
/// spans shorter than `min_tail_ms` are dropped.
pub fn segment_video(
    duration_ms: i64,
    window_ms: i64,
    stride_ms: i64,
    min_tail_ms: i64,
) -> Result<Vec<SegmentSpan>, PipelineError> {
    if !(0 < stride_ms && stride_ms <= window_ms && window_ms <= duration_ms) {
        return Err(PipelineError::Segmentation(format!(
            "require 0 < stride ({stride_ms}) <= window ({window_ms}) <= duration ({duration_ms})"
        )));
    }
    if !(0 <= min_tail_ms && min_tail_ms <= window_ms) {
        return Err(PipelineError::Segmentation(format!(
            "require 0 <= min_tail ({min_tail_ms}) <= window ({window_ms})"
        )));
    }
    let mut spans = Vec::new();
    let mut index: u32 = 0;
    let mut start = 0;
    while start < duration_ms {
        let end = (start + window_ms).min(duration_ms);
        if end - start >= min_tail_ms {
            spans.push(SegmentSpan {
                index,
                start_ms: start,
                end_ms: end,
            });
        }
        index += 1;
        start = i64::from(index) * stride_ms;
    }
    Ok(spans)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAwareFrame {
    pub frame: FrameRecord,
    pub distinct_track_count: usize,
}

impl ObjectAwareFrame {
    pub fn new(frame: FrameRecord) -> ObjectAwareFrame {
        let distinct_track_count = frame
            .detections
            .iter()
            .map(|d| d.track_id.as_str())
            .collect::<HashSet<_>>()
            .len();
        ObjectAwareFrame {
            frame,
            distinct_track_count,
        }
    }

    pub fn t_ms(&self) -> i64 {
        self.frame.t_ms
    }
}

pub fn annotate_frames(frames: &[FrameRecord]) -> Result<Vec<ObjectAwareFrame>, FrameOrderError> {
    crate::ingest::validate_frames(frames)?;
    Ok(frames.iter().cloned().map(ObjectAwareFrame::new).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame_index: u64,
    pub t_ms: i64,
}

/// Frame in `span` with the most distinct tracked objects; ties go to the
/// earliest frame.
pub fn select_keyframe(span: TimeSpan, frames: &[ObjectAwareFrame]) -> Result<Keyframe, PipelineError> {
    let mut best: Option<&ObjectAwareFrame> = None;
    for f in frames.iter().filter(|f| span.contains(f.t_ms())) {
        let better = match best {
            None => true,
            Some(b) => {
                f.distinct_track_count > b.distinct_track_count
                    || (f.distinct_track_count == b.distinct_track_count
                        && (f.t_ms(), f.frame.frame_index) < (b.t_ms(), b.frame.frame_index))
            }
        };
        if better {
            best = Some(f);
        }
    }
    best.map(|f| Keyframe {
        frame_index: f.frame.frame_index,
        t_ms: f.t_ms(),
    })
    .ok_or(PipelineError::EmptySegment(span.start_ms, span.end_ms))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CardEoi {
    Matched {
        id: u8,
        name: String,
        entity_category: EntityCategory,
    },
    Unmatched {
        label_text: String,
    },
}

impl CardEoi {
    pub fn id(&self) -> Option<u8> {
        match self {
            CardEoi::Matched { id, .. } => Some(*id),
            CardEoi::Unmatched { .. } => None,
        }
    }

    pub fn display_name(&self) -> &str {
        match self {
            CardEoi::Matched { name, .. } => name,
            CardEoi::Unmatched { label_text } => label_text,
        }
    }

    /// Map icon group; unmatched labels render as "other".
    pub fn icon(&self) -> EntityCategory {
        match self {
            CardEoi::Matched { entity_category, .. } => *entity_category,
            CardEoi::Unmatched { .. } => EntityCategory::Other,
        }
    }

    /// Key under which duplicate cards are merged.
    pub(crate) fn merge_key(&self) -> String {
        match self {
            CardEoi::Matched { id, .. } => format!("#{id}"),
            CardEoi::Unmatched { label_text } => normalize_label(label_text),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CardStatus {
    New,
    Reviewed,
    Saved,
    Shared,
}

impl std::str::FromStr for CardStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "new" => Ok(CardStatus::New),
            "reviewed" => Ok(CardStatus::Reviewed),
            "saved" => Ok(CardStatus::Saved),
            "shared" => Ok(CardStatus::Shared),
            _ => Err(format!("illegal status {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCard {
    pub card_id: String,
    pub session_id: String,
    pub robot_id: String,
    pub eoi: CardEoi,
    /// Raw reasoner label the card was built from.
    pub label_text: String,
    pub priority: Option<PriorityLevel>,
    pub description: String,
    pub rationale: String,
    pub confidence: Confidence,
    pub span: TimeSpan,
    pub keyframe: Keyframe,
    pub pose: Pose,
    pub status: CardStatus,
    pub created_at: DateTime<Utc>,
    /// Analysis segment indices that reported this event.
    #[serde(default)]
    pub segments: Vec<u32>,
}

impl EventCard {
    pub fn is_unclassified(&self) -> bool {
        self.priority.is_none()
    }
}

pub fn card_id(session_id: &str, span: TimeSpan, label_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(session_id.as_bytes());
    h.update([0]);
    h.update(span.start_ms.to_le_bytes());
    h.update(span.end_ms.to_le_bytes());
    h.update(label_text.as_bytes());
    format!("card-{}", hex::encode(&h.finalize()[..8]))
}

/// Cards are stamped with the wall-clock time the event began, so repeated
/// runs over the same inputs produce identical cards.
pub(crate) fn event_wall_clock(session: &PatrolSession, t_ms: i64) -> DateTime<Utc> {
    session.start_wall_clock + Duration::milliseconds(t_ms)
}

pub fn resolve_eoi(label_text: &str, taxonomy: &Taxonomy) -> (CardEoi, Option<PriorityLevel>) {
    match taxonomy.classify_label(label_text) {
        Some(e) => (
            CardEoi::Matched {
                id: e.id,
                name: e.name.clone(),
                entity_category: e.entity_category,
            },
            Some(e.priority),
        ),
        None => (
            CardEoi::Unmatched {
                label_text: label_text.trim().to_owned(),
            },
            None,
        ),
    }
}

/// Card span is the claimed span clipped to the segment, or the segment
/// itself when no usable claim was made.
pub fn card_span(proposal: &RawEventProposal, segment: &SegmentSpan) -> TimeSpan {
    proposal
        .claimed_span
        .and_then(|(s, e)| TimeSpan::new(s, e).intersect(&segment.span()))
        .unwrap_or_else(|| segment.span())
}

pub fn build_event_card(
    proposal: &RawEventProposal,
    segment: &SegmentSpan,
    session: &PatrolSession,
    frames: &[ObjectAwareFrame],
    taxonomy: &Taxonomy,
) -> Result<EventCard, PipelineError> {
    let (eoi, priority) = resolve_eoi(&proposal.label_text, taxonomy);
    let span = card_span(proposal, segment);
    let keyframe = select_keyframe(span, frames)?;
    let (lat, lon) = session.interpolate_pose(span.start_ms)?;
    Ok(EventCard {
        card_id: card_id(&session.session_id, span, &proposal.label_text),
        session_id: session.session_id.clone(),
        robot_id: session.robot_id.clone(),
        eoi,
        label_text: proposal.label_text.clone(),
        priority,
        description: proposal.description.clone(),
        rationale: proposal.rationale.clone(),
        confidence: proposal.confidence,
        span,
        keyframe,
        pose: Pose { lat, lon },
        status: CardStatus::New,
        created_at: event_wall_clock(session, span.start_ms),
        segments: vec![segment.index],
    })
}

/// Cards as JSON lines, one per line.
pub fn write_cards_jsonl(cards: &[EventCard]) -> String {
    let mut out = String::new();
    for c in cards {
        out.push_str(&serde_json::to_string(c).expect("card serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_cards_jsonl(text: &str) -> Result<Vec<EventCard>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BBox, Detection, GpsFix, Period};

    fn spans(v: &[SegmentSpan]) -> Vec<(i64, i64)> {
        v.iter().map(|s| (s.start_ms, s.end_ms)).collect()
    }

    #[test]
    fn segmentation_examples() {
        let s = segment_video(100_000, 30_000, 25_000, 10_000).unwrap();
        assert_eq!(
            spans(&s),
            [(0, 30_000), (25_000, 55_000), (50_000, 80_000), (75_000, 100_000)]
        );
        assert_eq!(s.iter().map(|s| s.index).collect::<Vec<_>>(), [0, 1, 2, 3]);

        let s = segment_video(30_000, 30_000, 25_000, 10_000).unwrap();
        assert_eq!(spans(&s), [(0, 30_000)]);

        let s = segment_video(42_000, 42_000, 42_000, 0).unwrap();
        assert_eq!(spans(&s), [(0, 42_000)]);
    }

    #[test]
    fn segmentation_preconditions() {
        assert!(segment_video(100, 10, 0, 0).is_err());
        assert!(segment_video(100, 10, 20, 0).is_err());
        assert!(segment_video(100, 200, 20, 0).is_err());
        assert!(segment_video(100, 10, 5, 11).is_err());
        assert!(segment_video(100, 10, 5, -1).is_err());
    }

    fn frame(i: u64, t: i64, tracks: &[&str]) -> FrameRecord {
        FrameRecord {
            frame_index: i,
            t_ms: t,
            detections: tracks
                .iter()
                .map(|id| Detection {
                    track_id: (*id).into(),
                    class_label: EntityCategory::Person,
                    bbox: BBox::new(1.0, 1.0, 20.0, 40.0),
                    crop_uri: None,
                })
                .collect(),
        }
    }

    #[test]
    fn annotation_counts_distinct_tracks() {
        let out = annotate_frames(&[frame(0, 0, &["a", "a", "b"]), frame(1, 10, &[]), frame(2, 20, &["c"])]).unwrap();
        assert_eq!(out.iter().map(|f| f.distinct_track_count).collect::<Vec<_>>(), [2, 0, 1]);
        assert_eq!(out[2].frame.frame_index, 2);
        assert!(annotate_frames(&[frame(1, 10, &[]), frame(0, 0, &[])]).is_err());
    }

    #[test]
    fn keyframe_first_maximum_wins() {
        let frames = annotate_frames(&[
            frame(0, 0, &["a"]),
            frame(1, 100, &["a", "b", "c"]),
            frame(2, 200, &["a", "b", "d"]),
            frame(3, 300, &["a", "b"]),
        ])
        .unwrap();
        let k = select_keyframe(TimeSpan::new(0, 1000), &frames).unwrap();
        assert_eq!(k, Keyframe { frame_index: 1, t_ms: 100 });

        let k = select_keyframe(TimeSpan::new(150, 1000), &frames).unwrap();
        assert_eq!(k.frame_index, 2);

        let zeros = annotate_frames(&[frame(0, 10, &[]), frame(1, 20, &[])]).unwrap();
        assert_eq!(select_keyframe(TimeSpan::new(0, 100), &zeros).unwrap().frame_index, 0);
        assert_eq!(select_keyframe(TimeSpan::new(15, 100), &zeros).unwrap().frame_index, 1);

        let err = select_keyframe(TimeSpan::new(500, 600), &zeros).unwrap_err();
        assert_eq!(err.to_string(), "empty segment [500, 600)");
    }

    fn session() -> PatrolSession {
        PatrolSession {
            session_id: "s3".into(),
            robot_id: "r1".into(),
            robot_label: "Library Walk".into(),
            period: Period::Day,
            video_uri: "file:///v/s3.mp4".into(),
            duration_ms: 100_000,
            start_wall_clock: "2025-03-01T14:00:00Z".parse().unwrap(),
            gps_trace: vec![
                GpsFix { t_ms: 0, lat: 38.83, lon: -77.31 },
                GpsFix { t_ms: 100_000, lat: 38.84, lon: -77.30 },
            ],
        }
    }

    fn proposal(label: &str, span: Option<(i64, i64)>) -> RawEventProposal {
        RawEventProposal {
            label_text: label.into(),
            description: "two people fighting".into(),
            rationale: "punches".into(),
            confidence: Confidence::High,
            claimed_span: span,
        }
    }

    fn frames_every_second() -> Vec<ObjectAwareFrame> {
        let raw: Vec<_> = (0..100).map(|i| frame(i, i as i64 * 1000, if i % 7 == 0 { &["a", "b"] } else { &["a"] })).collect();
        annotate_frames(&raw).unwrap()
    }

    #[test]
    fn brawling_card() {
        let t = Taxonomy::bundled();
        let seg = SegmentSpan { index: 2, start_ms: 50_000, end_ms: 80_000 };
        let card = build_event_card(&proposal("Brawling", None), &seg, &session(), &frames_every_second(), &t).unwrap();
        assert_eq!(card.priority, Some(PriorityLevel::Urgent));
        assert_eq!(card.span, TimeSpan::new(50_000, 80_000));
        assert_eq!(card.keyframe.t_ms, 56_000);
        assert_eq!(card.status, CardStatus::New);
        let (lat, lon) = session().interpolate_pose(50_000).unwrap();
        assert_eq!(card.pose, Pose { lat, lon });
        assert_eq!(card.created_at, "2025-03-01T14:00:50Z".parse::<DateTime<Utc>>().unwrap());
    }

    #[test]
    fn unmatched_card_has_no_priority() {
        let t = Taxonomy::bundled();
        let seg = SegmentSpan { index: 0, start_ms: 0, end_ms: 10_000 };
        let card = build_event_card(&proposal("flying a kite", None), &seg, &session(), &frames_every_second(), &t).unwrap();
        assert!(card.priority.is_none());
        assert_eq!(card.eoi, CardEoi::Unmatched { label_text: "flying a kite".into() });
        assert_eq!(card.eoi.icon(), EntityCategory::Other);
    }

    #[test]
    fn claimed_span_is_clamped() {
        let t = Taxonomy::bundled();
        let seg = SegmentSpan { index: 6, start_ms: 48_000, end_ms: 58_000 };
        let card = build_event_card(&proposal("fight", Some((50_000, 60_000))), &seg, &session(), &frames_every_second(), &t).unwrap();
        assert_eq!(card.span, TimeSpan::new(50_000, 58_000));
        assert!(card.span.contains(card.keyframe.t_ms));
        // claim entirely outside the segment falls back to the segment
        let card = build_event_card(&proposal("fight", Some((0, 1_000))), &seg, &session(), &frames_every_second(), &t).unwrap();
        assert_eq!(card.span, seg.span());
    }

    #[test]
    fn card_id_is_deterministic() {
        let t = Taxonomy::bundled();
        let seg = SegmentSpan { index: 2, start_ms: 50_000, end_ms: 80_000 };
        let a = build_event_card(&proposal("Brawling", None), &seg, &session(), &frames_every_second(), &t).unwrap();
        let b = build_event_card(&proposal("Brawling", None), &seg, &session(), &frames_every_second(), &t).unwrap();
        assert_eq!(a.card_id, b.card_id);
        assert_ne!(a.card_id, card_id("s3", seg.span(), "Assault"));
    }

    #[test]
    fn empty_span_error_propagates() {
        let t = Taxonomy::bundled();
        let seg = SegmentSpan { index: 0, start_ms: 0, end_ms: 10_000 };
        let err = build_event_card(&proposal("Brawling", None), &seg, &session(), &[], &t).unwrap_err();
        assert!(matches!(err, PipelineError::EmptySegment(0, 10_000)));
    }

    #[test]
    fn cards_jsonl_roundtrip() {
        let t = Taxonomy::bundled();
        let seg = SegmentSpan { index: 2, start_ms: 50_000, end_ms: 80_000 };
        let card = build_event_card(&proposal("Brawling", None), &seg, &session(), &frames_every_second(), &t).unwrap();
        let text = write_cards_jsonl(std::slice::from_ref(&card));
        assert_eq!(parse_cards_jsonl(&text).unwrap(), vec![card]);
    }
}
