//! Segment-level detection scoring: fixed 30 s windows every 25 s, majority
//! ground truth from three annotators, one predicted label per segment, and
//! precision/recall/F1 per shift.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GroundTruthEvent, PatrolSession, Period};
use crate::pipeline::{segment_video, EventCard, PipelineError, SegmentSpan, TimeSpan};
use crate::taxonomy::PriorityLevel;

pub const EVAL_WINDOW_MS: i64 = 30_000;
pub const EVAL_STRIDE_MS: i64 = 25_000;
pub const ANNOTATORS: usize = 3;
/// A clipped tail no longer than the window overlap lies entirely inside the
/// previous segment and is dropped.
pub const EVAL_MIN_TAIL_MS: i64 = EVAL_WINDOW_MS - EVAL_STRIDE_MS + 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Segmentation(#[from] PipelineError),
    #[error("expected {ANNOTATORS} annotator votes, got {0}")]
    VoteCount(usize),
    #[error("card {card_id} belongs to session {card_session}, not {session}")]
    SessionMismatch {
        card_id: String,
        card_session: String,
        session: String,
    },
    #[error("segment {number} of {session_id} has no {what} label")]
    Unlabeled {
        session_id: String,
        number: u32,
        what: &'static str,
    },
    #[error("window {window_ms} / stride {stride_ms} differs from the protocol; set non_standard to use it")]
    NonStandard { window_ms: i64, stride_ms: i64 },
    #[error("{kind} refers to unknown session {session_id:?}")]
    UnknownSession { kind: &'static str, session_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub window_ms: i64,
    pub stride_ms: i64,
    pub min_tail_ms: i64,
    /// Required to run with window/stride other than 30000/25000.
    pub non_standard: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            window_ms: EVAL_WINDOW_MS,
            stride_ms: EVAL_STRIDE_MS,
            min_tail_ms: EVAL_MIN_TAIL_MS,
            non_standard: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !self.non_standard && (self.window_ms != EVAL_WINDOW_MS || self.stride_ms != EVAL_STRIDE_MS) {
            return Err(EvalError::NonStandard {
                window_ms: self.window_ms,
                stride_ms: self.stride_ms,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSegment {
    pub session_id: String,
    /// 1-based position within the session.
    pub number: u32,
    pub span: SegmentSpan,
    pub truth: Option<Label>,
    pub predicted: Option<Label>,
    pub predicted_label: Option<u8>,
    pub predicted_card: Option<String>,
    /// Overlaps an analysis segment whose provider call failed.
    #[serde(default)]
    pub analysis_failed: bool,
}

pub fn make_eval_segments(session: &PatrolSession, cfg: &EvalConfig) -> Result<Vec<EvalSegment>, EvalError> {
    cfg.validate()?;
    let window = cfg.window_ms.min(session.duration_ms);
    let stride = cfg.stride_ms.min(window);
    let spans = segment_video(session.duration_ms, window, stride, cfg.min_tail_ms.min(window))?;
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(i, span)| EvalSegment {
            session_id: session.session_id.clone(),
            number: i as u32 + 1,
            span,
            truth: None,
            predicted: None,
            predicted_label: None,
            predicted_card: None,
            analysis_failed: false,
        })
        .collect())
}

/// Abnormal when at least two of the three annotators say so.
pub fn truth_label(votes: &[bool]) -> Result<Label, EvalError> {
    if votes.len() != ANNOTATORS {
        return Err(EvalError::VoteCount(votes.len()));
    }
    let yes = votes.iter().filter(|v| **v).count();
    Ok(if yes >= 2 { Label::Abnormal } else { Label::Normal })
}

/// Whether an interval counts toward a segment: the overlap covers at least
/// half of the shorter of the two.
pub fn counts_toward(span: TimeSpan, segment: TimeSpan) -> bool {
    let overlap = span.overlap(&segment);
    overlap > 0 && 2 * overlap >= span.len().min(segment.len())
}

/// Pools the votes of every ground-truth row that counts toward the
/// segment (per-annotator OR). Rows without votes count as unanimous.
pub fn segment_votes(segment: TimeSpan, rows: &[&GroundTruthEvent]) -> Vec<bool> {
    let mut votes = vec![false; ANNOTATORS];
    for r in rows {
        if !counts_toward(TimeSpan::new(r.start_ms, r.end_ms), segment) {
            continue;
        }
        match &r.annotator_votes {
            Some(v) => {
                for (acc, x) in votes.iter_mut().zip(v) {
                    *acc |= *x;
                }
            }
            None => votes.iter_mut().for_each(|v| *v = true),
        }
    }
    votes
}

pub fn assign_truth(segments: &mut [EvalSegment], truth: &[GroundTruthEvent]) -> Result<(), EvalError> {
    for seg in segments {
        let rows: Vec<&GroundTruthEvent> = truth.iter().filter(|t| t.session_id == seg.session_id).collect();
        seg.truth = Some(truth_label(&segment_votes(seg.span.span(), &rows))?);
    }
    Ok(())
}

fn card_rank(c: &EventCard) -> (u8, u8, i64, &str) {
    (
        c.priority.map_or(u8::MAX, PriorityLevel::ordinal),
        c.confidence.rank(),
        c.span.start_ms,
        &c.card_id,
    )
}

/// At most one label per segment: among the classified cards that count
/// toward it, the most severe wins, then the most confident, then the
/// earliest. Unclassified cards never mark a segment abnormal.
pub fn assign_predictions(
    cards: &[EventCard],
    segments: &mut [EvalSegment],
    failed_spans: &[TimeSpan],
) -> Result<(), EvalError> {
    for seg in segments {
        if let Some(c) = cards.iter().find(|c| c.session_id != seg.session_id) {
            return Err(EvalError::SessionMismatch {
                card_id: c.card_id.clone(),
                card_session: c.session_id.clone(),
                session: seg.session_id.clone(),
            });
        }
        let span = seg.span.span();
        let winner = cards
            .iter()
            .filter(|c| c.priority.is_some() && counts_toward(c.span, span))
            .min_by(|a, b| card_rank(a).cmp(&card_rank(b)));
        seg.predicted = Some(if winner.is_some() { Label::Abnormal } else { Label::Normal });
        seg.predicted_label = winner.and_then(|c| c.eoi.id());
        seg.predicted_card = winner.map(|c| c.card_id.clone());
        seg.analysis_failed = failed_spans.iter().any(|f| f.overlap(&span) > 0);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Abnormal, Label::Abnormal) => self.tp += 1,
            (Label::Normal, Label::Abnormal) => self.fp += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
            (Label::Abnormal, Label::Normal) => self.fn_ += 1,
        }
    }
}

pub fn confusion(segments: &[EvalSegment]) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix::default();
    for s in segments {
        let missing = |what| EvalError::Unlabeled {
            session_id: s.session_id.clone(),
            number: s.number,
            what,
        };
        cm.add(s.truth.ok_or_else(|| missing("truth"))?, s.predicted.ok_or_else(|| missing("predicted"))?);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReportPeriod {
    Day,
    Night,
    Overall,
}

impl From<Period> for ReportPeriod {
    fn from(p: Period) -> Self {
        match p {
            Period::Day => ReportPeriod::Day,
            Period::Night => ReportPeriod::Night,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Pool all segments of the period.
    #[default]
    Micro,
    /// Average per-video metrics.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub period: ReportPeriod,
    pub videos: usize,
    pub segments: u64,
    pub normal: u64,
    pub abnormal: u64,
    pub confusion: ConfusionMatrix,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub analysis_failed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: Aggregation,
    pub rows: Vec<MetricsRow>,
    pub warnings: Vec<String>,
}

fn row(period: ReportPeriod, by_video: &[(&str, &[EvalSegment])], agg: Aggregation) -> Result<MetricsRow, EvalError> {
    let mut cm = ConfusionMatrix::default();
    let mut failed = 0;
    let mut per_video = Vec::with_capacity(by_video.len());
    for (_, segs) in by_video {
        let c = confusion(segs)?;
        cm.tp += c.tp;
        cm.fp += c.fp;
        cm.tn += c.tn;
        cm.fn_ += c.fn_;
        failed += segs.iter().filter(|s| s.analysis_failed).count() as u64;
        per_video.push(metrics(&c));
    }
    let m = match agg {
        Aggregation::Micro => metrics(&cm),
        Aggregation::Macro if per_video.is_empty() => Metrics::default(),
        Aggregation::Macro => {
            let n = per_video.len() as f64;
            Metrics {
                precision: per_video.iter().map(|m| m.precision).sum::<f64>() / n,
                recall: per_video.iter().map(|m| m.recall).sum::<f64>() / n,
                f1: per_video.iter().map(|m| m.f1).sum::<f64>() / n,
            }
        }
    };
    Ok(MetricsRow {
        period,
        videos: by_video.len(),
        segments: cm.total(),
        normal: cm.tn + cm.fp,
        abnormal: cm.tp + cm.fn_,
        confusion: cm,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        analysis_failed: failed,
    })
}

/// Day and Night rows for the periods present, then Overall.
pub fn report(
    sessions: &[PatrolSession],
    segments: &[EvalSegment],
    agg: Aggregation,
) -> Result<EvalReport, EvalError> {
    let mut grouped: BTreeMap<&str, Vec<EvalSegment>> = BTreeMap::new();
    for s in segments {
        grouped.entry(s.session_id.as_str()).or_default().push(s.clone());
    }
    for id in grouped.keys() {
        if !sessions.iter().any(|s| s.session_id == *id) {
            return Err(EvalError::UnknownSession {
                kind: "eval segment",
                session_id: (*id).to_owned(),
            });
        }
    }
    let videos = |period: Option<Period>| -> Vec<(&str, &[EvalSegment])> {
        sessions
            .iter()
            .filter(|s| period.is_none_or(|p| s.period == p))
            .map(|s| {
                let segs = grouped.get(s.session_id.as_str()).map_or(&[][..], |v| v.as_slice());
                (s.session_id.as_str(), segs)
            })
            .collect()
    };
    let mut rows = Vec::new();
    for p in [Period::Day, Period::Night] {
        let v = videos(Some(p));
        if !v.is_empty() {
            rows.push(row(p.into(), &v, agg)?);
        }
    }
    if !sessions.is_empty() {
        rows.push(row(ReportPeriod::Overall, &videos(None), agg)?);
    }
    let mut warnings = Vec::new();
    for r in &rows {
        if r.abnormal == 0 {
            warnings.push(format!("{:?}: no abnormal truth segments; recall reported as 0", r.period));
        }
        if r.analysis_failed > 0 {
            warnings.push(format!(
                "{:?}: {} segments overlap failed analysis and were scored from the remaining cards",
                r.period, r.analysis_failed
            ));
        }
    }
    Ok(EvalReport {
        aggregation: agg,
        rows,
        warnings,
    })
}

/// Segments with truth and predictions for every session, in session order.
pub fn evaluate(
    sessions: &[PatrolSession],
    cards: &[EventCard],
    truth: &[GroundTruthEvent],
    failed_spans: &[(String, TimeSpan)],
    cfg: &EvalConfig,
) -> Result<Vec<EvalSegment>, EvalError> {
    for (kind, id) in cards
        .iter()
        .map(|c| ("card", &c.session_id))
        .chain(truth.iter().map(|t| ("truth row", &t.session_id)))
    {
        if !sessions.iter().any(|s| &s.session_id == id) {
            return Err(EvalError::UnknownSession {
                kind,
                session_id: id.clone(),
            });
        }
    }
    let per_session: Vec<Result<Vec<EvalSegment>, EvalError>> = sessions
        .par_iter()
        .map(|s| {
            let mut segs = make_eval_segments(s, cfg)?;
            let own_truth: Vec<GroundTruthEvent> =
                truth.iter().filter(|t| t.session_id == s.session_id).cloned().collect();
            let own_cards: Vec<EventCard> = cards.iter().filter(|c| c.session_id == s.session_id).cloned().collect();
            let own_failed: Vec<TimeSpan> =
                failed_spans.iter().filter(|(id, _)| *id == s.session_id).map(|(_, f)| *f).collect();
            assign_truth(&mut segs, &own_truth)?;
            assign_predictions(&own_cards, &mut segs, &own_failed)?;
            Ok(segs)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_session {
        out.extend(r?);
    }
    Ok(out)
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>8} {:>6} {:>8} {:>6} {:>6} {:>6} {:>6} {:>9} {:>7} {:>7}",
            "Period", "Videos", "Segments", "Normal", "Abnormal", "TP", "FP", "TN", "FN", "Precision", "Recall", "F1"
        );
        for r in &self.rows {
            let c = r.confusion;
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>8} {:>6} {:>8} {:>6} {:>6} {:>6} {:>6} {:>9.3} {:>7.3} {:>7.3}",
                format!("{:?}", r.period),
                r.videos,
                r.segments,
                r.normal,
                r.abnormal,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                r.precision,
                r.recall,
                r.f1
            );
        }
        let _ = writeln!(out, "aggregation: {:?}", self.aggregation);
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "period", "videos", "segments", "normal", "abnormal", "tp", "fp", "tn", "fn", "precision", "recall", "f1",
            "analysis_failed",
        ])
        .expect("write to memory");
        for r in &self.rows {
            let c = r.confusion;
            w.write_record([
                format!("{:?}", r.period),
                r.videos.to_string(),
                r.segments.to_string(),
                r.normal.to_string(),
                r.abnormal.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
                format!("{:.6}", r.precision),
                format!("{:.6}", r.recall),
                format!("{:.6}", r.f1),
                r.analysis_failed.to_string(),
            ])
            .expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GpsFix;
    use crate::store::tests::card;
    use chrono::TimeZone;

    fn session(id: &str, period: Period, duration_ms: i64) -> PatrolSession {
        PatrolSession {
            session_id: id.into(),
            robot_id: format!("r-{id}"),
            robot_label: id.into(),
            period,
            video_uri: format!("{id}.mp4"),
            duration_ms,
            start_wall_clock: chrono::Utc.timestamp_opt(0, 0).unwrap(),
            gps_trace: vec![GpsFix { t_ms: 0, lat: 0.0, lon: 0.0 }],
        }
    }

    fn gt(session: &str, start: i64, end: i64, votes: Option<[bool; 3]>) -> GroundTruthEvent {
        GroundTruthEvent {
            session_id: session.into(),
            eoi_name: "Brawling".into(),
            eoi_id: Some(10),
            start_ms: start,
            end_ms: end,
            annotator_votes: votes.map(|v| v.to_vec()),
        }
    }

    #[test]
    fn eval_segments_for_25_minutes() {
        let segs = make_eval_segments(&session("s", Period::Day, 1_500_000), &EvalConfig::default()).unwrap();
        assert_eq!(segs.len(), 60);
        assert_eq!(segs.iter().filter(|s| s.span.len() == 30_000).count(), 59);
        assert_eq!(segs[59].span.start_ms, 59 * 25_000);
        assert_eq!(segs[59].span.end_ms, 1_500_000);
        assert_eq!(segs[0].number, 1);
        let one = make_eval_segments(&session("s", Period::Day, 30_000), &EvalConfig::default()).unwrap();
        assert_eq!(one.len(), 1);
        let cfg = EvalConfig { window_ms: 10_000, ..Default::default() };
        assert!(matches!(make_eval_segments(&session("s", Period::Day, 60_000), &cfg), Err(EvalError::NonStandard { .. })));
    }

    #[test]
    fn majority_votes() {
        assert_eq!(truth_label(&[true, true, false]).unwrap(), Label::Abnormal);
        assert_eq!(truth_label(&[true, false, false]).unwrap(), Label::Normal);
        assert_eq!(truth_label(&[false, false, false]).unwrap(), Label::Normal);
        assert!(matches!(truth_label(&[true, true]), Err(EvalError::VoteCount(2))));
    }

    #[test]
    fn overlap_rule() {
        let seg = TimeSpan::new(50_000, 80_000);
        assert!(counts_toward(TimeSpan::new(50_000, 80_000), seg));
        assert!(counts_toward(TimeSpan::new(79_000, 80_000), seg));
        assert!(!counts_toward(TimeSpan::new(70_000, 110_000), seg));
        assert!(counts_toward(TimeSpan::new(65_000, 110_000), seg));
        assert!(!counts_toward(TimeSpan::new(80_000, 81_000), seg));
    }

    #[test]
    fn prediction_keeps_most_severe() {
        let s = session("s", Period::Day, 100_000);
        let mut segs = make_eval_segments(&s, &EvalConfig::default()).unwrap();
        let mut urgent = card("u", "s", Some(PriorityLevel::Urgent), 50_000, 0.0);
        urgent.span = TimeSpan::new(50_000, 80_000);
        let mut emergency = card("e", "s", Some(PriorityLevel::Emergency), 60_000, 0.0);
        emergency.span = TimeSpan::new(60_000, 70_000);
        let unmatched = card("x", "s", None, 0, 0.0);
        assign_predictions(&[urgent, emergency, unmatched], &mut segs, &[TimeSpan::new(0, 10)]).unwrap();
        let seg = segs.iter().find(|s| s.span.start_ms == 50_000).unwrap();
        assert_eq!(seg.predicted, Some(Label::Abnormal));
        assert_eq!(seg.predicted_card.as_deref(), Some("e"));
        assert_eq!(segs[0].predicted, Some(Label::Normal));
        assert!(segs[0].analysis_failed);
        let other = card("o", "t", None, 0, 0.0);
        assert!(matches!(assign_predictions(&[other], &mut segs, &[]), Err(EvalError::SessionMismatch { .. })));
    }

    #[test]
    fn confusion_tally_and_metrics() {
        use Label::*;
        let seg = |t, p| EvalSegment {
            session_id: "s".into(),
            number: 1,
            span: SegmentSpan { index: 0, start_ms: 0, end_ms: 1 },
            truth: Some(t),
            predicted: Some(p),
            predicted_label: None,
            predicted_card: None,
            analysis_failed: false,
        };
        let cm = confusion(&[seg(Abnormal, Abnormal), seg(Abnormal, Normal), seg(Normal, Abnormal), seg(Normal, Normal)]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 1, tn: 1, fn_: 1 });
        assert_eq!(confusion(&[]).unwrap(), ConfusionMatrix::default());
        let mut bad = seg(Normal, Normal);
        bad.predicted = None;
        assert!(confusion(&[bad]).is_err());

        let m = metrics(&ConfusionMatrix { tp: 5, fp: 5, tn: 0, fn_: 5 });
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        assert_eq!(metrics(&ConfusionMatrix { tp: 0, fp: 3, tn: 2, fn_: 4 }), Metrics::default());
    }

    #[test]
    fn two_session_report() {
        let sessions = [session("d", Period::Day, 75_000), session("n", Period::Night, 50_000)];
        // d: segments [0,30) [25,55) [50,75); n: [0,30) [25,50)
        let truth = [
            gt("d", 0, 20_000, Some([true, true, false])),
            gt("d", 60_000, 75_000, Some([true, false, false])),
            gt("n", 30_000, 50_000, None),
        ];
        let mut c1 = card("c1", "d", Some(PriorityLevel::Urgent), 0, 0.0);
        c1.span = TimeSpan::new(5_000, 15_000);
        let mut c2 = card("c2", "d", Some(PriorityLevel::Moderate), 0, 0.0);
        c2.span = TimeSpan::new(60_000, 70_000);
        let segs = evaluate(&sessions, &[c1, c2], &truth, &[], &EvalConfig::default()).unwrap();
        assert_eq!(segs.len(), 5);
        let rep = report(&sessions, &segs, Aggregation::Micro).unwrap();
        assert_eq!(rep.rows.len(), 3);
        let day = &rep.rows[0];
        assert_eq!(day.confusion, ConfusionMatrix { tp: 1, fp: 1, tn: 1, fn_: 0 });
        assert_eq!((day.precision, day.recall), (0.5, 1.0));
        let night = &rep.rows[1];
        assert_eq!(night.confusion, ConfusionMatrix { tp: 0, fp: 0, tn: 1, fn_: 1 });
        let overall = &rep.rows[2];
        assert_eq!(overall.confusion, ConfusionMatrix { tp: 1, fp: 1, tn: 2, fn_: 1 });
        assert_eq!(overall.recall, 0.5);

        let macro_rep = report(&sessions, &segs, Aggregation::Macro).unwrap();
        assert_eq!(macro_rep.rows[2].precision, 0.25);

        let csv = rep.to_csv();
        assert!(csv.starts_with("period,videos,segments"));
        assert_eq!(csv.lines().count(), 4);
        assert!(rep.to_text().contains("Overall"));
    }

    #[test]
    fn day_only_and_no_abnormal() {
        let sessions = [session("d", Period::Day, 60_000)];
        let segs = evaluate(&sessions, &[], &[], &[], &EvalConfig::default()).unwrap();
        let rep = report(&sessions, &segs, Aggregation::Micro).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].confusion, rep.rows[1].confusion);
        assert_eq!(rep.rows[1].recall, 0.0);
        assert_eq!(rep.warnings.len(), 2);
        assert!(evaluate(&sessions, &[], &[gt("zz", 0, 1, None)], &[], &EvalConfig::default()).is_err());
    }
}
