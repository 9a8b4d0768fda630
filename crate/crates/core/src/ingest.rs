//! Patrol-session manifests, detection sidecars, GPS traces and ground-truth
//! annotations.
//!
//! All times are integer milliseconds since the start of the session video.
//! `start_wall_clock` anchors each session on the shared UTC clock.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{EntityCategory, Taxonomy};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("session {session_id}: field `{field}`: {reason}")]
    Invalid {
        session_id: String,
        field: String,
        reason: String,
    },
    #[error("{path}: line {line}: {reason}")]
    Line {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("malformed document: {0}")]
    Parse(String),
    #[error("session {0} has an empty GPS trace")]
    EmptyGpsTrace(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Period {
    Day,
    Night,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Period::Day => "Day",
            Period::Night => "Night",
        })
    }
}

impl std::str::FromStr for Period {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "day" => Ok(Period::Day),
            "night" => Ok(Period::Night),
            _ => Err(format!("unknown period {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub t_ms: i64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatrolSession {
    pub session_id: String,
    pub robot_id: String,
    /// Location-based display name of the robot ("North Lot"), not a code.
    pub robot_label: String,
    pub period: Period,
    pub video_uri: String,
    pub duration_ms: i64,
    pub start_wall_clock: DateTime<Utc>,
    pub gps_trace: Vec<GpsFix>,
}

impl PatrolSession {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |field: &str, reason: String| IngestError::Invalid {
            session_id: self.session_id.clone(),
            field: field.to_owned(),
            reason,
        };
        if self.session_id.trim().is_empty() {
            return Err(bad("session_id", "must be nonempty".into()));
        }
        if self.duration_ms <= 0 {
            return Err(bad(
                "duration_ms",
                format!("must be positive, got {}", self.duration_ms),
            ));
        }
        let mut prev: Option<i64> = None;
        for (i, fix) in self.gps_trace.iter().enumerate() {
            let field = format!("gps_trace[{i}]");
            if !(0..=self.duration_ms).contains(&fix.t_ms) {
                return Err(bad(
                    &format!("{field}.t_ms"),
                    format!("{} outside [0, {}]", fix.t_ms, self.duration_ms),
                ));
            }
            if prev.is_some_and(|p| fix.t_ms <= p) {
                return Err(bad(&format!("{field}.t_ms"), "timestamps must strictly increase".into()));
            }
            if !(-90.0..=90.0).contains(&fix.lat) {
                return Err(bad(&format!("{field}.lat"), format!("{} outside [-90, 90]", fix.lat)));
            }
            if !(-180.0..=180.0).contains(&fix.lon) {
                return Err(bad(&format!("{field}.lon"), format!("{} outside [-180, 180]", fix.lon)));
            }
            prev = Some(fix.t_ms);
        }
        Ok(())
    }

    /// Robot position at `t_ms`, linearly interpolated in degrees between the
    /// bracketing fixes and clamped to the first/last fix outside the trace.
    pub fn interpolate_pose(&self, t_ms: i64) -> Result<(f64, f64), IngestError> {
        interpolate_pose(self, t_ms)
    }
}

pub fn interpolate_pose(session: &PatrolSession, t_ms: i64) -> Result<(f64, f64), IngestError> {
    let trace = &session.gps_trace;
    let (first, last) = match (trace.first(), trace.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(IngestError::EmptyGpsTrace(session.session_id.clone())),
    };
    if t_ms <= first.t_ms {
        return Ok((first.lat, first.lon));
    }
    if t_ms >= last.t_ms {
        return Ok((last.lat, last.lon));
    }
    // first fix with t > t_ms; exists because t_ms < last.t_ms
    let hi = trace.partition_point(|f| f.t_ms <= t_ms);
    let (a, b) = (&trace[hi - 1], &trace[hi]);
    let frac = (t_ms - a.t_ms) as f64 / (b.t_ms - a.t_ms) as f64;
    Ok((
        a.lat + (b.lat - a.lat) * frac,
        a.lon + (b.lon - a.lon) * frac,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub sessions: Vec<PatrolSession>,
}

/// Parses a manifest document. Sessions come back sorted by
/// `(period, robot_id, session_id)`.
pub fn parse_manifest(text: &str) -> Result<Vec<PatrolSession>, IngestError> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IngestError::Parse(e.to_string()))?;
    let raw_sessions = doc
        .get("sessions")
        .and_then(|s| s.as_array())
        .ok_or_else(|| IngestError::Parse("missing top-level `sessions` array".into()))?;

    let mut sessions = Vec::with_capacity(raw_sessions.len());
    for (i, raw) in raw_sessions.iter().enumerate() {
        let session_id = raw
            .get("session_id")
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{i}"));
        let session: PatrolSession =
            serde_json::from_value(raw.clone()).map_err(|e| IngestError::Invalid {
                session_id: session_id.clone(),
                field: serde_field(&e.to_string()),
                reason: e.to_string(),
            })?;
        session.validate()?;
        sessions.push(session);
    }
    let mut seen = std::collections::HashSet::new();
    for s in &sessions {
        if !seen.insert(s.session_id.as_str()) {
            return Err(IngestError::Invalid {
                session_id: s.session_id.clone(),
                field: "session_id".into(),
                reason: "duplicate session id".into(),
            });
        }
    }
    sessions.sort_by(|a, b| {
        (a.period, &a.robot_id, &a.session_id).cmp(&(b.period, &b.robot_id, &b.session_id))
    });
    Ok(sessions)
}

// serde reports missing fields as "missing field `x`"; pull out the name.
fn serde_field(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("?").to_owned()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<PatrolSession>, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_manifest(&text)
}

pub fn write_manifest(sessions: &[PatrolSession]) -> String {
    serde_json::to_string_pretty(&Manifest {
        sessions: sessions.to_vec(),
    })
    .expect("manifest serializes")
}

pub type DetectionClass = EntityCategory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x1 < self.x2 && self.y1 < self.y2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub track_id: String,
    pub class_label: DetectionClass,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_uri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub t_ms: i64,
    #[serde(default)]
    pub detections: Vec<Detection>,
}

/// Problems with a frame sequence; the index is the offending position.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameOrderError {
    #[error("frame {0}: frame_index or t_ms decreases")]
    OutOfOrder(usize),
    #[error("frame {0}: invalid bounding box for track {1}")]
    BadBox(usize, String),
}

pub fn validate_frames(frames: &[FrameRecord]) -> Result<(), FrameOrderError> {
    for (i, f) in frames.iter().enumerate() {
        if i > 0 {
            let p = &frames[i - 1];
            if f.frame_index < p.frame_index || f.t_ms < p.t_ms {
                return Err(FrameOrderError::OutOfOrder(i));
            }
        }
        if let Some(d) = f.detections.iter().find(|d| !d.bbox.is_valid()) {
            return Err(FrameOrderError::BadBox(i, d.track_id.clone()));
        }
    }
    Ok(())
}

pub fn parse_detections(text: &str, origin: &str) -> Result<Vec<FrameRecord>, IngestError> {
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let frame: FrameRecord = serde_json::from_str(line).map_err(|e| IngestError::Line {
            path: origin.to_owned(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        frames.push(frame);
    }
    validate_frames(&frames).map_err(|e| IngestError::Line {
        path: origin.to_owned(),
        line: match e {
            FrameOrderError::OutOfOrder(i) | FrameOrderError::BadBox(i, _) => i + 1,
        },
        reason: e.to_string(),
    })?;
    Ok(frames)
}

/// Reads a JSON-lines detections sidecar.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut text = String::new();
    for line in std::io::BufReader::new(file).lines() {
        text.push_str(&line.map_err(io_err(path))?);
        text.push('\n');
    }
    parse_detections(&text, &path.display().to_string())
}

/// Loads `<dir>/<session_id>.jsonl` for every session that has one.
pub fn load_detection_dir(
    dir: impl AsRef<Path>,
    sessions: &[PatrolSession],
) -> Result<HashMap<String, Vec<FrameRecord>>, IngestError> {
    let mut out = HashMap::new();
    for s in sessions {
        let path = dir.as_ref().join(format!("{}.jsonl", s.session_id));
        if path.exists() {
            out.insert(s.session_id.clone(), load_detections(&path)?);
        }
    }
    Ok(out)
}

pub fn write_detections(frames: &[FrameRecord]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frame serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub session_id: String,
    pub eoi_name: String,
    /// Taxonomy id when `eoi_name` resolves; `None` marks the row unmatched.
    pub eoi_id: Option<u8>,
    pub start_ms: i64,
    pub end_ms: i64,
    /// Per-annotator abnormal votes (a1, a2, a3) when the file carries them.
    pub annotator_votes: Option<Vec<bool>>,
}

impl GroundTruthEvent {
    pub fn is_unmatched(&self) -> bool {
        self.eoi_id.is_none()
    }
}

#[derive(Debug, Deserialize)]
struct TruthRow {
    session_id: String,
    eoi_name: String,
    start_ms: i64,
    end_ms: i64,
    #[serde(default)]
    a1: Option<u8>,
    #[serde(default)]
    a2: Option<u8>,
    #[serde(default)]
    a3: Option<u8>,
}

pub fn parse_ground_truth(
    text: &str,
    sessions: &[PatrolSession],
    taxonomy: &Taxonomy,
) -> Result<Vec<GroundTruthEvent>, IngestError> {
    let durations: HashMap<&str, i64> = sessions
        .iter()
        .map(|s| (s.session_id.as_str(), s.duration_ms))
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut events = Vec::new();
    for (i, row) in reader.deserialize::<TruthRow>().enumerate() {
        let line = i + 2;
        let bad = |reason: String| IngestError::Line {
            path: "ground truth".into(),
            line,
            reason,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let duration = *durations
            .get(row.session_id.as_str())
            .ok_or_else(|| bad(format!("unknown session_id {:?}", row.session_id)))?;
        if row.end_ms <= row.start_ms {
            return Err(bad(format!(
                "end_ms {} must exceed start_ms {}",
                row.end_ms, row.start_ms
            )));
        }
        if row.start_ms < 0 || row.end_ms > duration {
            return Err(bad(format!(
                "[{}, {}) outside session duration {duration}",
                row.start_ms, row.end_ms
            )));
        }
        let annotator_votes = match (row.a1, row.a2, row.a3) {
            (None, None, None) => None,
            (Some(a), Some(b), Some(c)) => {
                let mut votes = Vec::with_capacity(3);
                for v in [a, b, c] {
                    match v {
                        0 => votes.push(false),
                        1 => votes.push(true),
                        other => return Err(bad(format!("vote {other} is not 0 or 1"))),
                    }
                }
                Some(votes)
            }
            _ => return Err(bad("vote columns a1,a2,a3 must all be present or all empty".into())),
        };
        let eoi_id = taxonomy.classify_label(&row.eoi_name).map(|e| e.id);
        events.push(GroundTruthEvent {
            session_id: row.session_id,
            eoi_name: row.eoi_name,
            eoi_id,
            start_ms: row.start_ms,
            end_ms: row.end_ms,
            annotator_votes,
        });
    }
    events.sort_by(|a, b| (&a.session_id, a.start_ms, a.end_ms).cmp(&(&b.session_id, b.start_ms, b.end_ms)));
    Ok(events)
}

pub fn load_ground_truth(
    path: impl AsRef<Path>,
    sessions: &[PatrolSession],
    taxonomy: &Taxonomy,
) -> Result<Vec<GroundTruthEvent>, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_ground_truth(&text, sessions, taxonomy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(id: &str, period: Period, duration_ms: i64, trace: Vec<GpsFix>) -> PatrolSession {
        PatrolSession {
            session_id: id.into(),
            robot_id: format!("r-{id}"),
            robot_label: "North Lot".into(),
            period,
            video_uri: format!("file:///videos/{id}.mp4"),
            duration_ms,
            start_wall_clock: "2025-03-01T14:00:00Z".parse().unwrap(),
            gps_trace: trace,
        }
    }

    fn fix(t_ms: i64, lat: f64, lon: f64) -> GpsFix {
        GpsFix { t_ms, lat, lon }
    }

    #[test]
    fn twenty_sessions_sorted_by_period_then_robot() {
        let mut all = Vec::new();
        for i in (0..10).rev() {
            all.push(session(&format!("n{i}"), Period::Night, 1_500_000, vec![fix(0, 38.8, -77.3)]));
            all.push(session(&format!("d{i}"), Period::Day, 1_500_000, vec![fix(0, 38.8, -77.3)]));
        }
        let sessions = parse_manifest(&write_manifest(&all)).unwrap();
        assert_eq!(sessions.len(), 20);
        assert!(sessions[..10].iter().all(|s| s.period == Period::Day));
        assert_eq!(sessions[0].robot_id, "r-d0");
        assert_eq!(sessions[10].robot_id, "r-n0");
    }

    #[test]
    fn empty_manifest() {
        assert!(parse_manifest(r#"{"sessions": []}"#).unwrap().is_empty());
    }

    #[test]
    fn gps_fix_past_duration_rejected() {
        let s = session("s1", Period::Day, 1000, vec![fix(0, 1.0, 1.0), fix(1001, 1.0, 1.0)]);
        let err = parse_manifest(&write_manifest(&[s])).unwrap_err();
        match err {
            IngestError::Invalid { session_id, field, .. } => {
                assert_eq!(session_id, "s1");
                assert_eq!(field, "gps_trace[1].t_ms");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_range_latitude_and_negative_duration() {
        let s = session("s2", Period::Day, 1000, vec![fix(0, 91.0, 1.0)]);
        let err = parse_manifest(&write_manifest(&[s])).unwrap_err();
        assert!(err.to_string().contains("gps_trace[0].lat"), "{err}");

        let s = session("s3", Period::Day, -5, vec![]);
        let err = parse_manifest(&write_manifest(&[s])).unwrap_err();
        assert!(err.to_string().contains("s3") && err.to_string().contains("duration_ms"));
    }

    #[test]
    fn missing_field_names_session_and_field() {
        let text = r#"{"sessions":[{"session_id":"s9","robot_id":"r","robot_label":"x","period":"Day",
            "video_uri":"v","start_wall_clock":"2025-01-01T00:00:00Z","gps_trace":[]}]}"#;
        match parse_manifest(text).unwrap_err() {
            IngestError::Invalid { session_id, field, .. } => {
                assert_eq!(session_id, "s9");
                assert_eq!(field, "duration_ms");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn interpolation_midpoint_and_clamps() {
        let s = session("s", Period::Day, 5000, vec![fix(0, 10.0, 20.0), fix(1000, 10.0, 20.001)]);
        let (lat, lon) = s.interpolate_pose(500).unwrap();
        assert_eq!(lat, 10.0);
        assert!((lon - 20.0005).abs() < 1e-12);
        assert_eq!(s.interpolate_pose(0).unwrap(), (10.0, 20.0));
        assert_eq!(s.interpolate_pose(4000).unwrap(), (10.0, 20.001));
    }

    #[test]
    fn interpolation_needs_a_fix() {
        let s = session("s", Period::Day, 5000, vec![]);
        assert!(matches!(s.interpolate_pose(0), Err(IngestError::EmptyGpsTrace(_))));
    }

    #[test]
    fn ground_truth_parse_and_flags() {
        let t = Taxonomy::bundled();
        let sessions = vec![session("s1", Period::Day, 120_000, vec![fix(0, 0.0, 0.0)])];
        let text = "session_id,eoi_name,start_ms,end_ms\n\
                    s1,Robery,90000,95000\n\
                    s1,Robbery,60000,75000\n\
                    s1,Assault,70000,80000\n";
        let events = parse_ground_truth(text, &sessions, &t).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].eoi_name, "Robbery");
        assert_eq!(events[0].end_ms - events[0].start_ms, 15_000);
        assert_eq!(events[0].eoi_id, Some(3));
        assert!(events[2].is_unmatched());
        assert!(events.iter().all(|e| e.annotator_votes.is_none()));
    }

    #[test]
    fn ground_truth_errors() {
        let t = Taxonomy::bundled();
        let sessions = vec![session("s1", Period::Day, 120_000, vec![fix(0, 0.0, 0.0)])];
        let e = parse_ground_truth("session_id,eoi_name,start_ms,end_ms\ns1,Arson,5,5\n", &sessions, &t);
        assert!(e.unwrap_err().to_string().contains("must exceed"));
        let e = parse_ground_truth("session_id,eoi_name,start_ms,end_ms\nzz,Arson,5,9\n", &sessions, &t);
        assert!(e.unwrap_err().to_string().contains("unknown session_id"));
        let e = parse_ground_truth("session_id,eoi_name,start_ms,end_ms\ns1,Arson,5,130000\n", &sessions, &t);
        assert!(e.unwrap_err().to_string().contains("outside session duration"));
    }

    #[test]
    fn ground_truth_votes() {
        let t = Taxonomy::bundled();
        let sessions = vec![session("s1", Period::Day, 120_000, vec![fix(0, 0.0, 0.0)])];
        let text = "session_id,eoi_name,start_ms,end_ms,a1,a2,a3\ns1,Arson,0,30000,1,0,1\n";
        let events = parse_ground_truth(text, &sessions, &t).unwrap();
        assert_eq!(events[0].annotator_votes, Some(vec![true, false, true]));
        let text = "session_id,eoi_name,start_ms,end_ms,a1,a2,a3\ns1,Arson,0,30000,1,2,1\n";
        assert!(parse_ground_truth(text, &sessions, &t).is_err());
    }

    #[test]
    fn sidecar_ordering() {
        let ok = "{\"frame_index\":0,\"t_ms\":0,\"detections\":[]}\n\
                  {\"frame_index\":1,\"t_ms\":40,\"detections\":[{\"track_id\":\"a\",\"class_label\":\"Person\",\"bbox\":{\"x1\":0,\"y1\":0,\"x2\":5,\"y2\":9}}]}\n";
        assert_eq!(parse_detections(ok, "t").unwrap().len(), 2);
        let bad = "{\"frame_index\":0,\"t_ms\":80}\n{\"frame_index\":1,\"t_ms\":40}\n";
        let err = parse_detections(bad, "t").unwrap_err();
        assert!(matches!(err, IngestError::Line { line: 2, .. }), "{err}");
    }
}
