//! Appearance descriptors for tracked people and vehicles: extraction on the
//! first-appearance crop, a binary verification round, and merging of
//! fragmented trajectories that belong to the same entity.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{BBox, FrameRecord, PatrolSession};
use crate::pipeline::TimeSpan;
use crate::providers::{
    check_answers, is_fallback, AttributeDescriber, DetectorTracker, ProviderError, QuestionSets,
    SimilarityScorer, OTHER, UNCLEAR,
};
use crate::taxonomy::EntityCategory;

pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("track {0}: no crop available")]
    NoCrop(String),
    #[error("track {0}: class {1:?} has no descriptor questions")]
    UnsupportedClass(String, EntityCategory),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame_index: u64,
    pub t_ms: i64,
    pub bbox: BBox,
    pub crop_uri: Option<String>,
}

/// Time-ordered detections of one entity under a stable track id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub session_id: String,
    pub track_id: String,
    pub entity_class: EntityCategory,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn entity_id(&self) -> String {
        format!("{}/{}", self.session_id, self.track_id)
    }

    pub fn span(&self) -> TimeSpan {
        let start = self.points.first().map_or(0, |p| p.t_ms);
        let end = self.points.last().map_or(0, |p| p.t_ms);
        TimeSpan::new(start, end + 1)
    }

    pub fn first_crop(&self) -> Option<&TrackPoint> {
        self.points.iter().find(|p| p.crop_uri.is_some())
    }

    /// Crop of the detection with the largest box; earliest wins ties.
    pub fn max_area_crop(&self) -> Option<&TrackPoint> {
        self.points
            .iter()
            .filter(|p| p.crop_uri.is_some())
            .fold(None, |best: Option<&TrackPoint>, p| match best {
                Some(b) if b.bbox.area() >= p.bbox.area() => Some(b),
                _ => Some(p),
            })
    }
}

/// Groups a session's detections into tracks, ordered by track id. A track's
/// class is the class of its first detection.
pub fn collect_tracks(session_id: &str, frames: &[FrameRecord]) -> Vec<Track> {
    let mut tracks: BTreeMap<String, Track> = BTreeMap::new();
    for f in frames {
        for d in &f.detections {
            let track = tracks.entry(d.track_id.clone()).or_insert_with(|| Track {
                session_id: session_id.to_owned(),
                track_id: d.track_id.clone(),
                entity_class: d.class_label,
                points: Vec::new(),
            });
            track.points.push(TrackPoint {
                frame_index: f.frame_index,
                t_ms: f.t_ms,
                bbox: d.bbox,
                crop_uri: d.crop_uri.clone(),
            });
        }
    }
    tracks.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Appearance {
    pub session_id: String,
    pub track_id: String,
    pub span: TimeSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorProfile {
    pub entity_id: String,
    pub entity_class: EntityCategory,
    pub attributes: BTreeMap<String, String>,
    pub representative_crop: String,
    pub representative_area: f64,
    pub first_appearance_crop: String,
    pub first_seen_session: String,
    pub first_seen_ms: i64,
    pub sessions: Vec<String>,
    pub track_ids: Vec<String>,
    /// Entity ids of the single-track profiles this one was built from.
    pub merged_from: Vec<String>,
    pub appearances: Vec<Appearance>,
    /// Binary re-check answers by attribute.
    #[serde(default)]
    pub verification: BTreeMap<String, String>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl DescriptorProfile {
    pub fn attribute(&self, name: &str) -> &str {
        self.attributes.get(name).map_or(UNCLEAR, String::as_str)
    }
}

/// Attributes that must agree (and be specific) before two trajectories are
/// compared for merging.
pub fn merge_keys(class: EntityCategory) -> &'static [&'static str] {
    match class {
        EntityCategory::Person => &["shirt_color", "pants_color"],
        EntityCategory::Vehicle => &["body_color"],
        EntityCategory::Other => &[],
    }
}

pub fn extract_profile(
    track: &Track,
    describer: &dyn AttributeDescriber,
    questions: &QuestionSets,
) -> Result<DescriptorProfile, DescriptorError> {
    let entity_id = track.entity_id();
    let qs = questions.for_class(track.entity_class);
    if qs.is_empty() {
        return Err(DescriptorError::UnsupportedClass(entity_id, track.entity_class));
    }
    let first = track
        .first_crop()
        .ok_or_else(|| DescriptorError::NoCrop(entity_id.clone()))?;
    let rep = track.max_area_crop().unwrap_or(first);
    let first_crop = first.crop_uri.clone().unwrap_or_default();

    let answers = describer.describe_attributes(&first_crop, track.entity_class, qs)?;
    check_answers(qs, &answers)?;
    let attributes = answers
        .into_iter()
        .map(|a| {
            let v = if a.answer.trim().is_empty() { UNCLEAR.to_owned() } else { a.answer };
            (a.question_id, v)
        })
        .collect();

    Ok(DescriptorProfile {
        entity_id: entity_id.clone(),
        entity_class: track.entity_class,
        attributes,
        representative_crop: rep.crop_uri.clone().unwrap_or_default(),
        representative_area: rep.bbox.area(),
        first_appearance_crop: first_crop,
        first_seen_session: track.session_id.clone(),
        first_seen_ms: track.points.first().map_or(0, |p| p.t_ms),
        sessions: vec![track.session_id.clone()],
        track_ids: vec![entity_id.clone()],
        merged_from: vec![entity_id],
        appearances: vec![Appearance {
            session_id: track.session_id.clone(),
            track_id: track.track_id.clone(),
            span: track.span(),
        }],
        verification: BTreeMap::new(),
        flags: Vec::new(),
    })
}

/// Re-asks every specific attribute as a yes/no question on the
/// representative crop. "no" demotes the value to "other"; a failed call
/// demotes it to "unclear" and flags the attribute.
pub fn verify_profile(
    mut profile: DescriptorProfile,
    describer: &dyn AttributeDescriber,
    questions: &QuestionSets,
) -> DescriptorProfile {
    let class = profile.entity_class;
    for q in questions.for_class(class) {
        let Some(value) = profile.attributes.get(&q.id).cloned() else {
            continue;
        };
        if is_fallback(&value) {
            continue;
        }
        let check = q.verification(&value);
        let reply = describer
            .describe_attributes(&profile.representative_crop, class, std::slice::from_ref(&check))
            .and_then(|answers| {
                check_answers(std::slice::from_ref(&check), &answers)?;
                Ok(answers.into_iter().next().unwrap().answer)
            });
        match reply {
            Ok(answer) => {
                if answer == "no" {
                    profile.attributes.insert(q.id.clone(), OTHER.to_owned());
                }
                profile.verification.insert(q.id.clone(), answer);
            }
            Err(e) => {
                profile.attributes.insert(q.id.clone(), UNCLEAR.to_owned());
                profile.flags.push(format!("verify_failed:{}: {e}", q.id));
            }
        }
    }
    profile
}

/// Extracts and verifies every person/vehicle track with a crop. Tracks of
/// other classes or without crops are skipped and reported.
pub fn build_profiles(
    tracks: &[Track],
    describer: &dyn AttributeDescriber,
    questions: &QuestionSets,
) -> (Vec<DescriptorProfile>, Vec<DescriptorError>) {
    let results: Vec<Result<DescriptorProfile, DescriptorError>> = tracks
        .par_iter()
        .filter(|t| t.entity_class != EntityCategory::Other)
        .map(|t| extract_profile(t, describer, questions).map(|p| verify_profile(p, describer, questions)))
        .collect();
    let mut profiles = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(p) => profiles.push(p),
            Err(e) => skipped.push(e),
        }
    }
    profiles.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    (profiles, skipped)
}

/// Value with the strictly greatest count; ties (and empty input) give
/// "unclear".
pub fn resolve_by_majority<S: AsRef<str>>(values: &[S]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v.as_ref()).or_insert(0) += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    let mut tied = false;
    for (v, n) in counts {
        match best {
            Some((_, b)) if n == b => tied = true,
            Some((_, b)) if n < b => {}
            _ => {
                best = Some((v, n));
                tied = false;
            }
        }
    }
    match best {
        Some((v, _)) if !tied => v.to_owned(),
        _ => UNCLEAR.to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub a: String,
    pub b: String,
    pub similarity: f64,
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub profiles: Vec<DescriptorProfile>,
    pub decisions: Vec<MergeDecision>,
}

fn is_candidate_pair(a: &DescriptorProfile, b: &DescriptorProfile) -> bool {
    a.entity_class == b.entity_class
        && merge_keys(a.entity_class).iter().all(|k| {
            let (va, vb) = (a.attribute(k), b.attribute(k));
            va == vb && !is_fallback(va)
        })
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index as root keeps roots stable under input order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

fn combine_members(members: &[&DescriptorProfile]) -> DescriptorProfile {
    if members.len() == 1 {
        return members[0].clone();
    }
    let names: BTreeSet<&str> = members
        .iter()
        .flat_map(|m| m.attributes.keys().map(String::as_str))
        .collect();
    let mut attributes = BTreeMap::new();
    let mut verification = BTreeMap::new();
    for name in names {
        let values: Vec<&str> = members.iter().map(|m| m.attribute(name)).collect();
        let value = resolve_by_majority(&values);
        if !is_fallback(&value) {
            verification.insert(name.to_owned(), "yes".to_owned());
        }
        attributes.insert(name.to_owned(), value);
    }
    // members are sorted by entity_id, so strict comparisons break ties
    // toward the smallest id
    let rep = members
        .iter()
        .fold(members[0], |b, m| if m.representative_area > b.representative_area { m } else { b });
    let first = members.iter().fold(members[0], |b, m| {
        if (m.first_seen_ms, &m.first_seen_session) < (b.first_seen_ms, &b.first_seen_session) {
            m
        } else {
            b
        }
    });
    let collect = |f: fn(&DescriptorProfile) -> &Vec<String>| {
        let set: BTreeSet<String> = members.iter().flat_map(|m| f(m).iter().cloned()).collect();
        set.into_iter().collect::<Vec<_>>()
    };
    let mut appearances: Vec<Appearance> =
        members.iter().flat_map(|m| m.appearances.iter().cloned()).collect();
    appearances.sort();
    DescriptorProfile {
        entity_id: members[0].entity_id.clone(),
        entity_class: members[0].entity_class,
        attributes,
        representative_crop: rep.representative_crop.clone(),
        representative_area: rep.representative_area,
        first_appearance_crop: first.first_appearance_crop.clone(),
        first_seen_session: first.first_seen_session.clone(),
        first_seen_ms: first.first_seen_ms,
        sessions: collect(|m| &m.sessions),
        track_ids: collect(|m| &m.track_ids),
        merged_from: collect(|m| &m.merged_from),
        appearances,
        verification,
        flags: collect(|m| &m.flags),
    }
}

/// Merges trajectories of the same entity. Candidate pairs share a class and
/// specific, equal key descriptors; a pair merges when its representative
/// crops score strictly above `threshold`. Merges are closed transitively and
/// every compared pair is recorded as a decision.
pub fn merge_trajectories(
    profiles: &[DescriptorProfile],
    similarity: &dyn SimilarityScorer,
    threshold: f64,
) -> Result<MergeOutcome, ProviderError> {
    let mut sorted: Vec<&DescriptorProfile> = profiles.iter().collect();
    sorted.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));

    let mut sets = DisjointSet((0..sorted.len()).collect());
    let mut decisions = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            let (a, b) = (sorted[i], sorted[j]);
            if !is_candidate_pair(a, b) {
                continue;
            }
            let score = similarity.similarity(&a.representative_crop, &b.representative_crop)?;
            let merged = score > threshold;
            if merged {
                sets.union(i, j);
            }
            decisions.push(MergeDecision {
                a: a.entity_id.clone(),
                b: b.entity_id.clone(),
                similarity: score,
                merged,
            });
        }
    }

    let mut components: BTreeMap<usize, Vec<&DescriptorProfile>> = BTreeMap::new();
    for (i, p) in sorted.iter().enumerate() {
        let root = sets.find(i);
        components.entry(root).or_default().push(p);
    }
    let mut merged: Vec<DescriptorProfile> =
        components.values().map(|m| combine_members(m)).collect();
    merged.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    Ok(MergeOutcome {
        profiles: merged,
        decisions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescribeOutcome {
    pub profiles: Vec<DescriptorProfile>,
    pub decisions: Vec<MergeDecision>,
    /// Sessions or tracks left out, with the reason.
    pub skipped: Vec<String>,
}

/// Profiles for every track of every session, merged across sessions.
pub fn describe_sessions(
    sessions: &[PatrolSession],
    tracker: &dyn DetectorTracker,
    describer: &dyn AttributeDescriber,
    similarity: &dyn SimilarityScorer,
    questions: &QuestionSets,
    threshold: f64,
) -> Result<DescribeOutcome, ProviderError> {
    let mut profiles = Vec::new();
    let mut skipped = Vec::new();
    for s in sessions {
        let frames = match tracker.detect_and_track(s) {
            Ok(f) => f,
            Err(e) => {
                skipped.push(format!("session {}: {e}", s.session_id));
                continue;
            }
        };
        let (mut p, errs) = build_profiles(&collect_tracks(&s.session_id, &frames), describer, questions);
        profiles.append(&mut p);
        skipped.extend(errs.into_iter().map(|e| e.to_string()));
    }
    let merged = merge_trajectories(&profiles, similarity, threshold)?;
    Ok(DescribeOutcome {
        profiles: merged.profiles,
        decisions: merged.decisions,
        skipped,
    })
}

pub fn write_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_profiles_jsonl(text: &str) -> Result<Vec<DescriptorProfile>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
