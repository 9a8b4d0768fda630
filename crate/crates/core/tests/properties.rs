use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use mrvs_core::descriptors::resolve_by_majority;
use mrvs_core::eval::{confusion, metrics, ConfusionMatrix, EvalSegment, Label};
use mrvs_core::ingest::{FrameRecord, GpsFix, PatrolSession, Period};
use mrvs_core::pipeline::{
    merge_duplicate_cards, segment_video, CardEoi, ObjectAwareFrame, CardStatus, EventCard, Keyframe, Pose, SegmentSpan, TimeSpan,
};
use mrvs_core::providers::Confidence;
use mrvs_core::search::{build_index, DescriptorQuery};
use mrvs_core::store::{EventFilter, EventStore, GeoBox};
use mrvs_core::taxonomy::EntityCategory;
use mrvs_core::PriorityLevel;

fn session(duration_ms: i64) -> PatrolSession {
    PatrolSession {
        session_id: "s".into(),
        robot_id: "r".into(),
        robot_label: "r".into(),
        period: Period::Day,
        video_uri: "s.mp4".into(),
        duration_ms,
        start_wall_clock: Utc.timestamp_opt(1_714_000_000, 0).unwrap(),
        gps_trace: vec![GpsFix { t_ms: 0, lat: 1.0, lon: 2.0 }],
    }
}

fn card(i: usize, start: i64, len: i64, priority: Option<PriorityLevel>, lat: f64) -> EventCard {
    EventCard {
        card_id: format!("c{i:03}"),
        session_id: "s".into(),
        robot_id: "r".into(),
        eoi: match priority {
            Some(_) => CardEoi::Matched { id: 10, name: "Brawling".into(), entity_category: EntityCategory::Person },
            None => CardEoi::Unmatched { label_text: "odd".into() },
        },
        label_text: "l".into(),
        priority,
        description: format!("d{i}"),
        rationale: String::new(),
        confidence: Confidence::Medium,
        span: TimeSpan::new(start, start + len),
        keyframe: Keyframe { frame_index: 0, t_ms: start },
        pose: Pose { lat, lon: 0.0 },
        status: CardStatus::New,
        created_at: Utc.timestamp_opt(0, 0).unwrap(),
        segments: vec![],
    }
}

fn frames(until_ms: i64) -> Vec<ObjectAwareFrame> {
    (0..until_ms / 500)
        .map(|i| ObjectAwareFrame::new(FrameRecord { frame_index: i as u64, t_ms: i * 500, detections: vec![] }))
        .collect()
}

fn priority() -> impl Strategy<Value = Option<PriorityLevel>> {
    prop_oneof![Just(None), (0usize..4).prop_map(|i| Some(PriorityLevel::ALL[i]))]
}

proptest! {
    #[test]
    fn segments_cover_the_video_without_tail_limit(duration in 1i64..20_000, window in 1i64..5_000, stride_frac in 1i64..=100) {
        let window = window.min(duration);
        let stride = (window * stride_frac / 100).max(1);
        let segs = segment_video(duration, window, stride, 0).unwrap();
        prop_assert_eq!(segs[0].start_ms, 0);
        prop_assert_eq!(segs.last().unwrap().end_ms, duration);
        for w in segs.windows(2) {
            prop_assert!(w[1].start_ms <= w[0].end_ms);
            prop_assert_eq!(w[1].index, w[0].index + 1);
        }
        prop_assert!(segs.iter().all(|s| s.end_ms - s.start_ms <= window && s.end_ms <= duration));
    }

    #[test]
    fn tail_limit_only_removes_short_segments(duration in 1i64..20_000, window in 1i64..5_000, stride in 1i64..5_000, tail in 0i64..5_000) {
        let window = window.min(duration);
        let stride = stride.min(window);
        let tail = tail.min(window);
        let all = segment_video(duration, window, stride, 0).unwrap();
        let kept = segment_video(duration, window, stride, tail).unwrap();
        let expect: Vec<_> = all.into_iter().filter(|s| s.end_ms - s.start_ms >= tail).collect();
        prop_assert_eq!(kept, expect);
    }

    #[test]
    fn confusion_tally_accounts_for_every_segment(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
        let segs: Vec<EvalSegment> = pairs
            .iter()
            .enumerate()
            .map(|(i, (t, p))| EvalSegment {
                session_id: "s".into(),
                number: i as u32 + 1,
                span: SegmentSpan { index: i as u32, start_ms: i as i64 * 25_000, end_ms: i as i64 * 25_000 + 30_000 },
                truth: Some(if *t { Label::Abnormal } else { Label::Normal }),
                predicted: Some(if *p { Label::Abnormal } else { Label::Normal }),
                predicted_label: None,
                predicted_card: None,
                analysis_failed: false,
            })
            .collect();
        let cm = confusion(&segs).unwrap();
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        prop_assert_eq!(cm.tp, pairs.iter().filter(|(t, p)| *t && *p).count() as u64);
        prop_assert_eq!(cm.tp + cm.fn_, pairs.iter().filter(|(t, _)| *t).count() as u64);
    }

    #[test]
    fn f1_lies_between_precision_and_recall(tp in 0u64..10_000, fp in 0u64..10_000, fn_ in 0u64..10_000, tn in 0u64..10_000) {
        let m = metrics(&ConfusionMatrix { tp, fp, tn, fn_ });
        for v in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if tp > 0 {
            let lo = m.precision.min(m.recall);
            let hi = m.precision.max(m.recall);
            prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
        } else {
            prop_assert_eq!(m.f1, 0.0);
        }
    }

    #[test]
    fn majority_returns_an_input_value_or_unclear(values in prop::collection::vec(prop::sample::select(vec!["red", "blue", "green", "other"]), 0..12)) {
        let got = resolve_by_majority(&values);
        prop_assert!(got == "unclear" || values.contains(&got.as_str()));
        let mut rev = values.clone();
        rev.reverse();
        prop_assert_eq!(resolve_by_majority(&rev), got);
    }

    #[test]
    fn merged_cards_cover_inputs_and_never_touch(spans in prop::collection::vec((0i64..100, 1i64..10), 1..15), seed in any::<u64>()) {
        let cards: Vec<EventCard> = spans.iter().enumerate().map(|(i, (s, l))| card(i, s * 1000, l * 1000, Some(PriorityLevel::Urgent), 0.0)).collect();
        let mut shuffled = cards.clone();
        let n = shuffled.len();
        shuffled.swap(0, (seed as usize) % n);
        let fs = frames(200_000);
        let merged = merge_duplicate_cards(cards.clone(), &session(200_000), &fs).unwrap();
        prop_assert_eq!(&merge_duplicate_cards(shuffled, &session(200_000), &fs).unwrap(), &merged);
        for w in merged.windows(2) {
            prop_assert!(w[0].span.end_ms < w[1].span.start_ms);
        }
        for c in &cards {
            prop_assert!(merged.iter().any(|m| m.span.start_ms <= c.span.start_ms && c.span.end_ms <= m.span.end_ms));
        }
    }

    #[test]
    fn adding_an_exclusion_never_adds_results(
        profiles in prop::collection::vec((prop::sample::select(vec!["red", "blue", "unclear"]), prop::sample::select(vec!["black", "blue", "other"])), 1..20),
        shirt in prop::sample::select(vec!["red", "blue"]),
        pants in prop::sample::select(vec!["black", "blue", "other"]),
    ) {
        let ps: Vec<_> = profiles
            .iter()
            .enumerate()
            .map(|(i, (s, p))| {
                let mut prof = mrvs_core::descriptors::DescriptorProfile {
                    entity_id: format!("e{i:02}"),
                    entity_class: EntityCategory::Person,
                    attributes: Default::default(),
                    representative_crop: String::new(),
                    representative_area: 1.0,
                    first_appearance_crop: String::new(),
                    first_seen_session: "s".into(),
                    first_seen_ms: i as i64,
                    sessions: vec!["s".into()],
                    track_ids: vec![i.to_string()],
                    merged_from: vec![format!("e{i:02}")],
                    appearances: vec![],
                    verification: Default::default(),
                    flags: vec![],
                };
                prof.attributes.insert("shirt_color".into(), s.to_string());
                prof.attributes.insert("pants_color".into(), p.to_string());
                prof
            })
            .collect();
        let idx = build_index(ps).unwrap();
        let base = DescriptorQuery::new(EntityCategory::Person).include("shirt_color", shirt);
        let wide: BTreeSet<String> = idx.query(&base).unwrap().into_iter().map(|m| m.profile.entity_id).collect();
        let narrow: BTreeSet<String> = idx.query(&base.exclude("pants_color", pants)).unwrap().into_iter().map(|m| m.profile.entity_id).collect();
        prop_assert!(narrow.is_subset(&wide));
    }

    #[test]
    fn store_round_trips_through_disk(specs in prop::collection::vec((0i64..50, 1i64..5, priority(), -10.0f64..10.0), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        let cards: Vec<EventCard> = specs.iter().enumerate().map(|(i, (s, l, p, lat))| card(i, s * 1000, l * 1000, *p, *lat)).collect();
        {
            let mut store = EventStore::open(&path).unwrap();
            store.put_sessions(&[session(100_000)]).unwrap();
            store.put_cards(&cards).unwrap();
        }
        let reopened = EventStore::open(&path).unwrap();
        prop_assert_eq!(reopened.card_count(), cards.len());
        let all = reopened.query_events(&EventFilter::default());
        for w in all.windows(2) {
            let key = |c: &EventCard| (c.priority.map_or(u8::MAX, |p| p.ordinal()), c.span.start_ms);
            prop_assert!(key(&w[0]) <= key(&w[1]));
        }
        let everywhere = GeoBox::new(-90.0, -180.0, 90.0, 180.0).unwrap();
        prop_assert_eq!(reopened.query_region(&everywhere, &EventFilter::default()).len(), cards.len());
    }
}
