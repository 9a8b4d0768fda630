//! Spatiotemporal event store and team workspace, persisted as one JSON file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{PatrolSession, Period};
use crate::pipeline::{CardStatus, EventCard, TimeSpan};
use crate::taxonomy::{EntityCategory, PriorityLevel};

const PALETTE_JSON: &str = include_str!("../assets/palette.json");

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("card {0:?} appears twice in the batch")]
    DuplicateInBatch(String),
    #[error("unknown card {0:?}")]
    UnknownCard(String),
    #[error("unknown workspace item {0:?}")]
    UnknownItem(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("user {actor:?} may not modify item {item_id:?}")]
    Forbidden { actor: String, item_id: String },
    #[error("inverted box: lat [{lat_min}, {lat_max}], lon [{lon_min}, {lon_max}]")]
    InvertedBox {
        lat_min: f64,
        lon_min: f64,
        lat_max: f64,
        lon_max: f64,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{context}: {reason}")]
    Parse { context: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Investigator,
    Supervisor,
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "investigator" => Ok(Role::Investigator),
            "supervisor" => Ok(Role::Supervisor),
            _ => Err(format!("unknown role {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub user_id: String,
    pub team: String,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    Personal,
    Team,
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "personal" => Ok(Scope::Personal),
            "team" => Ok(Scope::Team),
            _ => Err(format!("unknown scope {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub actor: String,
    pub action: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceItem {
    pub item_id: String,
    pub card_id: String,
    pub owner: String,
    pub team: String,
    pub scope: Scope,
    pub note: String,
    pub status: CardStatus,
    pub assignee: Option<String>,
    /// Carried for agencies that require a case reference; not enforced.
    #[serde(default)]
    pub case_number: Option<String>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventFilter {
    #[serde(default)]
    pub time_range: Option<(i64, i64)>,
    #[serde(default)]
    pub sessions: Option<BTreeSet<String>>,
    #[serde(default)]
    pub priorities: Option<BTreeSet<PriorityLevel>>,
    #[serde(default)]
    pub eoi_types: Option<BTreeSet<u8>>,
    #[serde(default)]
    pub statuses: Option<BTreeSet<CardStatus>>,
    #[serde(default)]
    pub period: Option<Period>,
}

impl EventFilter {
    /// Conjunction of the set constraints. A time range keeps cards whose
    /// span overlaps it; period needs the card's session to be registered.
    pub fn matches(&self, card: &EventCard, session_period: Option<Period>) -> bool {
        if let Some((s, e)) = self.time_range {
            if card.span.overlap(&TimeSpan::new(s, e)) <= 0 {
                return false;
            }
        }
        if let Some(set) = &self.sessions {
            if !set.contains(&card.session_id) {
                return false;
            }
        }
        if let Some(set) = &self.priorities {
            if !card.priority.is_some_and(|p| set.contains(&p)) {
                return false;
            }
        }
        if let Some(set) = &self.eoi_types {
            if !card.eoi.id().is_some_and(|id| set.contains(&id)) {
                return false;
            }
        }
        if let Some(set) = &self.statuses {
            if !set.contains(&card.status) {
                return false;
            }
        }
        if let Some(p) = self.period {
            if session_period != Some(p) {
                return false;
            }
        }
        true
    }

    fn admits_session(&self, session_id: &str, period: Option<Period>) -> bool {
        self.sessions.as_ref().is_none_or(|s| s.contains(session_id))
            && self.period.is_none_or(|p| period == Some(p))
    }
}

/// Priority ordinal (unclassified last), then span start, then card id.
pub fn card_order(a: &EventCard, b: &EventCard) -> std::cmp::Ordering {
    let rank = |c: &EventCard| c.priority.map_or(u8::MAX, PriorityLevel::ordinal);
    rank(a)
        .cmp(&rank(b))
        .then(a.span.start_ms.cmp(&b.span.start_ms))
        .then_with(|| a.card_id.cmp(&b.card_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub lat_min: f64,
    pub lon_min: f64,
    pub lat_max: f64,
    pub lon_max: f64,
}

impl GeoBox {
    pub fn new(lat_min: f64, lon_min: f64, lat_max: f64, lon_max: f64) -> Result<GeoBox, StoreError> {
        let nan = [lat_min, lon_min, lat_max, lon_max].iter().any(|v| v.is_nan());
        if nan || lat_min > lat_max || lon_min > lon_max {
            return Err(StoreError::InvertedBox {
                lat_min,
                lon_min,
                lat_max,
                lon_max,
            });
        }
        Ok(GeoBox {
            lat_min,
            lon_min,
            lat_max,
            lon_max,
        })
    }

    /// Parses `lat_min,lon_min,lat_max,lon_max`.
    pub fn parse(text: &str) -> Result<GeoBox, StoreError> {
        let parts: Result<Vec<f64>, _> = text.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match parts.as_deref() {
            Ok([a, b, c, d]) => GeoBox::new(*a, *b, *c, *d),
            _ => Err(StoreError::Parse {
                context: "bbox".into(),
                reason: format!("expected four comma-separated numbers, got {text:?}"),
            }),
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPin {
    pub card: EventCard,
    pub icon: EntityCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette(BTreeMap<String, String>);

impl Palette {
    pub fn bundled() -> Palette {
        Palette::from_json_str(PALETTE_JSON).expect("bundled palette is valid")
    }

    /// Needs a color for every priority level and for "unclassified".
    pub fn from_json_str(text: &str) -> Result<Palette, String> {
        let map: BTreeMap<String, String> = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for key in PriorityLevel::ALL.iter().map(|p| p.as_str()).chain(["unclassified"]) {
            if !map.contains_key(key) {
                return Err(format!("palette has no color for {key}"));
            }
        }
        Ok(Palette(map))
    }

    pub fn color(&self, priority: Option<PriorityLevel>) -> &str {
        &self.0[priority.map_or("unclassified", PriorityLevel::as_str)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub card_id: String,
    pub span: TimeSpan,
    pub eoi: String,
    pub priority: Option<PriorityLevel>,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineLane {
    pub session_id: String,
    pub robot_id: String,
    pub entries: Vec<TimelineEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StoreState {
    sessions: BTreeMap<String, PatrolSession>,
    cards: BTreeMap<String, EventCard>,
    items: BTreeMap<String, WorkspaceItem>,
    users: BTreeMap<String, User>,
    next_item: u64,
}

/// Single-writer store. Every mutation is written through to the backing
/// file (when there is one) before it returns.
#[derive(Debug)]
pub struct EventStore {
    path: Option<PathBuf>,
    state: StoreState,
    palette: Palette,
}

impl Default for EventStore {
    fn default() -> Self {
        EventStore::in_memory()
    }
}

impl EventStore {
    pub fn in_memory() -> EventStore {
        EventStore {
            path: None,
            state: StoreState::default(),
            palette: Palette::bundled(),
        }
    }

    /// Opens the store at `path`, starting empty when the file is absent.
    pub fn open(path: impl AsRef<Path>) -> Result<EventStore, StoreError> {
        let path = path.as_ref().to_path_buf();
        let state = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| StoreError::Parse {
                context: path.display().to_string(),
                reason: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StoreState::default(),
            Err(source) => {
                return Err(StoreError::Io {
                    context: path.display().to_string(),
                    source,
                })
            }
        };
        Ok(EventStore {
            path: Some(path),
            state,
            palette: Palette::bundled(),
        })
    }

    pub fn with_palette(mut self, palette: Palette) -> EventStore {
        self.palette = palette;
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn persist(&self, context: impl FnOnce() -> String) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let text = serde_json::to_string(&self.state).expect("store state serializes");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|source| StoreError::Io {
                context: context(),
                source,
            })
    }

    pub fn put_sessions(&mut self, sessions: &[PatrolSession]) -> Result<usize, StoreError> {
        for s in sessions {
            self.state.sessions.insert(s.session_id.clone(), s.clone());
        }
        self.persist(|| "writing sessions".into())?;
        Ok(sessions.len())
    }

    pub fn sessions(&self) -> Vec<&PatrolSession> {
        let mut out: Vec<&PatrolSession> = self.state.sessions.values().collect();
        out.sort_by(|a, b| (a.period, &a.robot_id, &a.session_id).cmp(&(b.period, &b.robot_id, &b.session_id)));
        out
    }

    pub fn session(&self, session_id: &str) -> Option<&PatrolSession> {
        self.state.sessions.get(session_id)
    }

    /// Upserts by card id; returns the batch size.
    pub fn put_cards(&mut self, cards: &[EventCard]) -> Result<usize, StoreError> {
        let mut seen = BTreeSet::new();
        for c in cards {
            if !seen.insert(c.card_id.as_str()) {
                return Err(StoreError::DuplicateInBatch(c.card_id.clone()));
            }
        }
        for c in cards {
            self.state.cards.insert(c.card_id.clone(), c.clone());
        }
        if !cards.is_empty() {
            self.persist(|| format!("writing cards {}..", cards[0].card_id))?;
        }
        Ok(cards.len())
    }

    pub fn card_count(&self) -> usize {
        self.state.cards.len()
    }

    pub fn card(&self, card_id: &str) -> Option<&EventCard> {
        self.state.cards.get(card_id)
    }

    pub fn all_cards(&self) -> impl Iterator<Item = &EventCard> {
        self.state.cards.values()
    }

    fn period_of(&self, session_id: &str) -> Option<Period> {
        self.state.sessions.get(session_id).map(|s| s.period)
    }

    pub fn query_events(&self, filter: &EventFilter) -> Vec<EventCard> {
        let mut out: Vec<EventCard> = self
            .state
            .cards
            .values()
            .filter(|c| filter.matches(c, self.period_of(&c.session_id)))
            .cloned()
            .collect();
        out.sort_by(card_order);
        out
    }

    /// Cards passing `filter` whose pose lies in the box, bounds inclusive.
    pub fn query_region(&self, geo: &GeoBox, filter: &EventFilter) -> Vec<MapPin> {
        self.query_events(filter)
            .into_iter()
            .filter(|c| geo.contains(c.pose.lat, c.pose.lon))
            .map(|card| MapPin {
                icon: card.eoi.icon(),
                card,
            })
            .collect()
    }

    /// One lane per known session admitted by the filter's session and
    /// period constraints; entries are the cards passing the whole filter.
    pub fn timeline(&self, filter: &EventFilter) -> Vec<TimelineLane> {
        let mut lanes: BTreeMap<String, TimelineLane> = BTreeMap::new();
        for s in self.state.sessions.values() {
            if filter.admits_session(&s.session_id, Some(s.period)) {
                lanes.insert(
                    s.session_id.clone(),
                    TimelineLane {
                        session_id: s.session_id.clone(),
                        robot_id: s.robot_id.clone(),
                        entries: Vec::new(),
                    },
                );
            }
        }
        for c in self.query_events(filter) {
            let lane = lanes.entry(c.session_id.clone()).or_insert_with(|| TimelineLane {
                session_id: c.session_id.clone(),
                robot_id: c.robot_id.clone(),
                entries: Vec::new(),
            });
            lane.entries.push(TimelineEntry {
                card_id: c.card_id.clone(),
                span: c.span,
                eoi: c.eoi.display_name().to_owned(),
                priority: c.priority,
                color: self.palette.color(c.priority).to_owned(),
            });
        }
        let mut out: Vec<TimelineLane> = lanes.into_values().collect();
        for lane in &mut out {
            lane.entries
                .sort_by(|a, b| (a.span.start_ms, &a.card_id).cmp(&(b.span.start_ms, &b.card_id)));
        }
        out
    }

    pub fn add_user(&mut self, user: User) -> Result<(), StoreError> {
        let id = user.user_id.clone();
        self.state.users.insert(id.clone(), user);
        self.persist(|| format!("writing user {id}"))
    }

    pub fn user(&self, user_id: &str) -> Result<&User, StoreError> {
        self.state
            .users
            .get(user_id)
            .ok_or_else(|| StoreError::UnknownUser(user_id.to_owned()))
    }

    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.state.users.values()
    }

    pub fn item(&self, item_id: &str) -> Result<&WorkspaceItem, StoreError> {
        self.state
            .items
            .get(item_id)
            .ok_or_else(|| StoreError::UnknownItem(item_id.to_owned()))
    }

    /// Owners edit their items; team members edit shared ones; supervisors
    /// edit anything in their team.
    fn can_edit(user: &User, item: &WorkspaceItem) -> bool {
        user.user_id == item.owner
            || (user.team == item.team && (item.scope == Scope::Team || user.role == Role::Supervisor))
    }

    fn mutate(
        &mut self,
        item_id: &str,
        actor: &str,
        action: String,
        at: DateTime<Utc>,
        apply: impl FnOnce(&mut WorkspaceItem),
    ) -> Result<WorkspaceItem, StoreError> {
        let user = self.user(actor)?.clone();
        let item = self
            .state
            .items
            .get_mut(item_id)
            .ok_or_else(|| StoreError::UnknownItem(item_id.to_owned()))?;
        if !Self::can_edit(&user, item) {
            return Err(StoreError::Forbidden {
                actor: actor.to_owned(),
                item_id: item_id.to_owned(),
            });
        }
        apply(item);
        item.history.push(HistoryEntry {
            actor: actor.to_owned(),
            action,
            at,
        });
        let item = item.clone();
        if let Some(card) = self.state.cards.get_mut(&item.card_id) {
            card.status = item.status;
        }
        self.persist(|| format!("writing workspace item {item_id}"))?;
        Ok(item)
    }

    pub fn workspace_save(
        &mut self,
        card_id: &str,
        owner: &str,
        scope: Scope,
        note: &str,
        at: DateTime<Utc>,
    ) -> Result<WorkspaceItem, StoreError> {
        let user = self.user(owner)?.clone();
        if !self.state.cards.contains_key(card_id) {
            return Err(StoreError::UnknownCard(card_id.to_owned()));
        }
        self.state.next_item += 1;
        let item = WorkspaceItem {
            item_id: format!("item-{:06}", self.state.next_item),
            card_id: card_id.to_owned(),
            owner: owner.to_owned(),
            team: user.team,
            scope,
            note: note.to_owned(),
            status: CardStatus::Saved,
            assignee: None,
            case_number: None,
            history: vec![HistoryEntry {
                actor: owner.to_owned(),
                action: format!("save scope={scope:?}"),
                at,
            }],
        };
        self.state.items.insert(item.item_id.clone(), item.clone());
        if let Some(card) = self.state.cards.get_mut(card_id) {
            card.status = CardStatus::Saved;
        }
        self.persist(|| format!("writing workspace item for card {card_id}"))?;
        Ok(item)
    }

    /// Also mirrors the status onto the card. Sharing moves the item into
    /// team scope.
    pub fn workspace_set_status(
        &mut self,
        item_id: &str,
        actor: &str,
        status: CardStatus,
        at: DateTime<Utc>,
    ) -> Result<WorkspaceItem, StoreError> {
        self.mutate(item_id, actor, format!("status={status:?}"), at, |item| {
            item.status = status;
            if status == CardStatus::Shared {
                item.scope = Scope::Team;
            }
        })
    }

    pub fn workspace_annotate(
        &mut self,
        item_id: &str,
        actor: &str,
        note: &str,
        at: DateTime<Utc>,
    ) -> Result<WorkspaceItem, StoreError> {
        let note = note.to_owned();
        self.mutate(item_id, actor, "annotate".into(), at, |item| item.note = note)
    }

    pub fn workspace_assign(
        &mut self,
        item_id: &str,
        actor: &str,
        assignee: Option<&str>,
        at: DateTime<Utc>,
    ) -> Result<WorkspaceItem, StoreError> {
        if let Some(a) = assignee {
            self.user(a)?;
        }
        let assignee = assignee.map(str::to_owned);
        let action = format!("assign={}", assignee.as_deref().unwrap_or("-"));
        self.mutate(item_id, actor, action, at, |item| item.assignee = assignee)
    }

    pub fn workspace_set_case_number(
        &mut self,
        item_id: &str,
        actor: &str,
        case_number: Option<&str>,
        at: DateTime<Utc>,
    ) -> Result<WorkspaceItem, StoreError> {
        let case = case_number.map(str::to_owned);
        self.mutate(item_id, actor, "case_number".into(), at, |item| item.case_number = case)
    }

    /// Personal scope lists the viewer's own items; team scope lists the
    /// shared items of the viewer's team.
    pub fn workspace_list(
        &self,
        viewer: &str,
        scope: Scope,
        statuses: Option<&BTreeSet<CardStatus>>,
    ) -> Result<Vec<WorkspaceItem>, StoreError> {
        let user = self.user(viewer)?;
        Ok(self
            .state
            .items
            .values()
            .filter(|i| match scope {
                Scope::Personal => i.owner == user.user_id,
                Scope::Team => i.scope == Scope::Team && i.team == user.team,
            })
            .filter(|i| statuses.is_none_or(|s| s.contains(&i.status)))
            .cloned()
            .collect())
    }

    pub fn export_cards_jsonl(&self) -> String {
        jsonl(self.state.cards.values())
    }

    pub fn export_workspace_jsonl(&self) -> String {
        jsonl(self.state.items.values())
    }

    /// Loads exported dumps; items referring to unknown cards are rejected.
    pub fn import_jsonl(&mut self, cards: &str, items: &str) -> Result<(usize, usize), StoreError> {
        let cards: Vec<EventCard> = parse_lines(cards, "cards")?;
        let items: Vec<WorkspaceItem> = parse_lines(items, "workspace items")?;
        self.put_cards(&cards)?;
        for item in &items {
            if !self.state.cards.contains_key(&item.card_id) {
                return Err(StoreError::UnknownCard(item.card_id.clone()));
            }
            if let Some(n) = item
                .item_id
                .strip_prefix("item-")
                .and_then(|n| n.parse::<u64>().ok())
            {
                self.state.next_item = self.state.next_item.max(n);
            }
            self.state.items.insert(item.item_id.clone(), item.clone());
        }
        self.persist(|| "importing workspace items".into())?;
        Ok((cards.len(), items.len()))
    }
}

fn jsonl<'a, T: Serialize + 'a>(items: impl Iterator<Item = &'a T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn parse_lines<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<Vec<T>, StoreError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Parse {
                context: format!("{what} line {}", i + 1),
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::pipeline::{CardEoi, Keyframe, Pose};
    use crate::providers::Confidence;
    use chrono::TimeZone;

    pub(crate) fn card(id: &str, session: &str, priority: Option<PriorityLevel>, start: i64, lat: f64) -> EventCard {
        EventCard {
            card_id: id.into(),
            session_id: session.into(),
            robot_id: format!("r-{session}"),
            eoi: match priority {
                Some(_) => CardEoi::Matched {
                    id: 10,
                    name: "Brawling".into(),
                    entity_category: EntityCategory::Person,
                },
                None => CardEoi::Unmatched {
                    label_text: "odd thing".into(),
                },
            },
            label_text: "x".into(),
            priority,
            description: String::new(),
            rationale: String::new(),
            confidence: Confidence::Medium,
            span: TimeSpan::new(start, start + 1000),
            keyframe: Keyframe { frame_index: 0, t_ms: start },
            pose: Pose { lat, lon: 0.0 },
            status: CardStatus::New,
            created_at: Utc.timestamp_opt(0, 0).unwrap(),
            segments: vec![],
        }
    }

    fn at(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + s, 0).unwrap()
    }

    fn store() -> EventStore {
        use PriorityLevel::*;
        let mut st = EventStore::in_memory();
        st.put_cards(&[
            card("c1", "s1", Some(Urgent), 5000, 1.0),
            card("c2", "s1", Some(Emergency), 9000, 2.0),
            card("c3", "s2", None, 1000, 3.0),
            card("c4", "s2", Some(Emergency), 2000, 4.0),
        ])
        .unwrap();
        for (id, team, role) in [("ana", "t1", Role::Investigator), ("bo", "t1", Role::Investigator), ("cy", "t2", Role::Supervisor)] {
            st.add_user(User { user_id: id.into(), team: team.into(), role }).unwrap();
        }
        st
    }

    #[test]
    fn put_cards_contract() {
        let mut st = store();
        let again: Vec<EventCard> = st.all_cards().cloned().collect();
        assert_eq!(st.put_cards(&again).unwrap(), 4);
        assert_eq!(st.card_count(), 4);
        assert_eq!(st.put_cards(&[]).unwrap(), 0);
        let dup = [again[0].clone(), again[0].clone()];
        assert!(matches!(st.put_cards(&dup), Err(StoreError::DuplicateInBatch(_))));
    }

    #[test]
    fn query_order_and_filters() {
        let st = store();
        let ids = |f: &EventFilter| st.query_events(f).into_iter().map(|c| c.card_id).collect::<Vec<_>>();
        assert_eq!(ids(&EventFilter::default()), ["c4", "c2", "c1", "c3"]);
        let f = EventFilter { priorities: Some([PriorityLevel::Emergency].into()), ..Default::default() };
        assert_eq!(ids(&f), ["c4", "c2"]);
        let f = EventFilter { time_range: Some((100_000, 200_000)), ..Default::default() };
        assert!(ids(&f).is_empty());
        let f = EventFilter { time_range: Some((0, 1001)), ..Default::default() };
        assert_eq!(ids(&f), ["c3"]);
        let f = EventFilter { eoi_types: Some([10].into()), sessions: Some(["s2".to_string()].into()), ..Default::default() };
        assert_eq!(ids(&f), ["c4"]);
    }

    #[test]
    fn region_queries() {
        let st = store();
        let all = GeoBox::new(0.0, -1.0, 10.0, 1.0).unwrap();
        assert_eq!(st.query_region(&all, &EventFilter::default()).len(), 4);
        let point = GeoBox::new(3.0, 0.0, 3.0, 0.0).unwrap();
        let hits = st.query_region(&point, &EventFilter::default());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].card.card_id, "c3");
        assert_eq!(hits[0].icon, EntityCategory::Other);
        assert!(st.query_region(&GeoBox::new(50.0, 50.0, 51.0, 51.0).unwrap(), &EventFilter::default()).is_empty());
        assert!(matches!(GeoBox::new(2.0, 0.0, 1.0, 0.0), Err(StoreError::InvertedBox { .. })));
        assert_eq!(GeoBox::parse("1,2,3,4").unwrap().lon_max, 4.0);
        assert!(GeoBox::parse("1,2,3").is_err());
    }

    #[test]
    fn timeline_lanes() {
        let st = store();
        let lanes = st.timeline(&EventFilter::default());
        assert_eq!(lanes.len(), 2);
        assert_eq!(lanes[1].entries.iter().map(|e| e.card_id.as_str()).collect::<Vec<_>>(), ["c3", "c4"]);
        assert_eq!(lanes[1].entries[0].color, "#9e9e9e");
        assert_eq!(lanes[1].entries[1].color, "#d32f2f");
        let f = EventFilter { sessions: Some(["s1".to_string()].into()), ..Default::default() };
        assert_eq!(st.timeline(&f).len(), 1);
    }

    #[test]
    fn workspace_flow() {
        let mut st = store();
        let item = st.workspace_save("c1", "ana", Scope::Personal, "check", at(0)).unwrap();
        let item = st.workspace_set_status(&item.item_id, "ana", CardStatus::Reviewed, at(1)).unwrap();
        assert_eq!(item.history.len(), 2);
        let item = st.workspace_set_status(&item.item_id, "ana", CardStatus::Reviewed, at(2)).unwrap();
        assert_eq!(item.history.len(), 3);
        assert_eq!(st.card("c1").unwrap().status, CardStatus::Reviewed);

        assert!(st.workspace_list("bo", Scope::Team, None).unwrap().is_empty());
        assert!(matches!(
            st.workspace_annotate(&item.item_id, "bo", "mine now", at(3)),
            Err(StoreError::Forbidden { .. })
        ));
        st.workspace_set_status(&item.item_id, "ana", CardStatus::Shared, at(4)).unwrap();
        let team = st.workspace_list("bo", Scope::Team, None).unwrap();
        assert_eq!(team.len(), 1);
        assert_eq!(team[0].scope, Scope::Team);
        assert!(st.workspace_list("cy", Scope::Team, None).unwrap().is_empty());
        st.workspace_annotate(&item.item_id, "bo", "seen it", at(5)).unwrap();

        assert!(matches!(st.workspace_save("nope", "ana", Scope::Personal, "", at(0)), Err(StoreError::UnknownCard(_))));
        assert!(matches!(st.workspace_set_status("item-999", "ana", CardStatus::New, at(0)), Err(StoreError::UnknownItem(_))));
        assert!("done".parse::<CardStatus>().is_err());
    }

    #[test]
    fn persistence_and_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        {
            let mut st = EventStore::open(&path).unwrap();
            st.put_cards(&[card("c1", "s1", Some(PriorityLevel::Urgent), 0, 0.0)]).unwrap();
            st.add_user(User { user_id: "ana".into(), team: "t".into(), role: Role::Supervisor }).unwrap();
            st.workspace_save("c1", "ana", Scope::Team, "n", at(0)).unwrap();
        }
        let st = EventStore::open(&path).unwrap();
        assert_eq!(st.card_count(), 1);
        assert_eq!(st.workspace_list("ana", Scope::Personal, None).unwrap().len(), 1);

        let mut copy = EventStore::in_memory();
        copy.import_jsonl(&st.export_cards_jsonl(), &st.export_workspace_jsonl()).unwrap();
        assert_eq!(copy.export_cards_jsonl(), st.export_cards_jsonl());
        assert_eq!(copy.export_workspace_jsonl(), st.export_workspace_jsonl());
    }
}
