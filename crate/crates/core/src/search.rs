//! Attribute search over descriptor profiles with include/exclude filters.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::DescriptorProfile;
use crate::pipeline::{EventCard, TimeSpan};
use crate::providers::is_fallback;
use crate::taxonomy::EntityCategory;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("unconstrained query")]
    Unconstrained,
    #[error("attribute {0:?} is both included and excluded for value {1:?}")]
    Conflicting(String, String),
    #[error("attribute {0:?} has an empty value set")]
    EmptyValueSet(String),
    #[error("entity class {0:?} is not searchable")]
    UnsearchableClass(EntityCategory),
    #[error("inverted time range [{0}, {1})")]
    InvertedRange(i64, i64),
    #[error("duplicate entity_id {0:?}")]
    DuplicateEntity(String),
    #[error("unknown entity_id {0:?}")]
    UnknownEntity(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorQuery {
    pub entity_class: EntityCategory,
    #[serde(default)]
    pub include: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub exclude: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub sessions: Option<BTreeSet<String>>,
    #[serde(default)]
    pub time_range: Option<(i64, i64)>,
}

impl DescriptorQuery {
    pub fn new(entity_class: EntityCategory) -> DescriptorQuery {
        DescriptorQuery {
            entity_class,
            include: BTreeMap::new(),
            exclude: BTreeMap::new(),
            sessions: None,
            time_range: None,
        }
    }

    pub fn include(mut self, attr: &str, value: &str) -> DescriptorQuery {
        self.include.entry(attr.to_owned()).or_default().insert(value.to_owned());
        self
    }

    pub fn exclude(mut self, attr: &str, value: &str) -> DescriptorQuery {
        self.exclude.entry(attr.to_owned()).or_default().insert(value.to_owned());
        self
    }

    /// Parses an `attr=value` pair as used on the command line.
    pub fn parse_pair(pair: &str) -> Result<(String, String), String> {
        match pair.split_once('=') {
            Some((a, v)) if !a.trim().is_empty() && !v.trim().is_empty() => {
                Ok((a.trim().to_owned(), v.trim().to_owned()))
            }
            _ => Err(format!("expected attr=value, got {pair:?}")),
        }
    }

    /// An empty include set is rejected even when exclusions are present:
    /// only include constraints can produce a match.
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.entity_class == EntityCategory::Other {
            return Err(SearchError::UnsearchableClass(self.entity_class));
        }
        if self.include.is_empty() {
            return Err(SearchError::Unconstrained);
        }
        for (attr, values) in self.include.iter().chain(&self.exclude) {
            if values.is_empty() {
                return Err(SearchError::EmptyValueSet(attr.clone()));
            }
        }
        for (attr, inc) in &self.include {
            if let Some(exc) = self.exclude.get(attr) {
                if let Some(v) = inc.intersection(exc).next() {
                    return Err(SearchError::Conflicting(attr.clone(), v.clone()));
                }
            }
        }
        if let Some((s, e)) = self.time_range {
            if e < s {
                return Err(SearchError::InvertedRange(s, e));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FirstSeen {
    pub session_id: String,
    pub t_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMatch {
    pub profile: DescriptorProfile,
    pub score: f64,
    pub matched_attributes: Vec<String>,
    pub first_seen: FirstSeen,
    pub card_links: Vec<String>,
}

/// Immutable index; rebuild and swap to update.
#[derive(Debug, Clone, Default)]
pub struct DescriptorIndex {
    profiles: Vec<DescriptorProfile>,
    by_id: BTreeMap<String, usize>,
    buckets: BTreeMap<(EntityCategory, String, String), Vec<usize>>,
    card_links: Vec<Vec<String>>,
}

pub fn build_index(profiles: Vec<DescriptorProfile>) -> Result<DescriptorIndex, SearchError> {
    DescriptorIndex::build(profiles, &[])
}

impl DescriptorIndex {
    /// Links each profile to the cards of the same session whose span
    /// overlaps one of its appearances.
    pub fn build(mut profiles: Vec<DescriptorProfile>, cards: &[EventCard]) -> Result<DescriptorIndex, SearchError> {
        profiles.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
        let mut by_id = BTreeMap::new();
        let mut buckets: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        let mut card_links = Vec::with_capacity(profiles.len());
        for (i, p) in profiles.iter().enumerate() {
            if by_id.insert(p.entity_id.clone(), i).is_some() {
                return Err(SearchError::DuplicateEntity(p.entity_id.clone()));
            }
            for (attr, value) in &p.attributes {
                buckets
                    .entry((p.entity_class, attr.clone(), value.clone()))
                    .or_default()
                    .push(i);
            }
            let links: BTreeSet<String> = cards
                .iter()
                .filter(|c| {
                    p.appearances
                        .iter()
                        .any(|a| a.session_id == c.session_id && a.span.overlap(&c.span) > 0)
                })
                .map(|c| c.card_id.clone())
                .collect();
            card_links.push(links.into_iter().collect());
        }
        Ok(DescriptorIndex {
            profiles,
            by_id,
            buckets,
            card_links,
        })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profiles(&self) -> &[DescriptorProfile] {
        &self.profiles
    }

    pub fn get(&self, entity_id: &str) -> Option<&DescriptorProfile> {
        self.by_id.get(entity_id).map(|&i| &self.profiles[i])
    }

    /// Profiles of `class` whose `attr` equals `value`.
    pub fn bucket(&self, class: EntityCategory, attr: &str, value: &str) -> &[usize] {
        self.buckets
            .get(&(class, attr.to_owned(), value.to_owned()))
            .map_or(&[], Vec::as_slice)
    }

    fn candidates(&self, q: &DescriptorQuery) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for (attr, values) in &q.include {
            for v in values.iter().filter(|v| !is_fallback(v)) {
                out.extend(self.bucket(q.entity_class, attr, v).iter().copied());
            }
        }
        out
    }

    fn make_match(&self, i: usize, q: &DescriptorQuery) -> Option<EntityMatch> {
        let p = &self.profiles[i];
        if p.entity_class != q.entity_class {
            return None;
        }
        if let Some(sessions) = &q.sessions {
            if !p.sessions.iter().any(|s| sessions.contains(s)) {
                return None;
            }
        }
        if let Some((s, e)) = q.time_range {
            let range = TimeSpan::new(s, e);
            if !p.appearances.iter().any(|a| a.span.overlap(&range) > 0) {
                return None;
            }
        }
        for (attr, values) in &q.exclude {
            if values.contains(p.attribute(attr)) {
                return None;
            }
        }
        let matched: Vec<String> = q
            .include
            .iter()
            .filter(|(attr, values)| {
                let v = p.attribute(attr);
                !is_fallback(v) && values.contains(v)
            })
            .map(|(attr, _)| attr.clone())
            .collect();
        if matched.is_empty() {
            return None;
        }
        Some(EntityMatch {
            score: matched.len() as f64 / q.include.len() as f64,
            matched_attributes: matched,
            first_seen: FirstSeen {
                session_id: p.first_seen_session.clone(),
                t_ms: p.first_seen_ms,
            },
            card_links: self.card_links[i].clone(),
            profile: p.clone(),
        })
    }

    pub fn query(&self, q: &DescriptorQuery) -> Result<Vec<EntityMatch>, SearchError> {
        q.validate()?;
        let mut out: Vec<EntityMatch> = self
            .candidates(q)
            .into_iter()
            .filter_map(|i| self.make_match(i, q))
            .collect();
        sort_matches(&mut out);
        Ok(out)
    }

    /// Query made of the entity's specific attributes, without the entity.
    pub fn find_similar(&self, entity_id: &str) -> Result<Vec<EntityMatch>, SearchError> {
        let p = self
            .get(entity_id)
            .ok_or_else(|| SearchError::UnknownEntity(entity_id.to_owned()))?;
        let mut q = DescriptorQuery::new(p.entity_class);
        for (attr, value) in &p.attributes {
            if !is_fallback(value) {
                q = q.include(attr, value);
            }
        }
        let mut out = self.query(&q)?;
        out.retain(|m| m.profile.entity_id != entity_id);
        Ok(out)
    }
}

/// Score descending, then first sighting, then entity id.
pub fn sort_matches(matches: &mut [EntityMatch]) {
    matches.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.first_seen.cmp(&b.first_seen))
            .then_with(|| a.profile.entity_id.cmp(&b.profile.entity_id))
    });
}
