//! Provider wiring and input loading shared by the CLI and the API.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use mrvs_core::descriptors::{parse_profiles_jsonl, DescriptorProfile};
use mrvs_core::ingest::{load_detection_dir, load_manifest, PatrolSession};
use mrvs_core::pipeline::{AnalysisConfig, Engine, SegmentFailure};
use mrvs_core::pipeline::{parse_cards_jsonl, EventCard, TimeSpan};
use mrvs_core::providers::live::HttpProvider;
use mrvs_core::providers::mock::{MockFixtures, ReplayTracker};
use mrvs_core::providers::{AttributeDescriber, DetectorTracker, ProviderMode, Reasoner, SimilarityScorer};
use mrvs_core::Taxonomy;

pub struct ProviderSet {
    pub tracker: Arc<dyn DetectorTracker>,
    pub reasoner: Arc<dyn Reasoner>,
    pub describer: Arc<dyn AttributeDescriber>,
    pub similarity: Arc<dyn SimilarityScorer>,
}

/// Mock mode replays sidecars and scripted fixtures. Live mode sends model
/// calls to the configured endpoint; tracks still come from sidecars when a
/// detections directory is given.
pub fn providers(
    mode: ProviderMode,
    sessions: &[PatrolSession],
    detections: Option<&Path>,
    fixtures: Option<&Path>,
    timeout: Duration,
) -> Result<ProviderSet, String> {
    let replay = match detections {
        Some(dir) => Some(Arc::new(ReplayTracker::new(
            load_detection_dir(dir, sessions).map_err(|e| e.to_string())?,
        ))),
        None => None,
    };
    match mode {
        ProviderMode::Mock => {
            let tracker = replay.ok_or("mock mode needs a detections directory")?;
            let fx = match fixtures {
                Some(dir) => MockFixtures::load_dir(dir).map_err(|e| e.to_string())?,
                None => MockFixtures::default(),
            };
            Ok(ProviderSet {
                tracker,
                reasoner: Arc::new(fx.reasoner),
                describer: Arc::new(fx.describer),
                similarity: Arc::new(fx.similarity),
            })
        }
        ProviderMode::Live => {
            let live = Arc::new(HttpProvider::from_env(timeout).map_err(|e| e.to_string())?);
            let tracker: Arc<dyn DetectorTracker> = match replay {
                Some(r) => r,
                None => live.clone(),
            };
            Ok(ProviderSet {
                tracker,
                reasoner: live.clone(),
                describer: live.clone(),
                similarity: live,
            })
        }
    }
}

pub fn engine(set: &ProviderSet, config: AnalysisConfig) -> Result<Engine, String> {
    Engine::new(
        Arc::new(Taxonomy::bundled()),
        set.tracker.clone(),
        set.reasoner.clone(),
        config,
    )
    .map_err(|e| e.to_string())
}

pub fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn sessions(manifest: &Path) -> Result<Vec<PatrolSession>, String> {
    load_manifest(manifest).map_err(|e| e.to_string())
}

pub fn cards(path: &Path) -> Result<Vec<EventCard>, String> {
    parse_cards_jsonl(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn profiles(path: &Path) -> Result<Vec<DescriptorProfile>, String> {
    parse_profiles_jsonl(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn analysis_config(path: Option<&Path>) -> Result<AnalysisConfig, String> {
    match path {
        Some(p) => AnalysisConfig::from_json_str(&read(p)?).map_err(|e| e.to_string()),
        None => Ok(AnalysisConfig::default()),
    }
}

pub fn failures(path: &Path) -> Result<Vec<SegmentFailure>, String> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1)))
        .collect()
}

pub fn failed_spans(failures: &[SegmentFailure]) -> Vec<(String, TimeSpan)> {
    failures
        .iter()
        .map(|f| (f.session_id.clone(), f.segment.span()))
        .collect()
}
