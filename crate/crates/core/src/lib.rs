//! Event Card engine for multi-robot patrol video.
//!
//! Converts per-frame detection metadata and GPS traces into prioritized,
//! explainable Event Cards; extracts and searches appearance descriptors;
//! stores cards in a spatiotemporal store with team workspaces; and scores
//! detections with a segment-level precision/recall protocol.

pub mod descriptors;
pub mod eval;
pub mod ingest;
pub mod pipeline;
pub mod providers;
pub mod search;
pub mod store;
pub mod taxonomy;

pub use ingest::{FrameRecord, PatrolSession, Period};
pub use pipeline::{EventCard, TimeSpan};
pub use taxonomy::{PriorityLevel, Taxonomy};
