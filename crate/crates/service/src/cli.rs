//! `mrvs` command line. Usage errors exit 2, data errors exit 1.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mrvs_core::descriptors::{describe_sessions, write_jsonl, DEFAULT_MERGE_THRESHOLD};
use mrvs_core::eval::{evaluate, report, Aggregation, EvalConfig};
use mrvs_core::ingest::{load_detection_dir, load_ground_truth, validate_frames, Period};
use mrvs_core::pipeline::write_cards_jsonl;
use mrvs_core::providers::{ProviderMode, QuestionSets};
use mrvs_core::search::{DescriptorIndex, DescriptorQuery};
use mrvs_core::store::EventStore;
use mrvs_core::taxonomy::EntityCategory;
use mrvs_core::Taxonomy;

use crate::api::{serve, AppState};
use crate::auth::ApiSession;
use crate::setup;

#[derive(Debug, Parser)]
#[command(name = "mrvs", version, about = "Event Card engine for multi-robot patrol video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Mock,
    Live,
}

impl From<Mode> for ProviderMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Mock => ProviderMode::Mock,
            Mode::Live => ProviderMode::Live,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Class {
    Person,
    Vehicle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PeriodArg {
    Day,
    Night,
    All,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub mode: Mode,
    /// Directory of `<session_id>.jsonl` detection sidecars.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Directory of mock provider scripts.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Analysis config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a manifest (and optional sidecars and truth) and register its sessions.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, env = "MRVS_STORE_PATH")]
        store: Option<PathBuf>,
    },
    /// Produce Event Cards for every session in a manifest.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        providers: ProviderArgs,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write analysis-failed segments as JSON lines.
        #[arg(long)]
        failures: Option<PathBuf>,
        #[arg(long, env = "MRVS_STORE_PATH")]
        store: Option<PathBuf>,
    },
    /// Extract, verify and merge appearance descriptors.
    Describe {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        providers: ProviderArgs,
        #[arg(long)]
        out: PathBuf,
        /// Merge audit log, one decision per line.
        #[arg(long)]
        decisions: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MERGE_THRESHOLD)]
        threshold: f64,
    },
    /// Descriptor search over a profiles file.
    Search {
        #[arg(long)]
        profiles: PathBuf,
        /// Cards used to link results to events.
        #[arg(long)]
        cards: Option<PathBuf>,
        #[arg(long, value_enum, required_unless_present = "similar_to")]
        class: Option<Class>,
        /// attr=value; repeatable.
        #[arg(long, value_parser = DescriptorQuery::parse_pair)]
        include: Vec<(String, String)>,
        /// attr=value; repeatable.
        #[arg(long, value_parser = DescriptorQuery::parse_pair)]
        exclude: Vec<(String, String)>,
        #[arg(long)]
        session: Vec<String>,
        /// Find entities sharing this entity's descriptors instead.
        #[arg(long, conflicts_with_all = ["class", "include", "exclude"])]
        similar_to: Option<String>,
    },
    /// Score cards against ground truth with the segment protocol.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        cards: PathBuf,
        #[arg(long = "macro")]
        macro_avg: bool,
        #[arg(long, value_enum, default_value = "all")]
        period: PeriodArg,
        #[arg(long)]
        failures: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = "MRVS_STORE_PATH")]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// JSON array of API sessions (user_id, team, role, token, expiry).
        #[arg(long)]
        tokens: Option<PathBuf>,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Enables POST /analyze with these providers.
        #[arg(long)]
        analyze: bool,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    /// Dump the store's cards and workspace items as JSON lines.
    Export {
        #[arg(long, env = "MRVS_STORE_PATH")]
        store: PathBuf,
        #[arg(long)]
        cards: PathBuf,
        #[arg(long)]
        workspace: PathBuf,
    },
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_json(out: &mut dyn Write, v: &impl serde::Serialize) -> Result<(), String> {
    let text = serde_json::to_string_pretty(v).expect("output serializes");
    writeln!(out, "{text}").map_err(|e| e.to_string())
}

/// Runs one invocation; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<(), String> {
    match cmd {
        Command::Ingest {
            manifest,
            detections,
            truth,
            store,
        } => {
            let sessions = setup::sessions(&manifest)?;
            let mut summary = json!({"sessions": sessions.len()});
            if let Some(dir) = detections {
                let sidecars = load_detection_dir(&dir, &sessions).map_err(|e| e.to_string())?;
                for (id, frames) in &sidecars {
                    validate_frames(frames).map_err(|e| format!("{id}: {e}"))?;
                }
                summary["sidecars"] = json!(sidecars.len());
            }
            if let Some(t) = truth {
                let rows = load_ground_truth(&t, &sessions, &Taxonomy::bundled()).map_err(|e| e.to_string())?;
                summary["truth_rows"] = json!(rows.len());
                summary["unmatched_truth_rows"] = json!(rows.iter().filter(|r| r.is_unmatched()).count());
            }
            if let Some(path) = store {
                EventStore::open(&path)
                    .and_then(|mut s| s.put_sessions(&sessions))
                    .map_err(|e| e.to_string())?;
            }
            print_json(out, &summary)
        }
        Command::Analyze {
            manifest,
            providers,
            parallelism,
            out: out_path,
            failures,
            store,
        } => {
            let sessions = setup::sessions(&manifest)?;
            let mut config = setup::analysis_config(providers.config.as_deref())?;
            config.provider_mode = providers.mode.into();
            if let Some(p) = parallelism {
                config.parallelism = p;
            }
            let set = setup::providers(
                config.provider_mode,
                &sessions,
                providers.detections.as_deref(),
                providers.fixtures.as_deref(),
                Duration::from_millis(config.timeout_ms),
            )?;
            let engine = setup::engine(&set, config)?;
            let outcomes = engine.analyze_sessions(&sessions).map_err(|e| e.to_string())?;
            let cards: Vec<_> = outcomes.iter().flat_map(|o| o.cards.iter().cloned()).collect();
            let failed: Vec<_> = outcomes.iter().flat_map(|o| o.failures.iter().cloned()).collect();
            write_file(&out_path, &write_cards_jsonl(&cards))?;
            if let Some(f) = failures {
                write_file(&f, &write_jsonl(&failed))?;
            }
            if let Some(path) = store {
                let mut st = EventStore::open(&path).map_err(|e| e.to_string())?;
                st.put_sessions(&sessions).map_err(|e| e.to_string())?;
                st.put_cards(&cards).map_err(|e| e.to_string())?;
            }
            print_json(
                out,
                &json!({
                    "sessions": sessions.len(),
                    "cards": cards.len(),
                    "failed_segments": failed.len(),
                    "out": out_path,
                }),
            )
        }
        Command::Describe {
            manifest,
            providers,
            out: out_path,
            decisions,
            threshold,
        } => {
            let sessions = setup::sessions(&manifest)?;
            let config = setup::analysis_config(providers.config.as_deref())?;
            let set = setup::providers(
                providers.mode.into(),
                &sessions,
                providers.detections.as_deref(),
                providers.fixtures.as_deref(),
                Duration::from_millis(config.timeout_ms),
            )?;
            let outcome = describe_sessions(
                &sessions,
                set.tracker.as_ref(),
                set.describer.as_ref(),
                set.similarity.as_ref(),
                &QuestionSets::bundled(),
                threshold,
            )
            .map_err(|e| e.to_string())?;
            write_file(&out_path, &write_jsonl(&outcome.profiles))?;
            if let Some(d) = decisions {
                write_file(&d, &write_jsonl(&outcome.decisions))?;
            }
            print_json(
                out,
                &json!({
                    "profiles": outcome.profiles.len(),
                    "merge_decisions": outcome.decisions.len(),
                    "skipped": outcome.skipped,
                }),
            )
        }
        Command::Search {
            profiles,
            cards,
            class,
            include,
            exclude,
            session,
            similar_to,
        } => {
            let profiles = setup::profiles(&profiles)?;
            let cards = match cards {
                Some(c) => setup::cards(&c)?,
                None => Vec::new(),
            };
            let idx = DescriptorIndex::build(profiles, &cards).map_err(|e| e.to_string())?;
            let matches = match similar_to {
                Some(id) => idx.find_similar(&id),
                None => {
                    let class = match class.expect("clap requires class") {
                        Class::Person => EntityCategory::Person,
                        Class::Vehicle => EntityCategory::Vehicle,
                    };
                    let mut q = DescriptorQuery::new(class);
                    for (a, v) in &include {
                        q = q.include(a, v);
                    }
                    for (a, v) in &exclude {
                        q = q.exclude(a, v);
                    }
                    if !session.is_empty() {
                        q.sessions = Some(session.into_iter().collect());
                    }
                    idx.query(&q)
                }
            }
            .map_err(|e| e.to_string())?;
            print_json(out, &matches)
        }
        Command::Eval {
            manifest,
            truth,
            cards,
            macro_avg,
            period,
            failures,
            csv,
            json: json_path,
        } => {
            let mut sessions = setup::sessions(&manifest)?;
            let truth = load_ground_truth(&truth, &sessions, &Taxonomy::bundled()).map_err(|e| e.to_string())?;
            let mut cards = setup::cards(&cards)?;
            let mut failed = match failures {
                Some(f) => setup::failed_spans(&setup::failures(&f)?),
                None => Vec::new(),
            };
            let keep = match period {
                PeriodArg::Day => Some(Period::Day),
                PeriodArg::Night => Some(Period::Night),
                PeriodArg::All => None,
            };
            let mut truth = truth;
            if let Some(p) = keep {
                sessions.retain(|s| s.period == p);
                let ids: std::collections::BTreeSet<String> = sessions.iter().map(|s| s.session_id.clone()).collect();
                cards.retain(|c| ids.contains(&c.session_id));
                truth.retain(|t| ids.contains(&t.session_id));
                failed.retain(|(s, _)| ids.contains(s));
            }
            let agg = if macro_avg { Aggregation::Macro } else { Aggregation::Micro };
            let segs = evaluate(&sessions, &cards, &truth, &failed, &EvalConfig::default()).map_err(|e| e.to_string())?;
            let rep = report(&sessions, &segs, agg).map_err(|e| e.to_string())?;
            if let Some(p) = csv {
                write_file(&p, &rep.to_csv())?;
            }
            if let Some(p) = json_path {
                write_file(&p, &serde_json::to_string_pretty(&rep).expect("report serializes"))?;
            }
            write!(out, "{}", rep.to_text()).map_err(|e| e.to_string())
        }
        Command::Serve {
            store,
            addr,
            tokens,
            profiles,
            truth,
            analyze,
            providers,
        } => {
            let st = EventStore::open(&store).map_err(|e| e.to_string())?;
            let sessions: Vec<_> = st.sessions().into_iter().cloned().collect();
            let tokens: Vec<ApiSession> = match tokens {
                Some(t) => serde_json::from_str(&setup::read(&t)?).map_err(|e| format!("{}: {e}", t.display()))?,
                None => Vec::new(),
            };
            let mut state = AppState::new(st, tokens)?;
            if let Some(t) = truth {
                let rows = load_ground_truth(&t, &sessions, &Taxonomy::bundled()).map_err(|e| e.to_string())?;
                state = state.with_truth(rows);
            }
            if analyze {
                let mut config = setup::analysis_config(providers.config.as_deref())?;
                config.provider_mode = providers.mode.into();
                let set = setup::providers(
                    config.provider_mode,
                    &sessions,
                    providers.detections.as_deref(),
                    providers.fixtures.as_deref(),
                    Duration::from_millis(config.timeout_ms),
                )?;
                state = state.with_engine(setup::engine(&set, config)?);
            }
            if let Some(p) = profiles {
                state.set_profiles(setup::profiles(&p)?).map_err(|e| e.to_string())?;
            }
            let state = Arc::new(state);
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            let _ = writeln!(out, "listening on {addr}");
            rt.block_on(serve(state, &addr))
        }
        Command::Export {
            store,
            cards,
            workspace,
        } => {
            let st = EventStore::open(&store).map_err(|e| e.to_string())?;
            write_file(&cards, &st.export_cards_jsonl())?;
            write_file(&workspace, &st.export_workspace_jsonl())?;
            print_json(out, &json!({"cards": st.card_count(), "cards_out": cards, "workspace_out": workspace}))
        }
    }
}
