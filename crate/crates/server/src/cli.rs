//! Command-line front ends: `argus-hub` runs the server, `argus` drives it
//! and runs offline analytics against an archive directory.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use argus_core::hub::{Hub, HubConfig};
use argus_core::mosaic::{encode_png, session_mosaic, MosaicError, MosaicRequest, DEFAULT_STRIDE};
use argus_core::session::{ReplayReport, SessionError, SessionMeta, SessionStore, VerifyReport};
use argus_core::spatial::{
    session_heatmap, session_objects, session_world, HeatmapLayer, SpatialQueryError, DEFAULT_LINK_M,
    DEFAULT_RESOLUTION,
};
use argus_core::synth::{generate_session, generate_to_archive, GenerateOptions, Pacing, Scenario, SynthError, SynthStream};

use crate::client::{encode_component, ClientError, HttpSink, HubClient};
use crate::{AppState, HeatmapDoc, TaskLibrary, WorldDoc};

pub const DEFAULT_HUB_URL: &str = "http://127.0.0.1:7070";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Spatial(#[from] SpatialQueryError),
    #[error(transparent)]
    Mosaic(#[from] MosaicError),
    #[error(transparent)]
    Reasoning(#[from] argus_core::reasoning::ReasoningError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

// ---------------------------------------------------------------- argus-hub

#[derive(Parser, Debug)]
#[command(name = "argus-hub", about = "Telemetry stream hub and analytics server")]
pub struct HubCli {
    #[command(subcommand)]
    pub command: HubCommand,
}

#[derive(Subcommand, Debug)]
pub enum HubCommand {
    /// Serve the HTTP/WebSocket API.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 7070)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Messages kept per stream.
    #[arg(long, default_value_t = HubConfig::default().retention_msgs)]
    pub retention_msgs: usize,
    /// Payload bytes kept per stream.
    #[arg(long, default_value_t = HubConfig::default().retention_bytes)]
    pub retention_bytes: usize,
    /// Messages a live subscriber may fall behind before it is dropped.
    #[arg(long, default_value_t = HubConfig::default().max_lag)]
    pub max_lag: usize,
    /// Session archive root.
    #[arg(long, default_value = "archive")]
    pub archive: PathBuf,
    /// Directory of task description files.
    #[arg(long, default_value = "fixtures/tasks")]
    pub tasks: PathBuf,
}

pub fn build_state(args: &ServeArgs) -> Result<Arc<AppState>, CliError> {
    let hub = Hub::new(HubConfig {
        retention_msgs: args.retention_msgs,
        retention_bytes: args.retention_bytes,
        max_lag: args.max_lag,
    });
    let store = SessionStore::open(&args.archive)?;
    let tasks = TaskLibrary::load_dir(&args.tasks)?;
    Ok(AppState::new(hub, store, tasks))
}

pub fn run_hub<I: IntoIterator<Item = OsString>>(argv: I) -> Result<(), CliError> {
    let cli = HubCli::parse_from(argv);
    let HubCommand::Serve(args) = cli.command;
    if args.retention_msgs == 0 {
        return Err(CliError::Usage("--retention-msgs must be at least 1".into()));
    }
    let state = build_state(&args)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
        eprintln!("argus-hub listening on http://{}", listener.local_addr()?);
        crate::serve(listener, state).await
    })?;
    Ok(())
}

// -------------------------------------------------------------------- argus

#[derive(Parser, Debug)]
#[command(name = "argus", about = "Sessions, simulator and offline analytics")]
pub struct ArgusCli {
    /// Hub server URL.
    #[arg(long, global = true, env = "ARGUS_HUB", default_value = DEFAULT_HUB_URL)]
    pub hub: String,
    #[command(subcommand)]
    pub command: ArgusCommand,
}

#[derive(Subcommand, Debug)]
pub enum ArgusCommand {
    #[command(subcommand)]
    Session(SessionCommand),
    #[command(subcommand)]
    Synth(SynthCommand),
    #[command(subcommand)]
    Spatial(SpatialCommand),
    #[command(subcommand)]
    Mosaic(MosaicCommand),
}

#[derive(Subcommand, Debug)]
pub enum SessionCommand {
    /// List recorded sessions, newest first.
    Ls {
        #[arg(long)]
        name: Option<String>,
        /// Minimum duration in seconds.
        #[arg(long)]
        min_secs: Option<f64>,
        /// Maximum duration in seconds.
        #[arg(long)]
        max_secs: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Start recording hub streams.
    Record {
        #[arg(long)]
        name: String,
        /// Comma-separated stream ids; default is every live stream.
        #[arg(long, value_delimiter = ',')]
        streams: Vec<String>,
        #[arg(long)]
        task: Option<String>,
    },
    Stop { session_id: String },
    /// Republish a session onto `{stream}:replay:{n}` streams.
    Replay {
        session_id: String,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Clamp idle gaps to this many milliseconds; 0 keeps them.
        #[arg(long)]
        max_gap_ms: Option<u64>,
    },
    /// Check an archive's files against its meta document.
    Verify {
        session_id: String,
        /// Verify locally instead of asking the server.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Generate a scenario into a hub or an archive directory.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, conflicts_with = "to_archive")]
        to_hub: bool,
        #[arg(long, value_name = "DIR")]
        to_archive: Option<PathBuf>,
        #[arg(long, conflicts_with = "fast")]
        realtime: bool,
        #[arg(long)]
        fast: bool,
        /// Restrict output: `light` or comma-separated stream ids.
        #[arg(long)]
        streams: Option<String>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ArchiveArgs {
    #[arg(long, default_value = "archive")]
    pub archive: PathBuf,
    #[arg(long)]
    pub session: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum SpatialCommand {
    /// Merged, voxel-downsampled world model.
    Build {
        #[command(flatten)]
        target: ArchiveArgs,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        res: f64,
    },
    /// Gaze or hand density heatmap.
    Heatmap {
        #[command(flatten)]
        target: ArchiveArgs,
        #[arg(long, default_value = "gaze")]
        stream: String,
        /// Session-relative seconds.
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long)]
        t1: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        res: f64,
    },
    /// 3D object positions and clusters.
    Objects {
        #[command(flatten)]
        target: ArchiveArgs,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = DEFAULT_LINK_M)]
        link_m: f64,
    },
}

#[derive(Subcommand, Debug)]
pub enum MosaicCommand {
    /// Panoramic composite around a session time; writes PNG to `--out`.
    Build {
        #[arg(long, default_value = "archive")]
        archive: PathBuf,
        #[arg(long)]
        session: String,
        #[arg(long)]
        t_ms: u64,
        #[arg(long, default_value_t = 4000)]
        window_ms: u64,
        #[arg(long, default_value_t = DEFAULT_STRIDE)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Metadata document; stdout when absent.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => writeln!(std::io::stdout(), "{text}")?,
    }
    Ok(())
}

fn print_sessions(metas: &[SessionMeta]) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<38} {:<24} {:>9} {:>12} {:>8}", "SESSION", "NAME", "SECONDS", "BYTES", "STATUS")?;
    for m in metas {
        let status = serde_json::to_value(m.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        writeln!(
            out,
            "{:<38} {:<24} {:>9.1} {:>12} {:>8}",
            m.session_id,
            m.name,
            m.duration_us as f64 / 1e6,
            m.bytes_total,
            status
        )?;
    }
    Ok(())
}

fn parse_streams(spec: &str) -> Result<BTreeSet<SynthStream>, CliError> {
    if spec == "light" {
        return Ok(SynthStream::LIGHT.into_iter().collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<SynthStream>().map_err(CliError::Usage))
        .collect()
}

fn secs_to_us(s: f64) -> Result<u64, CliError> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(CliError::Usage(format!("time must be a nonnegative number of seconds, got {s}")));
    }
    Ok((s * 1e6).round() as u64)
}

pub fn run_argus<I: IntoIterator<Item = OsString>>(argv: I) -> Result<(), CliError> {
    let cli = ArgusCli::parse_from(argv);
    let client = HubClient::new(&cli.hub);
    match cli.command {
        ArgusCommand::Session(cmd) => run_session(&client, cmd),
        ArgusCommand::Synth(SynthCommand::Run {
            scenario,
            seed,
            to_hub,
            to_archive,
            realtime,
            fast: _,
            streams,
        }) => {
            let scenario = Scenario::load(&scenario)?;
            let opts = GenerateOptions {
                seed,
                streams: streams.as_deref().map(parse_streams).transpose()?,
            };
            let pacing = if realtime { Pacing::Realtime } else { Pacing::Fast };
            match (to_hub, to_archive) {
                (_, Some(dir)) => {
                    let (meta, report) = generate_to_archive(&scenario, &opts, &dir)?;
                    eprintln!("wrote session {} under {}", meta.session_id, dir.display());
                    emit_json(&report, None)
                }
                (true, None) => {
                    let report = generate_session(&scenario, &opts, &mut HttpSink::new(client, pacing))?;
                    emit_json(&report, None)
                }
                (false, None) => Err(CliError::Usage("pass --to-hub or --to-archive DIR".into())),
            }
        }
        ArgusCommand::Spatial(cmd) => run_spatial(cmd),
        ArgusCommand::Mosaic(MosaicCommand::Build {
            archive,
            session,
            t_ms,
            window_ms,
            stride,
            seed,
            out,
            meta,
        }) => {
            let store = SessionStore::open(&archive)?;
            let mut req = MosaicRequest::at(t_ms.saturating_mul(1000));
            req.window_us = window_ms.saturating_mul(1000);
            req.stride = stride;
            req.seed = seed;
            let result = session_mosaic(&store, &session, &req)?;
            std::fs::write(&out, encode_png(&result.image))?;
            emit_json(&result.meta, meta.as_deref())
        }
    }
}

fn run_session(client: &HubClient, cmd: SessionCommand) -> Result<(), CliError> {
    match cmd {
        SessionCommand::Ls {
            name,
            min_secs,
            max_secs,
            json,
        } => {
            let mut params = Vec::new();
            if let Some(n) = name {
                params.push(format!("name={}", encode_component(&n)));
            }
            if let Some(s) = min_secs {
                params.push(format!("duration_min={}", secs_to_us(s)?));
            }
            if let Some(s) = max_secs {
                params.push(format!("duration_max={}", secs_to_us(s)?));
            }
            let metas: Vec<SessionMeta> = client.get_json(&format!("/sessions?{}", params.join("&")))?;
            if json {
                emit_json(&metas, None)
            } else {
                print_sessions(&metas)
            }
        }
        SessionCommand::Record { name, streams, task } => {
            let body = serde_json::json!({ "name": name, "streams": streams, "task_id": task });
            let v: serde_json::Value = client.post_json("/sessions", &body)?;
            println!("{}", v["session_id"].as_str().unwrap_or_default());
            Ok(())
        }
        SessionCommand::Stop { session_id } => {
            let meta: SessionMeta = client.post_empty(&format!("/sessions/{session_id}/stop"))?;
            emit_json(&meta, None)
        }
        SessionCommand::Replay {
            session_id,
            speed,
            max_gap_ms,
        } => {
            let mut path = format!("/sessions/{session_id}/replay?speed={speed}");
            if let Some(g) = max_gap_ms {
                path.push_str(&format!("&max_gap_ms={g}"));
            }
            let report: ReplayReport = client.post_empty(&path)?;
            emit_json(&report, None)
        }
        SessionCommand::Verify { session_id, archive } => {
            let report: VerifyReport = match archive {
                Some(dir) => SessionStore::open(dir)?.verify(&session_id)?,
                None => client.get_json(&format!("/sessions/{session_id}/verify"))?,
            };
            emit_json(&report, None)
        }
    }
}

fn run_spatial(cmd: SpatialCommand) -> Result<(), CliError> {
    match cmd {
        SpatialCommand::Build { target, res } => {
            let store = SessionStore::open(&target.archive)?;
            let grid = session_world(&store, &target.session, res)?;
            emit_json(&WorldDoc::from_grid(&grid), target.out.as_deref())
        }
        SpatialCommand::Heatmap {
            target,
            stream,
            t0,
            t1,
            res,
        } => {
            let store = SessionStore::open(&target.archive)?;
            let layer: HeatmapLayer = stream.parse()?;
            let (t0, t1) = (secs_to_us(t0)?, t1.map(secs_to_us).transpose()?.unwrap_or(u64::MAX));
            let h = session_heatmap(&store, &target.session, layer, t0, t1, res)?;
            emit_json(&HeatmapDoc::new(layer, t0, t1, &h), target.out.as_deref())
        }
        SpatialCommand::Objects { target, label, link_m } => {
            let store = SessionStore::open(&target.archive)?;
            let objs = session_objects(&store, &target.session, label.as_deref(), link_m)?;
            emit_json(&objs, target.out.as_deref())
        }
    }
}
