#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use argus_core::hub::{Hub, HubConfig};
use argus_core::session::SessionStore;
use argus_core::synth::Scenario;
use argus_server::client::HubClient;
use argus_server::{AppState, TaskLibrary};
use tempfile::TempDir;
use tokio::runtime::Runtime;

pub struct TestServer {
    pub url: String,
    pub state: Arc<AppState>,
    pub dir: TempDir,
    pub rt: Runtime,
}

impl TestServer {
    pub fn start(cfg: HubConfig) -> TestServer {
        let dir = tempfile::tempdir().unwrap();
        TestServer::with_archive(cfg, dir)
    }

    /// Serves an existing directory whose `archive/` holds sessions.
    pub fn with_archive(cfg: HubConfig, dir: TempDir) -> TestServer {
        let store = SessionStore::open(dir.path().join("archive")).unwrap();
        let tasks = TaskLibrary::load_dir(&fixtures().join("tasks")).unwrap();
        let state = AppState::new(Hub::new(cfg), store, tasks);
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        rt.spawn(argus_server::serve(listener, state.clone()));
        TestServer {
            url: format!("http://{addr}"),
            state,
            dir,
            rt,
        }
    }

    pub fn client(&self) -> HubClient {
        HubClient::new(&self.url)
    }

    pub fn ws_url(&self, query: &str) -> String {
        format!("{}/ws?{query}", self.url.replacen("http://", "ws://", 1))
    }

    pub fn archive(&self) -> PathBuf {
        self.dir.path().join("archive")
    }
}

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn pinwheels() -> Scenario {
    Scenario::load(&fixtures().join("scenarios/pinwheels.toml")).unwrap()
}

/// The pinwheels scenario cut to its first `secs` seconds.
pub fn pinwheels_prefix(secs: u64) -> Scenario {
    let mut s = pinwheels();
    let end = secs * 1_000_000;
    s.timeline.retain(|e| e.t_us < end);
    s.duration_us = Some(end);
    s
}
