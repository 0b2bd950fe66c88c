//! HTTP and WebSocket front end for the stream hub and session archive, the
//! analytics endpoints built on them, and the `argus`/`argus-hub` command
//! line tools.

mod analytics;
pub mod cli;
pub mod client;
mod error;
mod hub_routes;
mod sessions;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use axum::Router;
use parking_lot::{Mutex, RwLock};
use tokio::net::TcpListener;

use argus_core::hub::Hub;
use argus_core::reasoning::{load_task, EmissionModel, LiveReasoner, ReasoningError, TaskDescription};
use argus_core::session::SessionStore;

pub use analytics::{
    task_vocabulary, AccuracyDoc, HeatmapCell, HeatmapDoc, LiveStatus, MatrixSlice, MosaicDoc, WorldCell, WorldDoc,
};
pub use error::ApiError;
pub use hub_routes::{PublishReceipt, CLOSE_LAGGED, TS_HEADER};
pub use sessions::COUNT_HEADER;

/// Task descriptions keyed by task id.
#[derive(Clone, Debug, Default)]
pub struct TaskLibrary {
    tasks: BTreeMap<String, TaskDescription>,
}

impl TaskLibrary {
    /// Loads every `*.toml` in `dir`; a missing directory yields an empty
    /// library.
    pub fn load_dir(dir: &Path) -> Result<TaskLibrary, ReasoningError> {
        let mut tasks = BTreeMap::new();
        let Ok(entries) = std::fs::read_dir(dir) else {
            return Ok(TaskLibrary { tasks });
        };
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths.into_iter().filter(|p| p.extension().is_some_and(|x| x == "toml")) {
            let t = load_task(&p)?;
            tasks.insert(t.task_id.clone(), t);
        }
        Ok(TaskLibrary { tasks })
    }

    pub fn insert(&mut self, task: TaskDescription) {
        self.tasks.insert(task.task_id.clone(), task);
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskDescription> {
        self.tasks.get(task_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }
}

/// Shared server state.
pub struct AppState {
    pub hub: Arc<Hub>,
    pub store: Arc<SessionStore>,
    pub tasks: TaskLibrary,
    models: RwLock<HashMap<String, EmissionModel>>,
    live: Mutex<Option<(String, LiveReasoner)>>,
}

impl AppState {
    pub fn new(hub: Arc<Hub>, store: SessionStore, tasks: TaskLibrary) -> Arc<AppState> {
        Arc::new(AppState {
            hub,
            store: Arc::new(store),
            tasks,
            models: RwLock::new(HashMap::new()),
            live: Mutex::new(None),
        })
    }

    pub fn model(&self, task_id: &str) -> Option<EmissionModel> {
        self.models.read().get(task_id).cloned()
    }

    pub fn set_model(&self, model: EmissionModel) {
        self.models.write().insert(model.task_id.clone(), model);
    }

    fn task(&self, task_id: &str) -> Result<TaskDescription, ApiError> {
        self.tasks
            .get(task_id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown task {task_id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .merge(hub_routes::routes())
        .merge(sessions::routes())
        .merge(analytics::routes())
        .with_state(state)
}

/// Serves the API on `listener` until the process ends.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Runs a store or analytics call off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}
