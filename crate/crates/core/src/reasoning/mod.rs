//! Task knowledge and step tracking: parsed task descriptions, a forward
//! filter over perceived actions, missing-object error flags, and per-step
//! accuracy against ground truth.

mod accuracy;
mod filter;
mod live;
mod task;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::payload::{decode_hands, ActionsPayload, DetectionsPayload, PayloadError, StepStatePayload, TruthPayload};
use crate::session::{SessionError, SessionStore};
use crate::synth::{STREAM_ACTIONS, STREAM_DETECTIONS, STREAM_HAND, STREAM_TRUTH};

pub use accuracy::{evaluate_accuracy, to_timeline, AccuracyReport, StepAccuracy, Timeline};
pub use filter::{
    argmax, predict, step_update, surviving_actions, train_emissions, ActionEvent, EmissionModel, ErrorConfig,
    ErrorDetector, ErrorState, HandsAbsent, StepFilter, DEFAULT_ALPHA, DEFAULT_SELF_STAY,
};
pub use live::{LiveReasoner, LiveStreams};
pub use task::{load_task, parse_task, TaskDescription, TaskStep};

pub const DEFAULT_THETA: f64 = 0.3;
/// Threshold of the earlier reasoning version.
pub const LEGACY_THETA: f64 = 0.7;
pub const HANDS_ABSENT_US: u64 = 5_000_000;

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("malformed task: {0}")]
    MalformedTask(String),
    #[error("step {step} text matches no vocabulary entry: {text:?}")]
    UnknownVocabulary { step: usize, text: String },
    #[error("invalid emission model: {0}")]
    InvalidModel(String),
    #[error("model for task {model} cannot drive task {task}")]
    TaskMismatch { model: String, task: String },
    #[error("session {0} has no {1} stream")]
    MissingStream(String, &'static str),
    #[error("bad payload in {stream} seq {seq}: {source}")]
    Payload {
        stream: String,
        seq: u64,
        source: PayloadError,
    },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Hub(#[from] crate::hub::HubError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepPolicy {
    /// Forward filter over action emissions.
    Filter,
    /// Advance one step whenever no hand is seen for `absent_us`.
    HandsAbsent { absent_us: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonerConfig {
    pub theta: f64,
    pub error: ErrorConfig,
    pub policy: StepPolicy,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            theta: DEFAULT_THETA,
            error: ErrorConfig::default(),
            policy: StepPolicy::Filter,
        }
    }
}

impl ReasonerConfig {
    pub fn with_theta(theta: f64) -> ReasonerConfig {
        ReasonerConfig {
            theta,
            error: ErrorConfig {
                theta,
                ..ErrorConfig::default()
            },
            policy: StepPolicy::Filter,
        }
    }
}

/// Per-session step tracker fed with perception outputs in time order.
#[derive(Clone, Debug)]
pub struct Reasoner {
    task: TaskDescription,
    filter: StepFilter,
    detector: ErrorDetector,
    hands: Option<HandsAbsent>,
}

impl Reasoner {
    pub fn new(task: TaskDescription, model: EmissionModel, cfg: &ReasonerConfig) -> Result<Reasoner, ReasoningError> {
        model.validate()?;
        if model.task_id != task.task_id || model.steps() != task.len() {
            return Err(ReasoningError::TaskMismatch {
                model: model.task_id,
                task: task.task_id,
            });
        }
        let hands = match cfg.policy {
            StepPolicy::Filter => None,
            StepPolicy::HandsAbsent { absent_us } => Some(HandsAbsent::new(absent_us)),
        };
        Ok(Reasoner {
            filter: StepFilter::new(model, cfg.theta),
            detector: ErrorDetector::new(cfg.error.clone()),
            task,
            hands,
        })
    }

    pub fn task(&self) -> &TaskDescription {
        &self.task
    }

    pub fn observe_detections(&mut self, t_us: u64, d: &DetectionsPayload) {
        self.detector.observe(t_us, d.detections.iter().map(|x| (x.label.as_str(), x.confidence)));
    }

    pub fn observe_hands(&mut self, t_us: u64) {
        if let Some(h) = &mut self.hands {
            h.hands_seen(t_us);
        }
    }

    /// Advances the tracker by one perception tick.
    pub fn on_actions(&mut self, t_us: u64, actions: &ActionsPayload) -> StepStatePayload {
        match &mut self.hands {
            None => {
                self.filter.update(&actions.actions);
            }
            Some(h) => {
                if h.should_advance(t_us) {
                    self.filter.force(self.filter.step() + 1);
                }
            }
        }
        let step = self.filter.step();
        let err = self.detector.check(t_us, step, &self.task.steps[step].required_objects);
        let belief = self.filter.belief().to_vec();
        StepStatePayload {
            t_us,
            task_id: self.task.task_id.clone(),
            step,
            confidence: belief[step],
            belief,
            in_error: err.in_error,
            error_reason: err.reason,
        }
    }
}

fn bad(stream: &str, seq: u64) -> impl FnOnce(PayloadError) -> ReasoningError + '_ {
    move |source| ReasoningError::Payload {
        stream: stream.to_string(),
        seq,
        source,
    }
}

/// Ground-truth `(session-relative t, step, action)` ticks.
pub fn truth_ticks(store: &SessionStore, session_id: &str) -> Result<Vec<(u64, TruthPayload)>, ReasoningError> {
    let meta = store.meta(session_id)?;
    if meta.stream(STREAM_TRUTH).is_none() {
        return Err(ReasoningError::MissingStream(session_id.into(), STREAM_TRUTH));
    }
    store
        .read_stream(session_id, STREAM_TRUTH)?
        .iter()
        .map(|m| {
            let p = TruthPayload::decode(&m.payload).map_err(bad(STREAM_TRUTH, m.seq))?;
            Ok((m.ts_us.saturating_sub(meta.start_ts_us), p))
        })
        .collect()
}

pub fn truth_timeline(store: &SessionStore, session_id: &str) -> Result<Vec<(u64, usize)>, ReasoningError> {
    Ok(to_timeline(truth_ticks(store, session_id)?.into_iter().map(|(t, p)| (t, p.step))))
}

/// Scripted actions paired with the step they belong to.
pub fn training_events(store: &SessionStore, session_id: &str) -> Result<Vec<ActionEvent>, ReasoningError> {
    Ok(truth_ticks(store, session_id)?
        .into_iter()
        .filter_map(|(_, p)| p.action.map(|action| ActionEvent { action, step: p.step }))
        .collect())
}

pub fn train_from_sessions(
    store: &SessionStore,
    task: &TaskDescription,
    session_ids: &[String],
    alpha: f64,
    self_stay: f64,
) -> Result<EmissionModel, ReasoningError> {
    let events = session_ids
        .iter()
        .map(|id| training_events(store, id))
        .collect::<Result<Vec<_>, _>>()?;
    train_emissions(task, &events, alpha, self_stay)
}

/// Replays a recorded session through a fresh reasoner. Returns one state
/// per action tick with session-relative times.
pub fn run_session(
    store: &SessionStore,
    session_id: &str,
    task: &TaskDescription,
    model: &EmissionModel,
    cfg: &ReasonerConfig,
) -> Result<Vec<(u64, StepStatePayload)>, ReasoningError> {
    let meta = store.meta(session_id)?;
    if meta.stream(STREAM_ACTIONS).is_none() {
        return Err(ReasoningError::MissingStream(session_id.into(), STREAM_ACTIONS));
    }
    // at equal timestamps, context streams are applied before the action tick
    let mut events = Vec::new();
    for (rank, sid) in [STREAM_DETECTIONS, STREAM_HAND, STREAM_ACTIONS].into_iter().enumerate() {
        if meta.stream(sid).is_none() {
            continue;
        }
        for m in store.read_stream(session_id, sid)? {
            events.push((m.ts_us, rank, m));
        }
    }
    events.sort_by_key(|(ts, rank, m)| (*ts, *rank, m.seq));
    let mut r = Reasoner::new(task.clone(), model.clone(), cfg)?;
    let mut out = Vec::new();
    for (ts, rank, m) in events {
        let t = ts.saturating_sub(meta.start_ts_us);
        match rank {
            0 => r.observe_detections(t, &DetectionsPayload::decode(&m.payload).map_err(bad(STREAM_DETECTIONS, m.seq))?),
            1 => {
                if !decode_hands(&m.payload).map_err(bad(STREAM_HAND, m.seq))?.is_empty() {
                    r.observe_hands(t);
                }
            }
            _ => {
                let a = ActionsPayload::decode(&m.payload).map_err(bad(STREAM_ACTIONS, m.seq))?;
                let mut s = r.on_actions(t, &a);
                s.t_us = a.t_us;
                out.push((t, s));
            }
        }
    }
    Ok(out)
}

/// Time-weighted step accuracy of the tracker on a recorded session.
pub fn session_accuracy(
    store: &SessionStore,
    session_id: &str,
    task: &TaskDescription,
    model: &EmissionModel,
    cfg: &ReasonerConfig,
) -> Result<AccuracyReport, ReasoningError> {
    let meta = store.meta(session_id)?;
    let truth = truth_timeline(store, session_id)?;
    let predicted = to_timeline(run_session(store, session_id, task, model, cfg)?.into_iter().map(|(t, s)| (t, s.step)));
    Ok(evaluate_accuracy(&predicted, &truth, meta.duration_us, task.len()))
}
