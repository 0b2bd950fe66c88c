use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SynthError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub task_id: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to two seconds after the last timeline event.
    #[serde(default)]
    pub duration_us: Option<u64>,
    #[serde(default)]
    pub room: RoomModel,
    #[serde(default)]
    pub perception: PerceptionConfig,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub timeline: Vec<ScriptEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub t_us: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    MoveTo {
        position: [f64; 3],
        #[serde(default)]
        duration_us: Option<u64>,
    },
    LookAt {
        target: [f64; 3],
        #[serde(default)]
        duration_us: Option<u64>,
    },
    /// Starts a scripted action; it lasts until the next action event or
    /// for `duration_us` when given.
    PerformAction {
        action: String,
        #[serde(default)]
        step: Option<usize>,
        #[serde(default)]
        object: Option<String>,
        #[serde(default)]
        duration_us: Option<u64>,
    },
    PlaceObject {
        object: String,
        position: [f64; 3],
    },
    RemoveObject {
        object: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::MoveTo { .. } => "move_to",
            EventKind::LookAt { .. } => "look_at",
            EventKind::PerformAction { .. } => "perform_action",
            EventKind::PlaceObject { .. } => "place_object",
            EventKind::RemoveObject { .. } => "remove_object",
        }
    }
}

/// A room with a floor at y = 0, a back wall at `wall_z` and one desk.
/// World axes: y up, meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomModel {
    pub desk_min: [f64; 2],
    pub desk_max: [f64; 2],
    pub desk_height: f64,
    pub wall_z: f64,
    pub rest_position: [f64; 3],
    pub rest_target: [f64; 3],
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

impl Default for RoomModel {
    fn default() -> Self {
        RoomModel {
            desk_min: [-0.7, 0.3],
            desk_max: [0.7, 1.0],
            desk_height: 0.75,
            wall_z: 1.4,
            rest_position: [0.0, 1.55, -0.1],
            rest_target: [0.0, 0.75, 0.65],
            objects: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub label: String,
    pub position: [f64; 3],
    /// Edge length of the rendered square in meters.
    #[serde(default = "default_object_size")]
    pub size: f64,
    #[serde(default = "default_object_color")]
    pub color: [u8; 3],
    /// Whether the object is in the room before any event places it.
    #[serde(default = "default_true")]
    pub present: bool,
}

fn default_object_size() -> f64 {
    0.12
}

fn default_object_color() -> [u8; 3] {
    [200, 60, 40]
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub base_conf: f64,
    pub detection_noise: f64,
    /// Probability per detection tick of one spurious detection.
    pub false_positive_rate: f64,
    pub false_positive_labels: Vec<String>,
    pub action_mean: f64,
    pub action_std: f64,
    pub distractor_mean: f64,
    pub distractor_std: f64,
    pub distractors_per_tick: usize,
    /// Extra labels the action model may emit as distractors.
    pub extra_actions: Vec<String>,
    /// Standard deviation of gaze direction jitter in radians.
    pub gaze_noise_rad: f64,
    pub hand_noise_m: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            base_conf: 0.9,
            detection_noise: 0.05,
            false_positive_rate: 0.02,
            false_positive_labels: vec!["bowl".into(), "spoon".into()],
            action_mean: 0.35,
            action_std: 0.12,
            distractor_mean: 0.12,
            distractor_std: 0.06,
            distractors_per_tick: 3,
            extra_actions: Vec::new(),
            gaze_noise_rad: 0.0,
            hand_noise_m: 0.002,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RgbEncoding {
    Jpeg,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub rgb_encoding: RgbEncoding,
    pub jpeg_quality: u8,
    /// Pixel stride of the published point clouds; 0 disables the stream.
    pub pointcloud_stride: u32,
    pub rgb_hfov_deg: f64,
    pub gray_hfov_deg: f64,
    pub depth_hfov_deg: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            rgb_encoding: RgbEncoding::Jpeg,
            jpeg_quality: 90,
            pointcloud_stride: 4,
            rgb_hfov_deg: 64.7,
            gray_hfov_deg: 83.0,
            depth_hfov_deg: 75.0,
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, SynthError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SynthError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|e| SynthError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Scenario::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScenario(m));
        if self.task_id.is_empty() {
            return bad("task_id is empty".into());
        }
        if self.timeline.windows(2).any(|w| w[0].t_us > w[1].t_us) {
            return bad("timeline is not sorted by t_us".into());
        }
        let mut ids = BTreeSet::new();
        for o in &self.room.objects {
            if !ids.insert(o.id.as_str()) {
                return bad(format!("duplicate object id {:?}", o.id));
            }
            if !(o.size > 0.0 && o.size.is_finite()) || !o.position.iter().all(|c| c.is_finite()) {
                return bad(format!("object {:?} has invalid geometry", o.id));
            }
        }
        let r = &self.room;
        if !(r.desk_min[0] < r.desk_max[0] && r.desk_min[1] < r.desk_max[1] && r.wall_z > r.desk_max[1]) {
            return bad("room geometry is inconsistent".into());
        }
        if r.rest_position == r.rest_target {
            return bad("rest target equals rest position".into());
        }
        let p = &self.perception;
        let probs = [p.base_conf, p.false_positive_rate, p.action_mean, p.distractor_mean];
        if probs.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("perception probabilities must lie in [0, 1]".into());
        }
        if [p.detection_noise, p.action_std, p.distractor_std, p.gaze_noise_rad, p.hand_noise_m]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad("noise parameters must be non-negative".into());
        }
        for ev in &self.timeline {
            match &ev.kind {
                EventKind::PerformAction { action, object, .. } => {
                    if split_action(action).is_none() {
                        return bad(format!("action {action:?} is not \"verb noun\""));
                    }
                    if let Some(o) = object {
                        if !ids.contains(o.as_str()) {
                            return bad(format!("unknown object {o:?}"));
                        }
                    }
                }
                EventKind::PlaceObject { object, .. } | EventKind::RemoveObject { object } => {
                    if !ids.contains(object.as_str()) {
                        return bad(format!("unknown object {object:?}"));
                    }
                }
                EventKind::MoveTo { position: v, .. } | EventKind::LookAt { target: v, .. } => {
                    if !v.iter().all(|c| c.is_finite()) {
                        return bad(format!("non-finite {} target", ev.kind.name()));
                    }
                }
            }
        }
        if self.duration_us == Some(0) {
            return bad("duration must be positive".into());
        }
        Ok(())
    }

    pub fn duration_us(&self) -> u64 {
        self.duration_us.unwrap_or_else(|| {
            let last = self
                .timeline
                .iter()
                .map(|e| {
                    let d = match &e.kind {
                        EventKind::MoveTo { duration_us, .. }
                        | EventKind::LookAt { duration_us, .. }
                        | EventKind::PerformAction { duration_us, .. } => duration_us.unwrap_or(0),
                        _ => 0,
                    };
                    e.t_us + d
                })
                .max()
                .unwrap_or(0);
            last + 2_000_000
        })
    }

    /// Every scripted action label plus the configured extras, sorted.
    pub fn action_vocabulary(&self) -> Vec<String> {
        let mut v: BTreeSet<String> = self.perception.extra_actions.iter().cloned().collect();
        for e in &self.timeline {
            if let EventKind::PerformAction { action, .. } = &e.kind {
                v.insert(action.clone());
            }
        }
        v.into_iter().collect()
    }

    /// A scripted performance where each step runs for its given duration
    /// and cycles through its actions in equal slices.
    pub fn scripted(task_id: &str, room: RoomModel, steps: &[ScriptedStep]) -> Scenario {
        let mut timeline = Vec::new();
        let mut t = 0u64;
        for (i, step) in steps.iter().enumerate() {
            if let Some(target) = step.look_at {
                timeline.push(ScriptEvent {
                    t_us: t,
                    kind: EventKind::LookAt {
                        target,
                        duration_us: Some(step.duration_us.min(600_000)),
                    },
                });
            }
            let n = step.actions.len().max(1) as u64;
            let slice = step.duration_us / n;
            for (j, a) in step.actions.iter().enumerate() {
                timeline.push(ScriptEvent {
                    t_us: t + slice * j as u64,
                    kind: EventKind::PerformAction {
                        action: a.clone(),
                        step: Some(i),
                        object: step.object.clone(),
                        duration_us: Some(if j as u64 + 1 == n { step.duration_us - slice * j as u64 } else { slice }),
                    },
                });
            }
            t += step.duration_us;
        }
        Scenario {
            task_id: task_id.to_string(),
            name: None,
            seed: 0,
            duration_us: Some(t.max(1)),
            room,
            perception: PerceptionConfig::default(),
            sensors: SensorConfig::default(),
            timeline,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedStep {
    pub duration_us: u64,
    pub actions: Vec<String>,
    pub object: Option<String>,
    pub look_at: Option<[f64; 3]>,
}

/// `"verb noun words"` → `("verb", "noun words")`.
pub fn split_action(label: &str) -> Option<(&str, &str)> {
    let (v, n) = label.trim().split_once(' ')?;
    let n = n.trim();
    (!v.is_empty() && !n.is_empty()).then_some((v, n))
}
