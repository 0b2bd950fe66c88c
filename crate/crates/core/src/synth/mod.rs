//! Deterministic headset simulator: scripted scenarios rendered into the
//! same streams a live headset and its perception models would publish.

mod generate;
mod perception;
mod render;
mod scenario;
mod scene;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::ContentType;

pub use generate::{
    generate_session, generate_to_archive, generate_to_hub, GenerateOptions, GenerateReport, HubSink, Pacing,
    SessionSink, VecSink,
};
pub use perception::{action_stub, perception_stub, project_square};
pub use render::{depth_mm, render_frame, trace, FrameSpec, Sensor, View};
pub use scenario::{
    split_action, EventKind, ObjectSpec, PerceptionConfig, RgbEncoding, RoomModel, Scenario, ScriptEvent,
    ScriptedStep, SensorConfig,
};
pub use scene::{look_rotation, ActionSpan, Scene, SceneState};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Hub(#[from] crate::hub::HubError),
    #[error(transparent)]
    Session(#[from] crate::session::SessionError),
    #[error("sink failed: {0}")]
    Sink(String),
}

/// Streams produced by the simulator, in emission order for equal
/// timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthStream {
    Rgb,
    Depth,
    Camera,
    Pointcloud,
    IrAb,
    Gray,
    Gaze,
    Hand,
    Imu,
    Detections,
    Actions,
    Truth,
}

pub const STREAM_RGB: &str = "main:rgb";
pub const STREAM_DEPTH: &str = "main:depth";
pub const STREAM_CAMERA: &str = "main:camera";
pub const STREAM_POINTCLOUD: &str = "main:pointcloud";
pub const STREAM_IR_AB: &str = "main:ir_ab";
pub const STREAM_GRAY: &str = "main:gray";
pub const STREAM_GAZE: &str = "main:gaze";
pub const STREAM_HAND: &str = "main:hand";
pub const STREAM_IMU: &str = "main:imu";
pub const STREAM_DETECTIONS: &str = "model:detections";
pub const STREAM_ACTIONS: &str = "model:actions";
pub const STREAM_TRUTH: &str = "truth";
pub const STREAM_STEPS: &str = "model:steps";

impl SynthStream {
    pub const ALL: [SynthStream; 12] = [
        SynthStream::Rgb,
        SynthStream::Depth,
        SynthStream::Camera,
        SynthStream::Pointcloud,
        SynthStream::IrAb,
        SynthStream::Gray,
        SynthStream::Gaze,
        SynthStream::Hand,
        SynthStream::Imu,
        SynthStream::Detections,
        SynthStream::Actions,
        SynthStream::Truth,
    ];

    /// Streams that need no rendering.
    pub const LIGHT: [SynthStream; 6] = [
        SynthStream::Gaze,
        SynthStream::Hand,
        SynthStream::Imu,
        SynthStream::Detections,
        SynthStream::Actions,
        SynthStream::Truth,
    ];

    pub fn stream_id(self) -> &'static str {
        match self {
            SynthStream::Rgb => STREAM_RGB,
            SynthStream::Depth => STREAM_DEPTH,
            SynthStream::Camera => STREAM_CAMERA,
            SynthStream::Pointcloud => STREAM_POINTCLOUD,
            SynthStream::IrAb => STREAM_IR_AB,
            SynthStream::Gray => STREAM_GRAY,
            SynthStream::Gaze => STREAM_GAZE,
            SynthStream::Hand => STREAM_HAND,
            SynthStream::Imu => STREAM_IMU,
            SynthStream::Detections => STREAM_DETECTIONS,
            SynthStream::Actions => STREAM_ACTIONS,
            SynthStream::Truth => STREAM_TRUTH,
        }
    }

    pub fn content_type(self) -> ContentType {
        match self {
            SynthStream::Rgb | SynthStream::IrAb | SynthStream::Gray => ContentType::JpegFrame,
            SynthStream::Depth => ContentType::Depth16,
            SynthStream::Camera | SynthStream::Truth => ContentType::Json,
            SynthStream::Pointcloud => ContentType::Pointcloud,
            SynthStream::Gaze => ContentType::Gaze,
            SynthStream::Hand => ContentType::Hand,
            SynthStream::Imu => ContentType::Imu,
            SynthStream::Detections => ContentType::Detections,
            SynthStream::Actions => ContentType::Actions,
        }
    }

    pub fn rate_hz(self) -> f64 {
        match self {
            SynthStream::Rgb => FrameSpec::of(Sensor::Rgb).fps,
            SynthStream::Depth | SynthStream::Camera | SynthStream::Pointcloud => FrameSpec::of(Sensor::IrDepth).fps,
            SynthStream::IrAb => FrameSpec::of(Sensor::IrAb).fps,
            SynthStream::Gray => FrameSpec::of(Sensor::Grayscale).fps,
            SynthStream::Gaze | SynthStream::Hand => 30.0,
            SynthStream::Imu => 50.0,
            SynthStream::Detections | SynthStream::Actions | SynthStream::Truth => 10.0,
        }
    }

    pub fn tick_time_us(self, i: u64) -> u64 {
        (i as f64 * 1e6 / self.rate_hz()).floor() as u64
    }
}

impl std::str::FromStr for SynthStream {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SynthStream::ALL
            .into_iter()
            .find(|k| k.stream_id() == s || serde_json::to_value(k).ok().and_then(|v| v.as_str().map(|x| x == s)) == Some(true))
            .ok_or_else(|| format!("unknown synthetic stream {s:?}"))
    }
}
