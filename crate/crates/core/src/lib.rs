//! Telemetry hub and analytics backend for AR task-guidance sessions.
//!
//! * [`hub`]: named-stream broker with bounded retention and fan-out.
//! * [`record`] / [`session`]: on-disk session archives, recording and replay.
//! * [`synth`]: deterministic headset and perception simulator.
//! * [`spatial`], [`temporal`], [`mosaic`], [`reasoning`]: offline and live analytics.

pub mod hub;
pub mod mosaic;
pub mod payload;
pub mod reasoning;
pub mod record;
pub mod session;
pub mod spatial;
pub mod synth;
pub mod temporal;
pub mod wire;

pub use hub::{Hub, HubConfig, HubError, StartAt, StreamInfo, Subscription};
pub use wire::{ContentType, StreamId, StreamMessage};
