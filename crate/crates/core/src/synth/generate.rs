use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::perception::{action_stub, perception_stub};
use super::render::{render_frame, FrameSpec, Sensor};
use super::scenario::{RgbEncoding, Scenario};
use super::scene::{Scene, SceneState};
use super::{SynthError, SynthStream};
use crate::hub::Hub;
use crate::payload::{
    encode_hands, encode_jpeg, ActionsPayload, CameraPayload, DetectionsPayload, GazeSample, Hand, HandFrame,
    HandJoint, ImuSample, Intrinsics, Raster, TruthObject, TruthPayload, HAND_JOINTS,
};
use crate::session::{ArchiveWriter, SessionMeta};
use crate::spatial::depth_to_cloud;
use crate::wire::ContentType;

/// Destination of generated messages.
pub trait SessionSink {
    /// Timestamp that scenario time zero maps to.
    fn base_ts_us(&mut self, streams: &[SynthStream]) -> Result<u64, SynthError>;
    fn declare(&mut self, stream_id: &str, content_type: ContentType) -> Result<(), SynthError>;
    fn emit(&mut self, stream_id: &str, ts_us: u64, offset_us: u64, payload: Bytes) -> Result<(), SynthError>;
}

#[derive(Clone, Debug, Default)]
pub struct GenerateOptions {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    /// Restricts output to these streams; `None` means all.
    pub streams: Option<BTreeSet<SynthStream>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub base_ts_us: u64,
    pub duration_us: u64,
    pub messages: BTreeMap<String, u64>,
    pub payload_bytes: u64,
}

/// In-memory sink, mainly for tests.
#[derive(Default)]
pub struct VecSink {
    pub streams: BTreeMap<String, (ContentType, Vec<(u64, Bytes)>)>,
}

impl SessionSink for VecSink {
    fn base_ts_us(&mut self, _: &[SynthStream]) -> Result<u64, SynthError> {
        Ok(0)
    }

    fn declare(&mut self, stream_id: &str, content_type: ContentType) -> Result<(), SynthError> {
        self.streams.entry(stream_id.to_string()).or_insert((content_type, Vec::new()));
        Ok(())
    }

    fn emit(&mut self, stream_id: &str, ts_us: u64, _: u64, payload: Bytes) -> Result<(), SynthError> {
        self.streams.get_mut(stream_id).expect("declared").1.push((ts_us, payload));
        Ok(())
    }
}

struct ArchiveSink(ArchiveWriter);

impl SessionSink for ArchiveSink {
    fn base_ts_us(&mut self, _: &[SynthStream]) -> Result<u64, SynthError> {
        Ok(0)
    }

    fn declare(&mut self, stream_id: &str, content_type: ContentType) -> Result<(), SynthError> {
        Ok(self.0.add_stream(stream_id, content_type)?)
    }

    fn emit(&mut self, stream_id: &str, ts_us: u64, _: u64, payload: Bytes) -> Result<(), SynthError> {
        self.0.append(stream_id, ts_us, payload)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pacing {
    /// Publish each message when its scenario time comes due.
    Realtime,
    /// Publish as fast as possible.
    Fast,
}

pub struct HubSink {
    hub: Arc<Hub>,
    pacing: Pacing,
    started: Option<Instant>,
}

impl HubSink {
    pub fn new(hub: Arc<Hub>, pacing: Pacing) -> HubSink {
        HubSink {
            hub,
            pacing,
            started: None,
        }
    }
}

impl SessionSink for HubSink {
    fn base_ts_us(&mut self, streams: &[SynthStream]) -> Result<u64, SynthError> {
        // stay ahead of anything a previous run already published
        let mut base = self.hub.now_us();
        for s in streams {
            if let Ok(info) = self.hub.info(s.stream_id()) {
                if info.message_count > 0 {
                    base = base.max(info.last_ts_us + 1);
                }
            }
        }
        self.started = Some(Instant::now());
        Ok(base)
    }

    fn declare(&mut self, stream_id: &str, content_type: ContentType) -> Result<(), SynthError> {
        self.hub.create_stream(stream_id, content_type)?;
        Ok(())
    }

    fn emit(&mut self, stream_id: &str, ts_us: u64, offset_us: u64, payload: Bytes) -> Result<(), SynthError> {
        if self.pacing == Pacing::Realtime {
            let due = self.started.expect("base requested first") + Duration::from_micros(offset_us);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        self.hub.publish(stream_id, ts_us, payload)?;
        Ok(())
    }
}

fn stream_rng(seed: u64, s: SynthStream) -> ChaCha8Rng {
    let salt = (s as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

struct Cameras {
    rgb: Intrinsics,
    gray: Intrinsics,
    depth: Intrinsics,
}

/// Runs the scenario and hands every message to `sink` in timestamp order.
pub fn generate_session(
    scenario: &Scenario,
    opts: &GenerateOptions,
    sink: &mut dyn SessionSink,
) -> Result<GenerateReport, SynthError> {
    scenario.validate()?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    let scene = Scene::new(scenario);
    let duration = scene.duration_us;
    let mut streams: Vec<SynthStream> = SynthStream::ALL
        .into_iter()
        .filter(|s| opts.streams.as_ref().is_none_or(|set| set.contains(s)))
        .collect();
    if scenario.sensors.pointcloud_stride == 0 {
        streams.retain(|s| *s != SynthStream::Pointcloud);
    }
    let base = sink.base_ts_us(&streams)?;
    for s in &streams {
        sink.declare(s.stream_id(), s.content_type())?;
    }
    let sensors = &scenario.sensors;
    let rgb_spec = FrameSpec::of(Sensor::Rgb);
    let gray_spec = FrameSpec::of(Sensor::Grayscale);
    let depth_spec = FrameSpec::of(Sensor::IrDepth);
    let cams = Cameras {
        rgb: Intrinsics::from_hfov(rgb_spec.width, rgb_spec.height, sensors.rgb_hfov_deg),
        gray: Intrinsics::from_hfov(gray_spec.width, gray_spec.height, sensors.gray_hfov_deg),
        depth: Intrinsics::from_hfov(depth_spec.width, depth_spec.height, sensors.depth_hfov_deg),
    };
    let vocabulary = scenario.action_vocabulary();
    let mut rngs: Vec<ChaCha8Rng> = streams.iter().map(|&s| stream_rng(seed, s)).collect();
    let mut ticks = vec![0u64; streams.len()];
    let mut report = GenerateReport {
        base_ts_us: base,
        duration_us: duration,
        ..GenerateReport::default()
    };
    let mut depth_cache: Option<(u64, Raster)> = None;
    let mut state_cache: Option<SceneState> = None;

    loop {
        let next = (0..streams.len())
            .map(|i| (streams[i].tick_time_us(ticks[i]), i))
            .filter(|(t, _)| *t < duration)
            .min();
        let Some((t, i)) = next else { break };
        ticks[i] += 1;
        let kind = streams[i];
        if state_cache.as_ref().is_none_or(|s| s.t_us != t) {
            state_cache = Some(scene.at(t));
        }
        let state = state_cache.as_ref().expect("cached");
        let ts = base + t;
        let rng = &mut rngs[i];
        let mut depth_at = |t: u64, state: &SceneState| -> Raster {
            if let Some((ct, r)) = &depth_cache {
                if *ct == t {
                    return r.clone();
                }
            }
            let r = render_frame(&scenario.room, &scene.objects, state, &depth_spec, &cams.depth);
            depth_cache = Some((t, r.clone()));
            r
        };
        let payload: Option<Vec<u8>> = match kind {
            SynthStream::Rgb => {
                let r = render_frame(&scenario.room, &scene.objects, state, &rgb_spec, &cams.rgb);
                Some(match sensors.rgb_encoding {
                    RgbEncoding::Jpeg => encode_jpeg(&r.to_rgb_image(), sensors.jpeg_quality),
                    RgbEncoding::Raw => r.encode(),
                })
            }
            SynthStream::Gray => {
                Some(render_frame(&scenario.room, &scene.objects, state, &gray_spec, &cams.gray).encode())
            }
            SynthStream::IrAb => {
                let spec = FrameSpec::of(Sensor::IrAb);
                Some(render_frame(&scenario.room, &scene.objects, state, &spec, &cams.depth).encode())
            }
            SynthStream::Depth => Some(depth_at(t, state).encode()),
            SynthStream::Camera => Some(camera_payload(ts, state, &cams).encode()),
            SynthStream::Pointcloud => {
                let depth = depth_at(t, state);
                let cam = camera_payload(ts, state, &cams);
                let cloud = depth_to_cloud(&depth, &cam, sensors.pointcloud_stride).expect("depth raster");
                Some(cloud.encode())
            }
            SynthStream::Gaze => Some(gaze_sample(ts, state, scenario.perception.gaze_noise_rad, rng).encode()),
            SynthStream::Hand => {
                let frames = hand_frames(ts, state, &scene, scenario.perception.hand_noise_m, rng);
                (!frames.is_empty()).then(|| encode_hands(&frames))
            }
            SynthStream::Imu => Some(imu_sample(ts, state, rng).encode()),
            SynthStream::Detections => {
                let detections = perception_stub(
                    &state.objects,
                    &scene.objects,
                    &state.head,
                    &state.rotation,
                    &cams.rgb,
                    &scenario.perception,
                    rng,
                );
                Some(DetectionsPayload { t_us: ts, detections }.encode())
            }
            SynthStream::Actions => {
                let truth = state.action.as_ref().map(|a| a.action.as_str());
                let actions = action_stub(truth, &vocabulary, &scenario.perception, rng);
                Some(ActionsPayload { t_us: ts, actions }.encode())
            }
            SynthStream::Truth => Some(
                TruthPayload {
                    t_us: ts,
                    step: state.step,
                    action: state.action.as_ref().map(|a| a.action.clone()),
                    objects: state
                        .objects
                        .iter()
                        .map(|&(idx, p)| TruthObject {
                            id: scene.objects[idx].id.clone(),
                            label: scene.objects[idx].label.clone(),
                            position: p.into(),
                        })
                        .collect(),
                }
                .encode(),
            ),
        };
        if let Some(p) = payload {
            report.payload_bytes += p.len() as u64;
            *report.messages.entry(kind.stream_id().to_string()).or_default() += 1;
            sink.emit(kind.stream_id(), ts, t, Bytes::from(p))?;
        }
    }
    Ok(report)
}

fn camera_payload(ts: u64, state: &SceneState, cams: &Cameras) -> CameraPayload {
    CameraPayload {
        t_us: ts,
        pose: state.pose(),
        color: cams.rgb,
        depth: cams.depth,
    }
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, std: f64) -> Vector3<f64> {
    if std == 0.0 {
        return Vector3::zeros();
    }
    let n = Normal::new(0.0, std).expect("finite");
    Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

fn gaze_sample<R: Rng + ?Sized>(ts: u64, state: &SceneState, noise: f64, rng: &mut R) -> GazeSample {
    let dir = (state.target - state.head).normalize();
    let dir = (dir + jitter(rng, noise)).normalize();
    GazeSample {
        t_us: ts,
        origin: state.head,
        direction: dir,
    }
}

fn imu_sample<R: Rng + ?Sized>(ts: u64, state: &SceneState, rng: &mut R) -> ImuSample {
    let inv = state.rotation.inverse();
    ImuSample {
        t_us: ts,
        accel: inv * Vector3::new(0.0, 9.81, 0.0) + jitter(rng, 0.02),
        gyro: jitter(rng, 0.001),
        mag: inv * Vector3::new(0.2, -0.4, 0.1),
    }
}

/// Both hands while an action is in progress, posed near the action's
/// object or in front of the performer.
fn hand_frames<R: Rng + ?Sized>(ts: u64, state: &SceneState, scene: &Scene, noise: f64, rng: &mut R) -> Vec<HandFrame> {
    let Some(action) = &state.action else {
        return Vec::new();
    };
    let anchor = action
        .object
        .and_then(|i| scene.object_position(i, state.t_us))
        .unwrap_or_else(|| state.head + state.forward() * 0.45 + Vector3::new(0.0, -0.35, 0.0));
    let phase = state.t_us as f64 * 1e-6 * 2.0;
    [(Hand::Left, -0.12), (Hand::Right, 0.08)]
        .into_iter()
        .map(|(hand, dx)| {
            let wrist = anchor + Vector3::new(dx + 0.02 * phase.sin(), 0.06, -0.1 + 0.02 * phase.cos()) + jitter(rng, noise);
            let orientation = UnitQuaternion::from_euler_angles(0.0, 0.3 * phase.sin(), 0.0);
            let joints = (0..HAND_JOINTS)
                .map(|j| {
                    let offset = if j < 2 {
                        Vector3::new(0.0, 0.0, j as f64 * 0.03)
                    } else {
                        let finger = (j - 2) / 5;
                        let seg = (j - 2) % 5;
                        Vector3::new((finger as f64 - 2.0) * 0.018, 0.0, 0.04 + seg as f64 * 0.022)
                    };
                    HandJoint {
                        position: wrist + orientation * offset,
                        orientation,
                    }
                })
                .collect();
            HandFrame { t_us: ts, hand, joints }
        })
        .collect()
}

/// Writes a complete archive under `root`.
pub fn generate_to_archive(
    scenario: &Scenario,
    opts: &GenerateOptions,
    root: &Path,
) -> Result<(SessionMeta, GenerateReport), SynthError> {
    let name = scenario.name.clone().unwrap_or_else(|| scenario.task_id.clone());
    let writer = ArchiveWriter::create(root, &name, Some(scenario.task_id.clone()))?;
    let mut sink = ArchiveSink(writer);
    let report = generate_session(scenario, opts, &mut sink)?;
    let meta = sink.0.finish()?;
    Ok((meta, report))
}

pub fn generate_to_hub(
    scenario: &Scenario,
    opts: &GenerateOptions,
    hub: &Arc<Hub>,
    pacing: Pacing,
) -> Result<GenerateReport, SynthError> {
    generate_session(scenario, opts, &mut HubSink::new(hub.clone(), pacing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::{decode_hands, decode_rgb_frame};
    use crate::synth::scenario::{EventKind, ObjectSpec, RoomModel, ScriptEvent};

    fn short_scenario() -> Scenario {
        let mut room = RoomModel::default();
        room.objects.push(ObjectSpec {
            id: "board".into(),
            label: "cutting board".into(),
            position: [0.0, 0.76, 0.65],
            size: 0.2,
            color: [210, 180, 120],
            present: true,
        });
        Scenario {
            task_id: "demo".into(),
            name: None,
            seed: 5,
            duration_us: Some(2_000_000),
            room,
            perception: Default::default(),
            sensors: Default::default(),
            timeline: vec![ScriptEvent {
                t_us: 500_000,
                kind: EventKind::PerformAction {
                    action: "place tortilla".into(),
                    step: Some(0),
                    object: Some("board".into()),
                    duration_us: Some(1_000_000),
                },
            }],
        }
    }

    fn run(s: &Scenario, opts: &GenerateOptions) -> VecSink {
        let mut sink = VecSink::default();
        generate_session(s, opts, &mut sink).unwrap();
        sink
    }

    #[test]
    fn rates_follow_stream_specs() {
        let sink = run(&short_scenario(), &GenerateOptions::default());
        let count = |s: &str| sink.streams[s].1.len();
        assert_eq!(count("main:rgb"), 15);
        assert_eq!(count("main:depth"), 10);
        assert_eq!(count("main:camera"), 10);
        assert_eq!(count("main:gray"), 2);
        assert_eq!(count("main:gaze"), 60);
        assert_eq!(count("main:imu"), 100);
        assert_eq!(count("model:detections"), 20);
        // hands only while the action runs
        assert_eq!(count("main:hand"), 30);
        for (_, (_, msgs)) in &sink.streams {
            assert!(msgs.windows(2).all(|w| w[0].0 <= w[1].0));
        }
        let (_, hands) = &sink.streams["main:hand"];
        let frames = decode_hands(&hands[0].1).unwrap();
        assert_eq!(frames.len(), 2);
        for f in frames {
            f.validate().unwrap();
        }
        let img = decode_rgb_frame(&sink.streams["main:rgb"].1[0].1).unwrap();
        assert_eq!(img.dimensions(), (760, 428));
    }

    #[test]
    fn same_seed_same_bytes_other_seed_differs() {
        let s = short_scenario();
        let light = GenerateOptions {
            seed: None,
            streams: Some(SynthStream::LIGHT.into_iter().collect()),
        };
        let a = run(&s, &light);
        let b = run(&s, &light);
        assert_eq!(a.streams, b.streams);
        let c = run(
            &s,
            &GenerateOptions {
                seed: Some(6),
                ..light.clone()
            },
        );
        assert_ne!(a.streams["model:actions"], c.streams["model:actions"]);
    }

    #[test]
    fn empty_timeline_fixed_gaze_and_no_detections() {
        let s = Scenario {
            timeline: vec![],
            room: RoomModel::default(),
            ..short_scenario()
        };
        let sink = run(
            &s,
            &GenerateOptions {
                seed: None,
                streams: Some(SynthStream::LIGHT.into_iter().collect()),
            },
        );
        let gazes: Vec<GazeSample> = sink.streams["main:gaze"].1.iter().map(|(_, p)| GazeSample::decode(p).unwrap()).collect();
        assert!(!gazes.is_empty());
        assert!(gazes.iter().all(|g| g.origin == gazes[0].origin && g.direction == gazes[0].direction));
        for (_, p) in &sink.streams["model:detections"].1 {
            let d = DetectionsPayload::decode(p).unwrap();
            // only injected false positives can appear without objects
            assert!(d.detections.iter().all(|x| ["bowl", "spoon"].contains(&x.label.as_str())));
        }
        assert!(sink.streams["main:hand"].1.is_empty());
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = short_scenario();
        s.timeline.push(ScriptEvent {
            t_us: 0,
            kind: EventKind::RemoveObject { object: "board".into() },
        });
        assert!(matches!(
            generate_session(&s, &GenerateOptions::default(), &mut VecSink::default()),
            Err(SynthError::InvalidScenario(_))
        ));
        let mut s = short_scenario();
        s.timeline[0].kind = EventKind::RemoveObject { object: "ghost".into() };
        assert!(s.validate().is_err());
    }
}
