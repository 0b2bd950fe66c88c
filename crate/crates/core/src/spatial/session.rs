//! Spatial queries over recorded sessions. Times are session-relative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    build_heatmap, cluster_objects, filter_by_time, merge_and_downsample, object_positions, project_gaze_sequence,
    Cluster, DepthFrame, Heatmap3D, ObjectPoint, PointCloud, RayCast, SpatialError, TimedCloud, VoxelGrid,
    DEFAULT_RESOLUTION,
};
use crate::payload::{decode_hands, CameraPayload, DetectionsPayload, GazeSample, PayloadError, Raster};
use crate::session::{SessionError, SessionMeta, SessionStore};
use crate::synth::{STREAM_CAMERA, STREAM_DEPTH, STREAM_DETECTIONS, STREAM_GAZE, STREAM_HAND, STREAM_POINTCLOUD};

/// Objects of one label closer than this belong to one cluster.
pub const DEFAULT_LINK_M: f64 = 0.15;

#[derive(Debug, Error)]
pub enum SpatialQueryError {
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("bad payload in {stream} seq {seq}: {reason}")]
    Payload { stream: String, seq: u64, reason: String },
    #[error("session has no {0} stream")]
    MissingStream(String),
    #[error("unknown heatmap layer {0:?}, expected gaze or hand")]
    UnknownLayer(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapLayer {
    Gaze,
    Hand,
}

impl std::str::FromStr for HeatmapLayer {
    type Err = SpatialQueryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaze" | STREAM_GAZE => Ok(HeatmapLayer::Gaze),
            "hand" | STREAM_HAND => Ok(HeatmapLayer::Hand),
            _ => Err(SpatialQueryError::UnknownLayer(s.to_string())),
        }
    }
}

fn bad(stream: &str, seq: u64, e: impl std::fmt::Display) -> SpatialQueryError {
    SpatialQueryError::Payload {
        stream: stream.to_string(),
        seq,
        reason: e.to_string(),
    }
}

fn require(meta: &SessionMeta, stream: &str) -> Result<(), SpatialQueryError> {
    match meta.stream(stream) {
        Some(_) => Ok(()),
        None => Err(SpatialQueryError::MissingStream(stream.to_string())),
    }
}

fn timed_clouds(store: &SessionStore, meta: &SessionMeta) -> Result<Vec<TimedCloud>, SpatialQueryError> {
    require(meta, STREAM_POINTCLOUD)?;
    store
        .read_stream(&meta.session_id, STREAM_POINTCLOUD)?
        .iter()
        .map(|m| {
            Ok(TimedCloud {
                t_us: m.ts_us.saturating_sub(meta.start_ts_us),
                cloud: PointCloud::decode(&m.payload).map_err(|e| bad(STREAM_POINTCLOUD, m.seq, e))?,
            })
        })
        .collect()
}

/// World model: every recorded point cloud merged into one voxel grid.
pub fn session_world(store: &SessionStore, session_id: &str, res: f64) -> Result<VoxelGrid, SpatialQueryError> {
    let meta = store.meta(session_id)?;
    let clouds: Vec<PointCloud> = timed_clouds(store, &meta)?.into_iter().map(|c| c.cloud).collect();
    Ok(merge_and_downsample(&clouds, res)?)
}

fn gaze_samples(store: &SessionStore, meta: &SessionMeta) -> Result<Vec<GazeSample>, SpatialQueryError> {
    require(meta, STREAM_GAZE)?;
    store
        .read_stream(&meta.session_id, STREAM_GAZE)?
        .iter()
        .map(|m| {
            let mut g = GazeSample::decode(&m.payload).map_err(|e: PayloadError| bad(STREAM_GAZE, m.seq, e))?;
            g.t_us = m.ts_us.saturating_sub(meta.start_ts_us);
            Ok(g)
        })
        .collect()
}

/// Density of gaze hits on the world model, or of hand joint positions,
/// within `[t0_us, t1_us]`.
pub fn session_heatmap(
    store: &SessionStore,
    session_id: &str,
    layer: HeatmapLayer,
    t0_us: u64,
    t1_us: u64,
    res: f64,
) -> Result<Heatmap3D, SpatialQueryError> {
    let meta = store.meta(session_id)?;
    let samples = match layer {
        HeatmapLayer::Gaze => {
            let gazes = filter_by_time(&gaze_samples(store, &meta)?, t0_us, t1_us);
            let world = session_world(store, session_id, DEFAULT_RESOLUTION)?;
            project_gaze_sequence(&gazes, &world, RayCast::for_grid(&world))
        }
        HeatmapLayer::Hand => {
            require(&meta, STREAM_HAND)?;
            let mut points = Vec::new();
            let mut times = Vec::new();
            for m in store.read_stream(session_id, STREAM_HAND)? {
                let t = m.ts_us.saturating_sub(meta.start_ts_us);
                if t < t0_us || t > t1_us {
                    continue;
                }
                for f in decode_hands(&m.payload).map_err(|e| bad(STREAM_HAND, m.seq, e))? {
                    for j in f.joints {
                        points.push([j.position.x as f32, j.position.y as f32, j.position.z as f32]);
                        times.push(t);
                    }
                }
            }
            PointCloud {
                points,
                colors: None,
                times: Some(times),
            }
        }
    };
    Ok(build_heatmap(&samples, res)?)
}

/// Depth frames paired with the camera state published at the same
/// timestamp; frame times stay in hub time.
pub fn session_depth_frames(store: &SessionStore, session_id: &str) -> Result<Vec<DepthFrame>, SpatialQueryError> {
    let meta = store.meta(session_id)?;
    require(&meta, STREAM_DEPTH)?;
    require(&meta, STREAM_CAMERA)?;
    let cams = store.read_stream(session_id, STREAM_CAMERA)?;
    let mut out = Vec::new();
    for m in store.read_stream(session_id, STREAM_DEPTH)? {
        let Ok(i) = cams.binary_search_by_key(&m.ts_us, |c| c.ts_us) else {
            continue;
        };
        out.push(DepthFrame {
            t_us: m.ts_us,
            depth: Raster::decode(&m.payload).map_err(|e| bad(STREAM_DEPTH, m.seq, e))?,
            camera: CameraPayload::decode(&cams[i].payload).map_err(|e| bad(STREAM_CAMERA, cams[i].seq, e))?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionObjects {
    pub points: Vec<ObjectPoint>,
    pub clusters: Vec<Cluster>,
    /// Detections that could not be paired with usable depth.
    pub skipped: usize,
}

/// World positions of detections (optionally one label) and their clusters.
pub fn session_objects(
    store: &SessionStore,
    session_id: &str,
    label: Option<&str>,
    link_m: f64,
) -> Result<SessionObjects, SpatialQueryError> {
    let meta = store.meta(session_id)?;
    require(&meta, STREAM_DETECTIONS)?;
    let frames = session_depth_frames(store, session_id)?;
    let mut dets = Vec::new();
    for m in store.read_stream(session_id, STREAM_DETECTIONS)? {
        let mut d = DetectionsPayload::decode(&m.payload).map_err(|e| bad(STREAM_DETECTIONS, m.seq, e))?;
        d.t_us = m.ts_us;
        if let Some(l) = label {
            d.detections.retain(|x| x.label == l);
        }
        dets.push(d);
    }
    let found = object_positions(&dets, &frames);
    let mut points = found.points;
    for p in &mut points {
        p.t_us = p.t_us.saturating_sub(meta.start_ts_us);
    }
    Ok(SessionObjects {
        clusters: cluster_objects(&points, link_m),
        points,
        skipped: found.skipped.len(),
    })
}
