//! Panoramic mosaics from RGB frames sampled around a timestep: keypoint
//! matching, robust homographies to the center frame, and compositing.

mod composite;
mod features;
mod homography;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::payload::{decode_rgb_frame, PayloadError};
use crate::session::{SessionError, SessionStore};
use crate::synth::STREAM_RGB;

pub use composite::{canvas_bounds, composite, CanvasBounds, MAX_CANVAS_SIDE};
pub use features::{
    detect_and_describe, detect_gray, match_descriptors, match_features, Feature, FeatureConfig, GrayF, Keypoint,
    Match, DESCRIPTOR_LEN,
};
pub use homography::{
    estimate_homography, fit_dlt, rotation_homography, Homography, HomographyEstimate, Pair, RansacConfig,
    MAX_CONDITION, MIN_INLIERS,
};

pub const DEFAULT_WINDOW_US: u64 = 4_000_000;
pub const DEFAULT_STRIDE: usize = 5;
pub const DEFAULT_RATIO: f32 = 0.7;

#[derive(Debug, Error)]
pub enum MosaicError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("{found} inliers, need {required}")]
    InsufficientInliers { found: usize, required: usize },
    #[error("no frames to composite")]
    NoFrames,
    #[error("canvas {width}x{height} exceeds limits")]
    CanvasTooLarge { width: i64, height: i64 },
    #[error("stride must be positive")]
    ZeroStride,
    #[error("bad frame at seq {seq}: {source}")]
    Frame { seq: u64, source: PayloadError },
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MosaicConfig {
    pub features: FeatureConfig,
    pub ratio: f32,
    pub ransac: RansacConfig,
}

impl Default for MosaicConfig {
    fn default() -> Self {
        MosaicConfig {
            features: FeatureConfig::default(),
            ratio: DEFAULT_RATIO,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MosaicFrame {
    /// Session-relative time.
    pub t_us: u64,
    pub seq: u64,
    pub image: RgbImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub t_us: u64,
    pub seq: u64,
    pub keypoints: usize,
    pub matches: usize,
    pub inliers: usize,
    /// Frame → reference map, absent when estimation failed.
    pub homography: Option<Homography>,
    /// Neighbor the map was chained through, when matching the reference
    /// directly failed.
    pub via: Option<usize>,
    pub error: Option<String>,
}

/// Everything about a mosaic except its pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosaicMeta {
    pub reference: usize,
    pub width: u32,
    pub height: u32,
    /// Reference-frame pixel coordinates of canvas pixel `(0, 0)`.
    pub origin: [i64; 2],
    pub frames: Vec<FrameReport>,
    pub frames_used: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MosaicResult {
    pub image: RgbImage,
    pub meta: MosaicMeta,
}

fn pairs_for(a: &[Feature], b: &[Feature], ratio: f32) -> Vec<Pair> {
    match_features(a, b, ratio)
        .into_iter()
        .map(|m| {
            let (ka, kb) = (a[m.a].keypoint, b[m.b].keypoint);
            ((ka.x as f64, ka.y as f64), (kb.x as f64, kb.y as f64))
        })
        .collect()
}

/// Maps every frame into `reference`. Frames that cannot be matched to the
/// reference directly are chained through their neighbor on the reference
/// side; frames that fail both are left out.
pub fn build_mosaic(frames: &[MosaicFrame], reference: usize, cfg: &MosaicConfig) -> Result<MosaicResult, MosaicError> {
    if reference >= frames.len() {
        return Err(MosaicError::NoFrames);
    }
    let feats: Vec<Vec<Feature>> = frames.iter().map(|f| detect_and_describe(&f.image, &cfg.features)).collect();
    let mut reports: Vec<FrameReport> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| FrameReport {
            index: i,
            t_us: f.t_us,
            seq: f.seq,
            keypoints: feats[i].len(),
            matches: 0,
            inliers: 0,
            homography: None,
            via: None,
            error: None,
        })
        .collect();
    reports[reference].homography = Some(Homography::identity());
    reports[reference].inliers = feats[reference].len();
    let order = (0..reference).rev().chain(reference + 1..frames.len());
    for i in order {
        let neighbor = if i < reference { i + 1 } else { i - 1 };
        let mut ransac = cfg.ransac.clone();
        ransac.seed = cfg.ransac.seed.wrapping_add(i as u64);
        let direct_pairs = pairs_for(&feats[i], &feats[reference], cfg.ratio);
        reports[i].matches = direct_pairs.len();
        match estimate_homography(&direct_pairs, &ransac) {
            Ok(est) => {
                reports[i].inliers = est.inlier_count;
                reports[i].homography = Some(est.homography);
                continue;
            }
            Err(e) => reports[i].error = Some(e.to_string()),
        }
        let Some(hn) = reports[neighbor].homography.filter(|_| neighbor != reference) else {
            continue;
        };
        let pairs = pairs_for(&feats[i], &feats[neighbor], cfg.ratio);
        let chained = estimate_homography(&pairs, &ransac).and_then(|est| Ok((est.inlier_count, hn.after(&est.homography)?)));
        match chained {
            Ok((inliers, h)) => {
                reports[i].matches = pairs.len();
                reports[i].inliers = inliers;
                reports[i].homography = Some(h);
                reports[i].via = Some(neighbor);
                reports[i].error = None;
            }
            Err(e) => reports[i].error = Some(e.to_string()),
        }
    }
    let homs: Vec<Option<Homography>> = reports.iter().map(|r| r.homography).collect();
    let images: Vec<&RgbImage> = frames.iter().map(|f| &f.image).collect();
    let (image, bounds) = composite(&images, &homs)?;
    let frames_used = reports.iter().filter(|r| r.homography.is_some()).map(|r| r.index).collect();
    Ok(MosaicResult {
        meta: MosaicMeta {
            reference,
            width: image.width(),
            height: image.height(),
            origin: [bounds.x0, bounds.y0],
            frames: reports,
            frames_used,
        },
        image,
    })
}

/// Picks frames at `t_us ± window_us / 2` (session-relative): the frame
/// nearest `t_us`, plus every `stride`-th frame outward from it. Returns
/// `(t_us, seq)` in time order and the index of the center frame.
pub fn sample_window(times: &[(u64, u64)], t_us: u64, window_us: u64, stride: usize) -> Result<(Vec<(u64, u64)>, usize), MosaicError> {
    if stride == 0 {
        return Err(MosaicError::ZeroStride);
    }
    let lo = t_us.saturating_sub(window_us / 2);
    let hi = t_us.saturating_add(window_us / 2);
    let inside: Vec<(u64, u64)> = times.iter().copied().filter(|(t, _)| (lo..=hi).contains(t)).collect();
    let center = inside
        .iter()
        .enumerate()
        .min_by_key(|(_, (t, _))| t.abs_diff(t_us))
        .map(|(i, _)| i)
        .ok_or(MosaicError::NoFrames)?;
    let picked: Vec<(u64, u64)> = inside
        .iter()
        .enumerate()
        .filter(|(i, _)| i.abs_diff(center) % stride == 0)
        .map(|(_, f)| *f)
        .collect();
    let reference = picked.iter().position(|f| *f == inside[center]).expect("center is always picked");
    Ok((picked, reference))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MosaicRequest {
    pub t_us: u64,
    pub window_us: u64,
    pub stride: usize,
    pub seed: u64,
    pub stream: String,
}

impl MosaicRequest {
    pub fn at(t_us: u64) -> MosaicRequest {
        MosaicRequest {
            t_us,
            window_us: DEFAULT_WINDOW_US,
            stride: DEFAULT_STRIDE,
            seed: 0,
            stream: STREAM_RGB.into(),
        }
    }
}

/// Reads and decodes the sampled window of a recorded session.
pub fn session_frames(store: &SessionStore, session_id: &str, req: &MosaicRequest) -> Result<(Vec<MosaicFrame>, usize), MosaicError> {
    let meta = store.meta(session_id)?;
    let msgs = store.read_stream(session_id, &req.stream)?;
    let times: Vec<(u64, u64)> = msgs.iter().map(|m| (m.ts_us.saturating_sub(meta.start_ts_us), m.seq)).collect();
    let (picked, reference) = sample_window(&times, req.t_us, req.window_us, req.stride)?;
    let mut frames = Vec::with_capacity(picked.len());
    for (t_us, seq) in picked {
        let m = msgs.iter().find(|m| m.seq == seq).expect("sampled from this stream");
        let image = decode_rgb_frame(&m.payload).map_err(|source| MosaicError::Frame { seq, source })?;
        frames.push(MosaicFrame { t_us, seq, image });
    }
    Ok((frames, reference))
}

pub fn session_mosaic(store: &SessionStore, session_id: &str, req: &MosaicRequest) -> Result<MosaicResult, MosaicError> {
    let (frames, reference) = session_frames(store, session_id, req)?;
    let mut cfg = MosaicConfig::default();
    cfg.ransac.seed = req.seed;
    build_mosaic(&frames, reference, &cfg)
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory png encode");
    out.into_inner()
}
