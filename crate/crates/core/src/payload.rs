//! Payload schemas carried on hub streams, with their encoders and
//! validating decoders.
//!
//! Binary payloads are little-endian. Model outputs and control records are
//! JSON documents.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HAND_JOINTS: usize = 26;
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PayloadError {
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("json: {0}")]
    Json(String),
}

fn invalid(msg: impl Into<String>) -> PayloadError {
    PayloadError::Invalid(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        if self.buf.len() - self.pos < n {
            return Err(PayloadError::Length {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, PayloadError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PayloadError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, PayloadError> {
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(invalid("non-finite float"))
        }
    }

    fn vec3(&mut self) -> Result<Vector3<f64>, PayloadError> {
        Ok(Vector3::new(self.f32()? as f64, self.f32()? as f64, self.f32()? as f64))
    }

    fn finish(&self) -> Result<(), PayloadError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(invalid(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

fn put_vec3(out: &mut Vec<u8>, v: &Vector3<f64>) {
    for c in v.iter() {
        out.extend_from_slice(&(*c as f32).to_le_bytes());
    }
}

// ---------------------------------------------------------------- gaze

#[derive(Clone, Debug, PartialEq)]
pub struct GazeSample {
    pub t_us: u64,
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub direction: Vector3<f64>,
}

impl GazeSample {
    pub const ENCODED_LEN: usize = 8 + 24;

    pub fn validate(&self) -> Result<(), PayloadError> {
        let n = self.direction.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(invalid(format!("gaze direction norm {n}")));
        }
        if !self.origin.iter().all(|c| c.is_finite()) {
            return Err(invalid("gaze origin not finite"));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENCODED_LEN);
        out.extend_from_slice(&self.t_us.to_le_bytes());
        put_vec3(&mut out, &self.origin);
        put_vec3(&mut out, &self.direction);
        out
    }

    /// Decodes and renormalizes the direction (f32 storage loses precision).
    pub fn decode(buf: &[u8]) -> Result<GazeSample, PayloadError> {
        let mut r = Reader::new(buf);
        let t_us = r.u64()?;
        let origin = r.vec3()?;
        let direction = r.vec3()?;
        r.finish()?;
        let n = direction.norm();
        if (n - 1.0).abs() > 1e-3 {
            return Err(invalid(format!("gaze direction norm {n}")));
        }
        Ok(GazeSample {
            t_us,
            origin,
            direction: direction / n,
        })
    }
}

// ---------------------------------------------------------------- hands

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandJoint {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandFrame {
    pub t_us: u64,
    pub hand: Hand,
    pub joints: Vec<HandJoint>,
}

impl HandFrame {
    pub const ENCODED_LEN: usize = 8 + 1 + HAND_JOINTS * 28;

    pub fn validate(&self) -> Result<(), PayloadError> {
        if self.joints.len() != HAND_JOINTS {
            return Err(invalid(format!("{} joints, expected {HAND_JOINTS}", self.joints.len())));
        }
        for j in &self.joints {
            let n = j.orientation.quaternion().norm();
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(invalid(format!("joint quaternion norm {n}")));
            }
        }
        Ok(())
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.t_us.to_le_bytes());
        out.push(match self.hand {
            Hand::Left => 0,
            Hand::Right => 1,
        });
        for j in &self.joints {
            put_vec3(out, &j.position);
            let q = j.orientation.quaternion();
            for c in [q.w, q.i, q.j, q.k] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }

    fn decode_from(r: &mut Reader) -> Result<HandFrame, PayloadError> {
        let t_us = r.u64()?;
        let hand = match r.u8()? {
            0 => Hand::Left,
            1 => Hand::Right,
            x => return Err(invalid(format!("hand tag {x}"))),
        };
        let mut joints = Vec::with_capacity(HAND_JOINTS);
        for _ in 0..HAND_JOINTS {
            let position = r.vec3()?;
            let (w, i, j, k) = (r.f32()? as f64, r.f32()? as f64, r.f32()? as f64, r.f32()? as f64);
            let q = nalgebra::Quaternion::new(w, i, j, k);
            if (q.norm() - 1.0).abs() > 1e-3 {
                return Err(invalid("joint quaternion not unit"));
            }
            joints.push(HandJoint {
                position,
                orientation: UnitQuaternion::from_quaternion(q),
            });
        }
        Ok(HandFrame { t_us, hand, joints })
    }
}

/// All tracked hands at one instant: `u8 count` followed by frames.
pub fn encode_hands(frames: &[HandFrame]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + frames.len() * HandFrame::ENCODED_LEN);
    out.push(frames.len() as u8);
    for f in frames {
        f.encode_into(&mut out);
    }
    out
}

pub fn decode_hands(buf: &[u8]) -> Result<Vec<HandFrame>, PayloadError> {
    let mut r = Reader::new(buf);
    let n = r.u8()?;
    if n > 2 {
        return Err(invalid(format!("{n} hands")));
    }
    let frames = (0..n).map(|_| HandFrame::decode_from(&mut r)).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(frames)
}

// ---------------------------------------------------------------- imu

#[derive(Clone, Debug, PartialEq)]
pub struct ImuSample {
    pub t_us: u64,
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
    pub mag: Vector3<f64>,
}

impl ImuSample {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 36);
        out.extend_from_slice(&self.t_us.to_le_bytes());
        put_vec3(&mut out, &self.accel);
        put_vec3(&mut out, &self.gyro);
        put_vec3(&mut out, &self.mag);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<ImuSample, PayloadError> {
        let mut r = Reader::new(buf);
        let s = ImuSample {
            t_us: r.u64()?,
            accel: r.vec3()?,
            gyro: r.vec3()?,
            mag: r.vec3()?,
        };
        r.finish()?;
        Ok(s)
    }
}

// ---------------------------------------------------------------- rasters

pub const RASTER_HEADER_LEN: usize = 12;
pub const MAX_RASTER_PIXELS: u64 = 64 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelFormat {
    Rgb8,
    Gray8,
    /// Millimeters, 0 = invalid.
    Depth16,
}

impl PixelFormat {
    pub fn tag(self) -> u32 {
        match self {
            PixelFormat::Rgb8 => 0,
            PixelFormat::Gray8 => 1,
            PixelFormat::Depth16 => 2,
        }
    }

    pub fn from_tag(t: u32) -> Option<Self> {
        match t {
            0 => Some(PixelFormat::Rgb8),
            1 => Some(PixelFormat::Gray8),
            2 => Some(PixelFormat::Depth16),
            _ => None,
        }
    }

    pub fn bytes_per_pixel(self) -> usize {
        match self {
            PixelFormat::Rgb8 => 3,
            PixelFormat::Gray8 => 1,
            PixelFormat::Depth16 => 2,
        }
    }
}

/// Uncompressed raster: `u32 width, u32 height, u32 format` then rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub format: PixelFormat,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, format: PixelFormat) -> Raster {
        Raster {
            width,
            height,
            format,
            data: vec![0; width as usize * height as usize * format.bytes_per_pixel()],
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RASTER_HEADER_LEN + self.data.len());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.format.tag().to_le_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Raster, PayloadError> {
        let mut r = Reader::new(buf);
        let width = r.u32()?;
        let height = r.u32()?;
        let tag = r.u32()?;
        let format = PixelFormat::from_tag(tag).ok_or_else(|| invalid(format!("pixel format {tag}")))?;
        let pixels = width as u64 * height as u64;
        if pixels == 0 || pixels > MAX_RASTER_PIXELS {
            return Err(invalid(format!("raster size {width}x{height}")));
        }
        let len = pixels as usize * format.bytes_per_pixel();
        let data = r.take(len)?.to_vec();
        r.finish()?;
        Ok(Raster {
            width,
            height,
            format,
            data,
        })
    }

    pub fn depth_at(&self, x: u32, y: u32) -> u16 {
        debug_assert_eq!(self.format, PixelFormat::Depth16);
        let i = 2 * (y as usize * self.width as usize + x as usize);
        u16::from_le_bytes([self.data[i], self.data[i + 1]])
    }

    pub fn set_depth(&mut self, x: u32, y: u32, mm: u16) {
        let i = 2 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 2].copy_from_slice(&mm.to_le_bytes());
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        let (w, h) = (self.width, self.height);
        match self.format {
            PixelFormat::Rgb8 => image::RgbImage::from_raw(w, h, self.data.clone()).expect("sized"),
            PixelFormat::Gray8 => image::RgbImage::from_fn(w, h, |x, y| {
                let v = self.data[(y * w + x) as usize];
                image::Rgb([v, v, v])
            }),
            PixelFormat::Depth16 => image::RgbImage::from_fn(w, h, |x, y| {
                let v = (self.depth_at(x, y) / 16).min(255) as u8;
                image::Rgb([v, v, v])
            }),
        }
    }
}

/// Decodes a camera frame payload that is either a JPEG or an RGB8 raster.
pub fn decode_rgb_frame(buf: &[u8]) -> Result<image::RgbImage, PayloadError> {
    if buf.starts_with(&[0xFF, 0xD8]) {
        let img = image::load_from_memory_with_format(buf, image::ImageFormat::Jpeg)
            .map_err(|e| invalid(format!("jpeg: {e}")))?;
        return Ok(img.to_rgb8());
    }
    Ok(Raster::decode(buf)?.to_rgb_image())
}

pub fn encode_jpeg(img: &image::RgbImage, quality: u8) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
    enc.encode_image(img).expect("in-memory jpeg encode");
    out
}

// ---------------------------------------------------------------- model outputs

/// Normalized bounding box `(x0, y0, x1, y1)` with `0 ≤ x0 < x1 ≤ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox(pub [f64; 4]);

impl BBox {
    pub fn validate(&self) -> Result<(), PayloadError> {
        let [x0, y0, x1, y1] = self.0;
        let ok = |a: f64, b: f64| a.is_finite() && b.is_finite() && 0.0 <= a && a < b && b <= 1.0;
        if ok(x0, x1) && ok(y0, y1) {
            Ok(())
        } else {
            Err(invalid(format!("bbox {:?}", self.0)))
        }
    }

    pub fn center(&self) -> (f64, f64) {
        let [x0, y0, x1, y1] = self.0;
        ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    }

    pub fn area(&self) -> f64 {
        let [x0, y0, x1, y1] = self.0;
        (x1 - x0) * (y1 - y0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn validate(&self) -> Result<(), PayloadError> {
        check_confidence(self.confidence)?;
        if self.label.is_empty() {
            return Err(invalid("empty label"));
        }
        self.bbox.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionPrediction {
    pub verb: String,
    pub noun: String,
    pub confidence: f64,
}

impl ActionPrediction {
    pub fn label(&self) -> String {
        format!("{} {}", self.verb, self.noun)
    }
}

fn check_confidence(c: f64) -> Result<(), PayloadError> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(invalid(format!("confidence {c} outside [0,1]")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionsPayload {
    pub t_us: u64,
    pub detections: Vec<Detection>,
}

impl DetectionsPayload {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serializable")
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PayloadError> {
        let p: Self = serde_json::from_slice(buf).map_err(|e| PayloadError::Json(e.to_string()))?;
        for d in &p.detections {
            d.validate()?;
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionsPayload {
    pub t_us: u64,
    pub actions: Vec<ActionPrediction>,
}

impl ActionsPayload {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serializable")
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PayloadError> {
        let p: Self = serde_json::from_slice(buf).map_err(|e| PayloadError::Json(e.to_string()))?;
        for a in &p.actions {
            check_confidence(a.confidence)?;
        }
        Ok(p)
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Intrinsics {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Intrinsics {
            width,
            height,
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), PayloadError> {
        if self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite() {
            Ok(())
        } else {
            Err(invalid("focal lengths must be positive"))
        }
    }
}

/// Camera pose: rotation camera→world as a unit quaternion `[w, x, y, z]`
/// and the camera center in world meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Pose {
        let q = rotation.quaternion();
        Pose {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [translation.x, translation.y, translation.z],
        }
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn validate(&self) -> Result<(), PayloadError> {
        let n = self.rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_TOLERANCE || !self.translation.iter().all(|c| c.is_finite()) {
            return Err(invalid(format!("pose quaternion norm {n}")));
        }
        Ok(())
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().inverse() * (p - self.translation())
    }
}

/// Per-frame camera calibration published alongside depth frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPayload {
    pub t_us: u64,
    pub pose: Pose,
    pub color: Intrinsics,
    pub depth: Intrinsics,
}

impl CameraPayload {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serializable")
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PayloadError> {
        let p: Self = serde_json::from_slice(buf).map_err(|e| PayloadError::Json(e.to_string()))?;
        p.pose.validate()?;
        p.color.validate()?;
        p.depth.validate()?;
        Ok(p)
    }
}

/// Ground-truth sidecar emitted by the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthPayload {
    pub t_us: u64,
    pub step: usize,
    /// Scripted action in progress, as `"verb noun"`.
    pub action: Option<String>,
    pub objects: Vec<TruthObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub id: String,
    pub label: String,
    pub position: [f64; 3],
}

impl TruthPayload {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serializable")
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PayloadError> {
        serde_json::from_slice(buf).map_err(|e| PayloadError::Json(e.to_string()))
    }
}

/// Output of the step tracker for one perception tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStatePayload {
    pub t_us: u64,
    pub task_id: String,
    /// Most probable step.
    pub step: usize,
    /// Posterior mass of `step`.
    pub confidence: f64,
    pub belief: Vec<f64>,
    pub in_error: bool,
    pub error_reason: Option<String>,
}

impl StepStatePayload {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("serializable")
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PayloadError> {
        let p: StepStatePayload = serde_json::from_slice(buf).map_err(|e| PayloadError::Json(e.to_string()))?;
        let sum: f64 = p.belief.iter().sum();
        if p.belief.is_empty()
            || p.step >= p.belief.len()
            || p.belief.iter().any(|b| !(0.0..=1.0 + 1e-9).contains(b))
            || (sum - 1.0).abs() > 1e-6
            || !(0.0..=1.0 + 1e-9).contains(&p.confidence)
        {
            return Err(invalid("step belief is not a distribution"));
        }
        Ok(p)
    }
}
