//! Point-cloud analytics: voxel downsampling, density heatmaps, gaze ray
//! casting and object localization from detections plus depth.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::payload::{CameraPayload, Detection, GazeSample, Intrinsics, PixelFormat, Raster};

mod session;

pub use session::{
    session_depth_frames, session_heatmap, session_objects, session_world, HeatmapLayer, SessionObjects, SpatialQueryError,
    DEFAULT_LINK_M,
};

pub const DEFAULT_RESOLUTION: f64 = 0.01;
pub const DEFAULT_MAX_RANGE: f64 = 10.0;
/// Depth frames further than this from a detection are not paired with it.
pub const MAX_DEPTH_SKEW_US: u64 = 100_000;

const FLAG_COLORS: u8 = 1;
const FLAG_TIMES: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("resolution must be positive and finite, got {0}")]
    NonPositiveResolution(f64),
    #[error("no depth frame within 100 ms of t={0}us")]
    NoDepth(u64),
    #[error("depth patch at ({x}, {y}) has no valid samples")]
    InvalidDepth { x: u32, y: u32 },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("malformed point cloud: {0}")]
    Decode(String),
    #[error("depth raster expected, got {0:?}")]
    NotDepth(PixelFormat),
}

pub type VoxelKey = [i32; 3];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    /// Per-point timestamps, when the cloud is a sequence of samples.
    pub times: Option<Vec<u64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<[f32; 3]>) -> PointCloud {
        PointCloud {
            points,
            colors: None,
            times: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        if !self.points.iter().flatten().all(|c| c.is_finite()) {
            return Err(SpatialError::NonFinite);
        }
        let n = self.points.len();
        if self.colors.as_ref().is_some_and(|c| c.len() != n) || self.times.as_ref().is_some_and(|t| t.len() != n) {
            return Err(SpatialError::Decode("attribute length differs from point count".into()));
        }
        Ok(())
    }

    /// `u32 count, u8 flags, count × 3 f32, [count × 3 u8], [count × u64]`,
    /// little endian.
    pub fn encode(&self) -> Vec<u8> {
        let n = self.points.len();
        let mut flags = 0;
        if self.colors.is_some() {
            flags |= FLAG_COLORS;
        }
        if self.times.is_some() {
            flags |= FLAG_TIMES;
        }
        let mut out = Vec::with_capacity(5 + n * 23);
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.push(flags);
        for p in &self.points {
            for c in p {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        if let Some(colors) = &self.colors {
            for c in colors {
                out.extend_from_slice(c);
            }
        }
        if let Some(times) = &self.times {
            for t in times {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<PointCloud, SpatialError> {
        let err = |m: &str| SpatialError::Decode(m.to_string());
        if buf.len() < 5 {
            return Err(err("truncated header"));
        }
        let n = u32::from_le_bytes(buf[0..4].try_into().expect("4 bytes")) as usize;
        let flags = buf[4];
        if flags & !(FLAG_COLORS | FLAG_TIMES) != 0 {
            return Err(err("unknown flags"));
        }
        let mut need = 5u64 + n as u64 * 12;
        if flags & FLAG_COLORS != 0 {
            need += n as u64 * 3;
        }
        if flags & FLAG_TIMES != 0 {
            need += n as u64 * 8;
        }
        if buf.len() as u64 != need {
            return Err(err("length does not match point count"));
        }
        let mut at = 5;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let mut p = [0f32; 3];
            for c in &mut p {
                *c = f32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes"));
                at += 4;
            }
            if !p.iter().all(|c| c.is_finite()) {
                return Err(SpatialError::NonFinite);
            }
            points.push(p);
        }
        let colors = (flags & FLAG_COLORS != 0).then(|| {
            let c: Vec<[u8; 3]> = buf[at..at + n * 3].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            at += n * 3;
            c
        });
        let times = (flags & FLAG_TIMES != 0).then(|| {
            buf[at..at + n * 8]
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        });
        Ok(PointCloud { points, colors, times })
    }

    /// Keeps samples with `t0 ≤ t ≤ t1`; clouds without times are kept whole.
    pub fn filter_by_time(&self, t0_us: u64, t1_us: u64) -> PointCloud {
        let Some(times) = &self.times else {
            return self.clone();
        };
        let keep: Vec<usize> = (0..times.len()).filter(|&i| (t0_us..=t1_us).contains(&times[i])).collect();
        PointCloud {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| keep.iter().map(|&i| c[i]).collect()),
            times: Some(keep.iter().map(|&i| times[i]).collect()),
        }
    }
}

/// A point cloud captured at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedCloud {
    pub t_us: u64,
    pub cloud: PointCloud,
}

pub trait Timestamped {
    fn t_us(&self) -> u64;
}

impl Timestamped for TimedCloud {
    fn t_us(&self) -> u64 {
        self.t_us
    }
}

impl Timestamped for GazeSample {
    fn t_us(&self) -> u64 {
        self.t_us
    }
}

impl Timestamped for ObjectPoint {
    fn t_us(&self) -> u64 {
        self.t_us
    }
}

pub fn filter_by_time<T: Timestamped + Clone>(items: &[T], t0_us: u64, t1_us: u64) -> Vec<T> {
    items
        .iter()
        .filter(|i| (t0_us..=t1_us).contains(&i.t_us()))
        .cloned()
        .collect()
}

/// Axis-aligned box in world meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelCell {
    pub count: u64,
    pub sum: [f64; 3],
    pub color_sum: Option<[u64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub resolution: f64,
    /// Minimum corner of the occupied lattice region.
    pub origin: [f64; 3],
    pub cells: BTreeMap<VoxelKey, VoxelCell>,
}

pub fn voxel_key(p: [f64; 3], res: f64) -> VoxelKey {
    [
        (p[0] / res).floor() as i32,
        (p[1] / res).floor() as i32,
        (p[2] / res).floor() as i32,
    ]
}

fn check_resolution(res: f64) -> Result<(), SpatialError> {
    if res.is_finite() && res > 0.0 {
        Ok(())
    } else {
        Err(SpatialError::NonPositiveResolution(res))
    }
}

impl VoxelGrid {
    pub fn empty(resolution: f64) -> Result<VoxelGrid, SpatialError> {
        check_resolution(resolution)?;
        Ok(VoxelGrid {
            resolution,
            origin: [0.0; 3],
            cells: BTreeMap::new(),
        })
    }

    fn from_map(resolution: f64, map: HashMap<VoxelKey, VoxelCell>) -> VoxelGrid {
        let cells: BTreeMap<VoxelKey, VoxelCell> = map.into_iter().collect();
        let mut grid = VoxelGrid {
            resolution,
            origin: [0.0; 3],
            cells,
        };
        grid.origin = grid.lattice_min();
        grid
    }

    fn lattice_min(&self) -> [f64; 3] {
        let mut lo = [i32::MAX; 3];
        for k in self.cells.keys() {
            for i in 0..3 {
                lo[i] = lo[i].min(k[i]);
            }
        }
        if self.cells.is_empty() {
            return [0.0; 3];
        }
        lo.map(|k| k as f64 * self.resolution)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.cells.values().map(|c| c.count).sum()
    }

    pub fn voxel_center(&self, k: VoxelKey) -> Vector3<f64> {
        Vector3::new(
            (k[0] as f64 + 0.5) * self.resolution,
            (k[1] as f64 + 0.5) * self.resolution,
            (k[2] as f64 + 0.5) * self.resolution,
        )
    }

    /// Mean of the cell's points, nudged by at most a few ulps so that it
    /// maps back to its own voxel.
    pub fn centroid(&self, k: VoxelKey) -> Option<[f64; 3]> {
        let cell = self.cells.get(&k)?;
        let n = cell.count as f64;
        let mut c = cell.sum.map(|s| s / n);
        for (i, ci) in c.iter_mut().enumerate() {
            for _ in 0..64 {
                let ki = (*ci / self.resolution).floor() as i32;
                if ki < k[i] {
                    *ci = ci.next_up();
                } else if ki > k[i] {
                    *ci = ci.next_down();
                } else {
                    break;
                }
            }
        }
        Some(c)
    }

    pub fn mean_color(&self, k: VoxelKey) -> Option<[u8; 3]> {
        let cell = self.cells.get(&k)?;
        let cs = cell.color_sum?;
        Some(cs.map(|s| (s / cell.count) as u8))
    }

    /// Cells as a cloud of centroids, in key order.
    pub fn to_cloud(&self) -> PointCloud {
        let points = self
            .cells
            .keys()
            .map(|&k| self.centroid(k).expect("present").map(|c| c as f32))
            .collect();
        let colors = self
            .cells
            .values()
            .all(|c| c.color_sum.is_some())
            .then(|| self.cells.keys().map(|&k| self.mean_color(k).expect("colored")).collect())
            .filter(|c: &Vec<[u8; 3]>| !c.is_empty());
        PointCloud {
            points,
            colors,
            times: None,
        }
    }

    /// Re-buckets the cells (weighted by count) onto a lattice of `res`.
    pub fn downsample(&self, res: f64) -> Result<VoxelGrid, SpatialError> {
        check_resolution(res)?;
        let mut map: HashMap<VoxelKey, VoxelCell> = HashMap::with_capacity(self.cells.len());
        for (&k, cell) in &self.cells {
            let key = voxel_key(self.centroid(k).expect("present"), res);
            let e = map.entry(key).or_insert(VoxelCell {
                count: 0,
                sum: [0.0; 3],
                color_sum: cell.color_sum.map(|_| [0; 3]),
            });
            e.count += cell.count;
            for i in 0..3 {
                e.sum[i] += cell.sum[i];
            }
            e.color_sum = match (e.color_sum, cell.color_sum) {
                (Some(a), Some(b)) => Some([a[0] + b[0], a[1] + b[1], a[2] + b[2]]),
                _ => None,
            };
        }
        Ok(VoxelGrid::from_map(res, map))
    }
}

/// Merges clouds into one voxel grid; points inside any exclusion box are
/// dropped.
pub fn merge_and_downsample_excluding(
    clouds: &[PointCloud],
    res: f64,
    exclude: &[Aabb],
) -> Result<VoxelGrid, SpatialError> {
    check_resolution(res)?;
    let mut map: HashMap<VoxelKey, VoxelCell> = HashMap::new();
    for cloud in clouds {
        cloud.validate()?;
        for (i, p) in cloud.points.iter().enumerate() {
            let p = [p[0] as f64, p[1] as f64, p[2] as f64];
            if exclude.iter().any(|b| b.contains(p)) {
                continue;
            }
            let key = voxel_key(p, res);
            let color = cloud.colors.as_ref().map(|c| c[i]);
            let e = map.entry(key).or_insert(VoxelCell {
                count: 0,
                sum: [0.0; 3],
                color_sum: color.map(|_| [0; 3]),
            });
            e.count += 1;
            e.sum[0] += p[0];
            e.sum[1] += p[1];
            e.sum[2] += p[2];
            e.color_sum = match (e.color_sum, color) {
                (Some(a), Some(b)) => Some([a[0] + b[0] as u64, a[1] + b[1] as u64, a[2] + b[2] as u64]),
                _ => None,
            };
        }
    }
    Ok(VoxelGrid::from_map(res, map))
}

pub fn merge_and_downsample(clouds: &[PointCloud], res: f64) -> Result<VoxelGrid, SpatialError> {
    merge_and_downsample_excluding(clouds, res, &[])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap3D {
    pub grid: VoxelGrid,
    pub densities: BTreeMap<VoxelKey, f64>,
}

/// Density per voxel relative to the busiest voxel.
pub fn build_heatmap(samples: &PointCloud, res: f64) -> Result<Heatmap3D, SpatialError> {
    let grid = merge_and_downsample(std::slice::from_ref(samples), res)?;
    let max = grid.cells.values().map(|c| c.count).max().unwrap_or(1) as f64;
    let densities = grid.cells.iter().map(|(&k, c)| (k, c.count as f64 / max)).collect();
    Ok(Heatmap3D { grid, densities })
}

/// Gaze casting parameters.
#[derive(Clone, Copy, Debug)]
pub struct RayCast {
    pub max_range: f64,
    pub radius: f64,
}

impl RayCast {
    pub fn for_grid(grid: &VoxelGrid) -> RayCast {
        RayCast {
            max_range: DEFAULT_MAX_RANGE,
            radius: 1.5 * grid.resolution,
        }
    }
}

/// Coarse occupancy used to skip empty space while marching.
pub struct GazeIndex<'a> {
    grid: &'a VoxelGrid,
    block: f64,
    blocks: HashSet<VoxelKey>,
}

const BLOCK_VOXELS: f64 = 8.0;

impl<'a> GazeIndex<'a> {
    pub fn new(grid: &'a VoxelGrid) -> GazeIndex<'a> {
        let block = grid.resolution * BLOCK_VOXELS;
        let blocks = grid
            .cells
            .keys()
            .map(|&k| voxel_key(grid.voxel_center(k).into(), block))
            .collect();
        GazeIndex { grid, block, blocks }
    }

    fn near_geometry(&self, p: &Vector3<f64>) -> bool {
        let k = voxel_key((*p).into(), self.block);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if self.blocks.contains(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// First occupied voxel the ray passes through within `max_range`,
    /// not counting the voxel holding the origin.
    pub fn traverse(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<VoxelKey> {
        let res = self.grid.resolution;
        let mut k = voxel_key((*origin).into(), res);
        let mut step = [0i32; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            if dir[a] > 0.0 {
                step[a] = 1;
                t_max[a] = ((k[a] as f64 + 1.0) * res - origin[a]) / dir[a];
                t_delta[a] = res / dir[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                t_max[a] = (k[a] as f64 * res - origin[a]) / dir[a];
                t_delta[a] = -res / dir[a];
            }
        }
        loop {
            let a = (0..3).min_by(|&i, &j| t_max[i].total_cmp(&t_max[j])).expect("three axes");
            if !(t_max[a] <= max_range) {
                return None;
            }
            // jump through empty blocks a whole block at a time
            if !self.near_geometry(&(origin + dir * t_max[a])) && self.block > 2.0 * res {
                let skip = t_max[a] + self.block - 2.0 * res;
                if skip > max_range {
                    return None;
                }
                let p = origin + dir * skip;
                k = voxel_key(p.into(), res);
                for i in 0..3 {
                    t_max[i] = match step[i] {
                        1 => ((k[i] as f64 + 1.0) * res - origin[i]) / dir[i],
                        -1 => (k[i] as f64 * res - origin[i]) / dir[i],
                        _ => f64::INFINITY,
                    };
                }
                if self.grid.cells.contains_key(&k) {
                    return Some(k);
                }
                continue;
            }
            k[a] += step[a];
            t_max[a] += t_delta[a];
            if self.grid.cells.contains_key(&k) {
                return Some(k);
            }
        }
    }

    /// Centroid of the first occupied voxel the ray passes through. When it
    /// threads between occupied voxels without touching one, falls back to
    /// the voxel nearest along the ray among those whose center lies within
    /// `radius` of it.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, cast: RayCast) -> Option<Vector3<f64>> {
        if let Some(k) = self.traverse(origin, dir, cast.max_range) {
            return Some(Vector3::from(self.grid.centroid(k).expect("present")));
        }
        self.cylinder(origin, dir, cast)
    }

    fn cylinder(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, cast: RayCast) -> Option<Vector3<f64>> {
        let res = self.grid.resolution;
        let step = res / 2.0;
        let reach = (cast.radius * cast.radius + step * step / 4.0).sqrt();
        let span = (reach / res).ceil() as i32 + 1;
        let skip = self.block - reach;
        let mut best: Option<(f64, VoxelKey)> = None;
        let mut t = 0.0;
        while t <= cast.max_range + reach {
            if let Some((s, _)) = best {
                if t > s + reach {
                    break;
                }
            }
            let p = origin + dir * t;
            if skip > step && !self.near_geometry(&p) {
                t += skip;
                continue;
            }
            let k = voxel_key(p.into(), res);
            for dx in -span..=span {
                for dy in -span..=span {
                    for dz in -span..=span {
                        let key = [k[0] + dx, k[1] + dy, k[2] + dz];
                        if !self.grid.cells.contains_key(&key) {
                            continue;
                        }
                        let c = self.grid.voxel_center(key);
                        let rel = c - origin;
                        let s = rel.dot(dir);
                        if s < 0.0 || s > cast.max_range {
                            continue;
                        }
                        let perp = (rel - dir * s).norm();
                        if perp > cast.radius {
                            continue;
                        }
                        if best.is_none_or(|(bs, bk)| s < bs || (s == bs && key < bk)) {
                            best = Some((s, key));
                        }
                    }
                }
            }
            t += step;
        }
        best.map(|(_, k)| Vector3::from(self.grid.centroid(k).expect("present")))
    }
}

pub fn gaze_intersect(gaze: &GazeSample, world: &VoxelGrid, cast: RayCast) -> Option<Vector3<f64>> {
    GazeIndex::new(world).intersect(&gaze.origin, &gaze.direction, cast)
}

/// Hit points of a gaze sequence; misses are dropped and `times` keeps each
/// hit's sample time.
pub fn project_gaze_sequence(gazes: &[GazeSample], world: &VoxelGrid, cast: RayCast) -> PointCloud {
    let index = GazeIndex::new(world);
    let mut points = Vec::new();
    let mut times = Vec::new();
    for g in gazes {
        if let Some(h) = index.intersect(&g.origin, &g.direction, cast) {
            points.push([h.x as f32, h.y as f32, h.z as f32]);
            times.push(g.t_us);
        }
    }
    PointCloud {
        points,
        colors: None,
        times: Some(times),
    }
}

// ---------------------------------------------------------------- depth

/// Camera-frame point for pixel `(u, v)` (continuous coordinates) at depth
/// `z` meters.
pub fn unproject(intr: &Intrinsics, u: f64, v: f64, z: f64) -> Vector3<f64> {
    Vector3::new((u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z)
}

pub fn project(intr: &Intrinsics, p: &Vector3<f64>) -> Option<(f64, f64)> {
    (p.z > 1e-9).then(|| (intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy))
}

/// World-space cloud from a depth frame, sampling every `stride`-th pixel.
pub fn depth_to_cloud(depth: &Raster, camera: &CameraPayload, stride: u32) -> Result<PointCloud, SpatialError> {
    if depth.format != PixelFormat::Depth16 {
        return Err(SpatialError::NotDepth(depth.format));
    }
    let stride = stride.max(1);
    let mut points = Vec::new();
    for y in (0..depth.height).step_by(stride as usize) {
        for x in (0..depth.width).step_by(stride as usize) {
            let mm = depth.depth_at(x, y);
            if mm == 0 {
                continue;
            }
            let pc = unproject(&camera.depth, x as f64 + 0.5, y as f64 + 0.5, mm as f64 / 1000.0);
            let w = camera.pose.camera_to_world(&pc);
            points.push([w.x as f32, w.y as f32, w.z as f32]);
        }
    }
    Ok(PointCloud::from_points(points))
}

/// Median of the valid (non-zero) depth samples in the 5×5 patch around
/// `(x, y)`, in millimeters.
pub fn median_depth_patch(depth: &Raster, x: u32, y: u32) -> Result<u16, SpatialError> {
    let mut vals = Vec::with_capacity(25);
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            let (px, py) = (x as i64 + dx, y as i64 + dy);
            if px < 0 || py < 0 || px >= depth.width as i64 || py >= depth.height as i64 {
                continue;
            }
            let v = depth.depth_at(px as u32, py as u32);
            if v > 0 {
                vals.push(v);
            }
        }
    }
    if vals.is_empty() {
        return Err(SpatialError::InvalidDepth { x, y });
    }
    vals.sort_unstable();
    Ok(vals[vals.len() / 2])
}

/// World position of a detection's box center using the depth frame.
pub fn locate_detection(det: &Detection, depth: &Raster, camera: &CameraPayload) -> Result<Vector3<f64>, SpatialError> {
    if depth.format != PixelFormat::Depth16 {
        return Err(SpatialError::NotDepth(depth.format));
    }
    let (nu, nv) = det.bbox.center();
    let (cu, cv) = (nu * camera.color.width as f64, nv * camera.color.height as f64);
    let bearing = unproject(&camera.color, cu, cv, 1.0);
    let (du, dv) = project(&camera.depth, &bearing).expect("bearing has z = 1");
    if du < 0.0 || dv < 0.0 || du >= depth.width as f64 || dv >= depth.height as f64 {
        return Err(SpatialError::InvalidDepth {
            x: du.max(0.0) as u32,
            y: dv.max(0.0) as u32,
        });
    }
    let (px, py) = (du.floor() as u32, dv.floor() as u32);
    let z = median_depth_patch(depth, px, py)? as f64 / 1000.0;
    Ok(camera.pose.camera_to_world(&(bearing * z)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectPoint {
    pub t_us: u64,
    pub label: String,
    pub confidence: f64,
    pub position: [f64; 3],
}

#[derive(Clone, Debug, Default)]
pub struct ObjectPositions {
    pub points: Vec<ObjectPoint>,
    pub skipped: Vec<(u64, String, SpatialError)>,
}

/// A depth frame with the camera state it was captured under.
#[derive(Clone, Debug)]
pub struct DepthFrame {
    pub t_us: u64,
    pub depth: Raster,
    pub camera: CameraPayload,
}

/// Localizes every detection against the nearest depth frame in time.
pub fn object_positions(
    detections: &[crate::payload::DetectionsPayload],
    frames: &[DepthFrame],
) -> ObjectPositions {
    let mut out = ObjectPositions::default();
    for dp in detections {
        let nearest = frames
            .binary_search_by_key(&dp.t_us, |f| f.t_us)
            .map_or_else(
                |i| {
                    [i.checked_sub(1), (i < frames.len()).then_some(i)]
                        .into_iter()
                        .flatten()
                        .min_by_key(|&j| frames[j].t_us.abs_diff(dp.t_us))
                },
                Some,
            )
            .filter(|&j| frames[j].t_us.abs_diff(dp.t_us) <= MAX_DEPTH_SKEW_US);
        for det in &dp.detections {
            let res = match nearest {
                None => Err(SpatialError::NoDepth(dp.t_us)),
                Some(j) => locate_detection(det, &frames[j].depth, &frames[j].camera),
            };
            match res {
                Ok(p) => out.points.push(ObjectPoint {
                    t_us: dp.t_us,
                    label: det.label.clone(),
                    confidence: det.confidence,
                    position: p.into(),
                }),
                Err(e) => out.skipped.push((dp.t_us, det.label.clone(), e)),
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub label: String,
    pub centroid: [f64; 3],
    pub count: usize,
}

/// Single-linkage clusters per label: points closer than `link` meters
/// share a cluster. Clusters are ordered by label then size.
pub fn cluster_objects(points: &[ObjectPoint], link: f64) -> Vec<Cluster> {
    let mut by_label: BTreeMap<&str, Vec<&ObjectPoint>> = BTreeMap::new();
    for p in points {
        by_label.entry(&p.label).or_default().push(p);
    }
    let mut out = Vec::new();
    for (label, pts) in by_label {
        let n = pts.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for i in 0..n {
            for j in i + 1..n {
                let d = Vector3::from(pts[i].position) - Vector3::from(pts[j].position);
                if d.norm() < link {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        let mut clusters: Vec<Cluster> = groups
            .into_values()
            .map(|idx| {
                let sum = idx.iter().fold(Vector3::zeros(), |acc, &i| acc + Vector3::from(pts[i].position));
                Cluster {
                    label: label.to_string(),
                    centroid: (sum / idx.len() as f64).into(),
                    count: idx.len(),
                }
            })
            .collect();
        clusters.sort_by(|a, b| b.count.cmp(&a.count));
        out.extend(clusters);
    }
    out
}
