use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scenario::{ObjectSpec, RoomModel};
use super::scene::SceneState;
use crate::payload::{Intrinsics, PixelFormat, Raster};
use crate::spatial::project;

/// Room box bounds beyond the desk: x, y (up) and the near wall in z.
const ROOM_HALF_WIDTH: f64 = 2.0;
const ROOM_HEIGHT: f64 = 2.6;
const ROOM_NEAR_Z: f64 = -2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensor {
    Rgb,
    Grayscale,
    IrAb,
    IrDepth,
}

/// Resolution, pixel format and frame rate of one headset camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameSpec {
    pub sensor: Sensor,
    pub width: u32,
    pub height: u32,
    pub format: PixelFormat,
    pub fps: f64,
}

impl FrameSpec {
    pub const fn of(sensor: Sensor) -> FrameSpec {
        match sensor {
            Sensor::Rgb => FrameSpec {
                sensor,
                width: 760,
                height: 428,
                format: PixelFormat::Rgb8,
                fps: 7.5,
            },
            Sensor::Grayscale => FrameSpec {
                sensor,
                width: 640,
                height: 480,
                format: PixelFormat::Gray8,
                fps: 1.0,
            },
            Sensor::IrAb => FrameSpec {
                sensor,
                width: 320,
                height: 288,
                format: PixelFormat::Gray8,
                fps: 5.0,
            },
            Sensor::IrDepth => FrameSpec {
                sensor,
                width: 320,
                height: 288,
                format: PixelFormat::Depth16,
                fps: 5.0,
            },
        }
    }

    /// Timestamp of frame `i` in microseconds from session start.
    pub fn frame_time_us(&self, i: u64) -> u64 {
        (i as f64 * 1e6 / self.fps).floor() as u64
    }
}

fn hash3(a: i64, b: i64, c: u64) -> u64 {
    let mut h = (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ c;
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h
}

fn cell_color(u: f64, v: f64, cell: f64, salt: u64, base: [u8; 3], spread: u8) -> [u8; 3] {
    let h = hash3((u / cell).floor() as i64, (v / cell).floor() as i64, salt);
    let mut out = [0u8; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let jitter = ((h >> (i * 8)) & 0xFF) as i32 * spread as i32 / 255 - spread as i32 / 2;
        *o = (base[i] as i32 + jitter).clamp(0, 255) as u8;
    }
    out
}

/// Color and depth buffers for one view.
pub struct View {
    pub width: u32,
    pub height: u32,
    /// Camera-frame z in meters.
    pub depth: Vec<f64>,
    pub color: Vec<[u8; 3]>,
}

/// Traces the room box and desk, then paints objects as camera-facing
/// squares at their center depth.
pub fn trace(room: &RoomModel, objects: &[ObjectSpec], state: &SceneState, intr: &Intrinsics) -> View {
    let (w, h) = (intr.width, intr.height);
    let mut depth = vec![f64::INFINITY; (w * h) as usize];
    let mut color = vec![[0u8; 3]; (w * h) as usize];
    let r = state.rotation.to_rotation_matrix();
    let o = state.head;
    for y in 0..h {
        for x in 0..w {
            let dc = Vector3::new(
                (x as f64 + 0.5 - intr.cx) / intr.fx,
                (y as f64 + 0.5 - intr.cy) / intr.fy,
                1.0,
            );
            let d = r * dc;
            let (t, c) = trace_room(room, &o, &d);
            let i = (y * w + x) as usize;
            depth[i] = t;
            color[i] = c;
        }
    }
    let mut sprites: Vec<(f64, usize, Vector3<f64>)> = state
        .objects
        .iter()
        .map(|&(idx, p)| {
            let pc = state.rotation.inverse() * (p - o);
            (pc.z, idx, pc)
        })
        .filter(|(z, _, _)| *z > 0.05)
        .collect();
    sprites.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (z, idx, pc) in sprites {
        let spec = &objects[idx];
        let half = spec.size / 2.0;
        let (u0, v0) = project(intr, &(pc - Vector3::new(half, half, 0.0))).expect("z > 0");
        let (u1, v1) = project(intr, &(pc + Vector3::new(half, half, 0.0))).expect("z > 0");
        let xs = (u0 - 0.5).ceil().max(0.0) as i64;
        let xe = ((u1 - 0.5).floor() as i64).min(w as i64 - 1);
        let ys = (v0 - 0.5).ceil().max(0.0) as i64;
        let ye = ((v1 - 0.5).floor() as i64).min(h as i64 - 1);
        let border = ((u1 - u0) / 8.0).max(1.0);
        for py in ys..=ye {
            for px in xs..=xe {
                let i = (py as u32 * w + px as u32) as usize;
                if z >= depth[i] {
                    continue;
                }
                depth[i] = z;
                let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
                let edge = fx - u0 < border || u1 - fx < border || fy - v0 < border || v1 - fy < border;
                color[i] = if edge { spec.color.map(|c| c / 2) } else { spec.color };
            }
        }
    }
    View {
        width: w,
        height: h,
        depth,
        color,
    }
}

fn trace_room(room: &RoomModel, o: &Vector3<f64>, d: &Vector3<f64>) -> (f64, [u8; 3]) {
    let mut best = f64::INFINITY;
    let mut face = 0usize;
    let bounds = [
        (0, -ROOM_HALF_WIDTH, ROOM_HALF_WIDTH),
        (1, 0.0, ROOM_HEIGHT),
        (2, ROOM_NEAR_Z, room.wall_z),
    ];
    for (axis, lo, hi) in bounds {
        if d[axis].abs() < 1e-12 {
            continue;
        }
        let target = if d[axis] > 0.0 { hi } else { lo };
        let t = (target - o[axis]) / d[axis];
        if t > 0.0 && t < best {
            best = t;
            face = axis * 2 + usize::from(d[axis] > 0.0);
        }
    }
    // desk top, seen from above
    if d.y < 0.0 && o.y > room.desk_height {
        let t = (room.desk_height - o.y) / d.y;
        let p = o + d * t;
        if t < best && p.x >= room.desk_min[0] && p.x <= room.desk_max[0] && p.z >= room.desk_min[1] && p.z <= room.desk_max[1] {
            return (t, cell_color(p.x, p.z, 0.05, 11, [170, 125, 80], 90));
        }
    }
    let p = o + d * best;
    let c = match face {
        // floor, ceiling
        2 => {
            let checker = ((p.x / 0.25).floor() as i64 + (p.z / 0.25).floor() as i64).rem_euclid(2);
            if checker == 0 { [95, 95, 100] } else { [130, 130, 135] }
        }
        3 => [225, 225, 220],
        // back wall carries the densest texture
        5 => cell_color(p.x, p.y, 0.04, 23, [128, 128, 128], 200),
        4 => cell_color(p.x, p.y, 0.1, 31, [150, 160, 170], 80),
        _ => cell_color(p.z, p.y, 0.1, 41 + face as u64, [160, 150, 140], 80),
    };
    (best, c)
}

fn luma(c: [u8; 3]) -> u8 {
    ((c[0] as u32 * 77 + c[1] as u32 * 150 + c[2] as u32 * 29) >> 8) as u8
}

/// Depth in millimeters; 0 marks no return.
pub fn depth_mm(z: f64) -> u16 {
    if !z.is_finite() || z <= 0.0 {
        return 0;
    }
    let mm = (z * 1000.0).round();
    if mm > u16::MAX as f64 {
        0
    } else {
        mm as u16
    }
}

/// Renders one frame of `spec` as a raster.
pub fn render_frame(
    room: &RoomModel,
    objects: &[ObjectSpec],
    state: &SceneState,
    spec: &FrameSpec,
    intr: &Intrinsics,
) -> Raster {
    let view = trace(room, objects, state, intr);
    let mut r = Raster::new(spec.width, spec.height, spec.format);
    match spec.sensor {
        Sensor::Rgb => {
            for (i, c) in view.color.iter().enumerate() {
                r.data[i * 3..i * 3 + 3].copy_from_slice(c);
            }
        }
        Sensor::Grayscale => {
            for (i, c) in view.color.iter().enumerate() {
                r.data[i] = luma(*c);
            }
        }
        Sensor::IrAb => {
            for (i, (c, z)) in view.color.iter().zip(&view.depth).enumerate() {
                let falloff = 1.0 / (1.0 + (z / 2.0).powi(2));
                r.data[i] = (luma(*c) as f64 * falloff).round() as u8;
            }
        }
        Sensor::IrDepth => {
            for (i, z) in view.depth.iter().enumerate() {
                r.data[i * 2..i * 2 + 2].copy_from_slice(&depth_mm(*z).to_le_bytes());
            }
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scenario::Scenario;
    use crate::synth::scene::Scene;

    fn empty_state() -> (RoomModel, SceneState) {
        let s = Scenario::scripted("t", RoomModel::default(), &[]);
        let scene = Scene::new(&s);
        (s.room.clone(), scene.at(0))
    }

    #[test]
    fn frame_specs_match_the_headset_table() {
        let rgb = FrameSpec::of(Sensor::Rgb);
        assert_eq!((rgb.width, rgb.height, rgb.format, rgb.fps), (760, 428, PixelFormat::Rgb8, 7.5));
        let g = FrameSpec::of(Sensor::Grayscale);
        assert_eq!((g.width, g.height, g.format, g.fps), (640, 480, PixelFormat::Gray8, 1.0));
        let ab = FrameSpec::of(Sensor::IrAb);
        assert_eq!((ab.width, ab.height, ab.format, ab.fps), (320, 288, PixelFormat::Gray8, 5.0));
        let d = FrameSpec::of(Sensor::IrDepth);
        assert_eq!((d.width, d.height, d.format, d.fps), (320, 288, PixelFormat::Depth16, 5.0));
        let n = (0..).take_while(|&i| rgb.frame_time_us(i) < 10_000_000).count();
        assert_eq!(n, 75);
    }

    #[test]
    fn depth_is_true_z_to_the_desk() {
        let (room, mut st) = empty_state();
        // look straight down from 0.5 m above the desk
        st.head = Vector3::new(0.0, room.desk_height + 0.5, 0.65);
        st.rotation = crate::synth::scene::look_rotation(Vector3::new(0.0, -1.0, 0.0));
        let intr = Intrinsics::from_hfov(320, 288, 75.0);
        let r = render_frame(&room, &[], &st, &FrameSpec::of(Sensor::IrDepth), &intr);
        for (x, y) in [(0, 0), (160, 144), (319, 287)] {
            assert_eq!(r.depth_at(x, y), 500, "pixel ({x}, {y})");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let (room, st) = empty_state();
        let spec = FrameSpec::of(Sensor::Rgb);
        let intr = Intrinsics::from_hfov(spec.width, spec.height, 64.7);
        let a = render_frame(&room, &[], &st, &spec, &intr);
        let b = render_frame(&room, &[], &st, &spec, &intr);
        assert_eq!(a, b);
        assert!(a.data.iter().any(|&v| v != a.data[0]), "frame should be textured");
    }
}
