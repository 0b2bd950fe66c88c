use argus_core::mosaic::{build_mosaic, estimate_homography, rotation_homography, Homography, MosaicConfig, MosaicFrame, Pair, RansacConfig};
use argus_core::payload::Intrinsics;
use argus_core::synth::{look_rotation, render_frame, FrameSpec, RoomModel, Scenario, Scene, Sensor};
use image::RgbImage;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::Outcome;

const W: f64 = 640.0;
const H: f64 = 480.0;
const F: f64 = 500.0;

fn pan(yaw_deg: f64, pitch_deg: f64) -> Homography {
    rotation_homography(F, W / 2.0, H / 2.0, yaw_deg.to_radians(), pitch_deg.to_radians())
}

/// Correspondences whose both ends fall inside the frame; a share of them
/// replaced by random destinations.
fn pairs(h: &Homography, n: usize, outliers: f64, noise_px: f64, rng: &mut ChaCha8Rng) -> Vec<Pair> {
    let normal = Normal::new(0.0, noise_px.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = (rng.random_range(0.0..W), rng.random_range(0.0..H));
        let Some(d) = h.apply(s.0, s.1) else { continue };
        if !(0.0..W).contains(&d.0) || !(0.0..H).contains(&d.1) {
            continue;
        }
        if rng.random_bool(outliers) {
            out.push((s, (rng.random_range(0.0..W), rng.random_range(0.0..H))));
        } else if noise_px > 0.0 {
            out.push((s, (d.0 + rng.sample(normal), d.1 + rng.sample(normal))));
        } else {
            out.push((s, d));
        }
    }
    out
}

fn estimate(p: &[Pair], seed: u64) -> Result<Homography, String> {
    let cfg = RansacConfig {
        seed,
        ..RansacConfig::default()
    };
    estimate_homography(p, &cfg).map(|e| e.homography).map_err(|e| e.to_string())
}

fn rendered_frame() -> RgbImage {
    let s = Scenario::scripted("pan", RoomModel::default(), &[]);
    let mut st = Scene::new(&s).at(0);
    st.rotation = look_rotation(Vector3::new(0.0, -0.15, 1.0));
    let spec = FrameSpec::of(Sensor::Rgb);
    let intr = Intrinsics::from_hfov(spec.width, spec.height, 64.7);
    render_frame(&s.room, &s.room.objects, &st, &spec, &intr).to_rgb_image()
}

pub fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut clean_worst, mut outlier_worst, mut noisy_worst, mut chain_worst) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut trials = 0;
    for yaw in (10..=40).step_by(5) {
        for sign in [-1.0, 1.0] {
            let yaw = sign * yaw as f64;
            let pitch = rng.random_range(-5.0..5.0);
            let truth = pan(yaw, pitch);
            let seed = rng.random();

            let clean = estimate(&pairs(&truth, 80, 0.0, 0.0, &mut rng), seed)?;
            let e = clean.corner_error(&truth, W, H);
            ensure!(e < 0.5, "yaw {yaw}: noise-free corner error {e:.4} px");
            clean_worst = clean_worst.max(e);

            let mixed = estimate(&pairs(&truth, 200, 0.5, 0.0, &mut rng), seed)?;
            let e = mixed.corner_error(&truth, W, H);
            ensure!(e < 3.0, "yaw {yaw}: corner error {e:.3} px with 50% outliers");
            outlier_worst = outlier_worst.max(e);

            // reported only: inliers also jittered by 0.5 px
            let noisy = estimate(&pairs(&truth, 200, 0.5, 0.5, &mut rng), seed)?;
            noisy_worst = noisy_worst.max(noisy.corner_error(&truth, W, H));

            // a -> b -> c split of the same pan
            let split = rng.random_range(0.3..0.7);
            let ab = pan(yaw * split, pitch);
            let bc = pan(yaw * (1.0 - split), 0.0);
            let ac = bc.after(&ab).map_err(|e| e.to_string())?;
            let eab = estimate(&pairs(&ab, 60, 0.0, 0.0, &mut rng), seed)?;
            let ebc = estimate(&pairs(&bc, 60, 0.0, 0.0, &mut rng), seed + 1)?;
            let eac = estimate(&pairs(&ac, 60, 0.0, 0.0, &mut rng), seed + 2)?;
            let d = eac.frobenius_distance(&ebc.after(&eab).map_err(|e| e.to_string())?);
            ensure!(d < 1e-2, "yaw {yaw}: chain inconsistency {d:.2e}");
            chain_worst = chain_worst.max(d);
            trials += 1;
        }
    }

    let frame = rendered_frame();
    let frames: Vec<MosaicFrame> = (0..3)
        .map(|i| MosaicFrame {
            t_us: i,
            seq: i,
            image: frame.clone(),
        })
        .collect();
    let m = build_mosaic(&frames, 1, &MosaicConfig::default()).map_err(|e| e.to_string())?;
    ensure!(m.meta.frames_used == vec![0, 1, 2], "identity mosaic used {:?}", m.meta.frames_used);
    ensure!(m.image.dimensions() == frame.dimensions(), "identity mosaic is {:?}", m.image.dimensions());
    let (w, h) = frame.dimensions();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            ensure!(m.image.get_pixel(x, y) == frame.get_pixel(x, y), "identity mosaic differs at ({x}, {y})");
        }
    }
    Ok(format!(
        "{trials} pans of 10-40 deg: worst corner error {clean_worst:.2e} px noise-free, {outlier_worst:.3} px with 50% outliers ({noisy_worst:.2} px with 0.5 px jitter added); chain consistency {chain_worst:.2e}; identity mosaic byte-equal over {}x{} interior",
        w - 2,
        h - 2
    ))
}
