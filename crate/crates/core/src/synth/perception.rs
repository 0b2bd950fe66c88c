use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scenario::{split_action, ObjectSpec, PerceptionConfig};
use crate::payload::{ActionPrediction, BBox, Detection, Intrinsics};
use crate::spatial::project;

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    Normal::new(mean, std).expect("finite std").sample(rng)
}

/// Normalized image box of a camera-facing square, clipped to the frame,
/// with the visible fraction of its area.
pub fn project_square(intr: &Intrinsics, pc: &Vector3<f64>, size: f64) -> Option<(BBox, f64)> {
    if pc.z <= 0.05 {
        return None;
    }
    let half = size / 2.0;
    let (u0, v0) = project(intr, &(pc - Vector3::new(half, half, 0.0)))?;
    let (u1, v1) = project(intr, &(pc + Vector3::new(half, half, 0.0)))?;
    let (w, h) = (intr.width as f64, intr.height as f64);
    let (cu0, cv0, cu1, cv1) = (u0.max(0.0), v0.max(0.0), u1.min(w), v1.min(h));
    if cu1 <= cu0 || cv1 <= cv0 {
        return None;
    }
    let visibility = ((cu1 - cu0) * (cv1 - cv0)) / ((u1 - u0) * (v1 - v0));
    Some((BBox([cu0 / w, cv0 / h, cu1 / w, cv1 / h]), visibility))
}

/// Detections of the objects in view plus an optional false positive.
pub fn perception_stub<R: Rng + ?Sized>(
    objects: &[(usize, Vector3<f64>)],
    specs: &[ObjectSpec],
    head: &Vector3<f64>,
    rotation: &UnitQuaternion<f64>,
    intr: &Intrinsics,
    cfg: &PerceptionConfig,
    rng: &mut R,
) -> Vec<Detection> {
    let inv = rotation.inverse();
    let mut out = Vec::new();
    for &(idx, p) in objects {
        let pc = inv * (p - head);
        let Some((bbox, vis)) = project_square(intr, &pc, specs[idx].size) else {
            continue;
        };
        let conf = (cfg.base_conf * vis + normal(rng, 0.0, cfg.detection_noise)).clamp(0.0, 1.0);
        out.push(Detection {
            label: specs[idx].label.clone(),
            confidence: conf,
            bbox,
        });
    }
    if cfg.false_positive_rate > 0.0 && rng.random_bool(cfg.false_positive_rate) {
        if let Some(label) = cfg.false_positive_labels.choose(rng) {
            let x0 = rng.random_range(0.0..0.8);
            let y0 = rng.random_range(0.0..0.8);
            let w = rng.random_range(0.05..0.2);
            let h = rng.random_range(0.05..0.2);
            out.push(Detection {
                label: label.clone(),
                confidence: rng.random_range(0.1..0.6),
                bbox: BBox([x0, y0, x0 + w, y0 + h]),
            });
        }
    }
    out
}

fn prediction(label: &str, confidence: f64) -> ActionPrediction {
    let (verb, noun) = split_action(label).expect("validated action label");
    ActionPrediction {
        verb: verb.to_string(),
        noun: noun.to_string(),
        confidence,
    }
}

/// Action predictions for one tick: the scripted action around
/// `action_mean`, a few distractors around `distractor_mean`. Sorted by
/// confidence, highest first.
pub fn action_stub<R: Rng + ?Sized>(
    truth: Option<&str>,
    vocabulary: &[String],
    cfg: &PerceptionConfig,
    rng: &mut R,
) -> Vec<ActionPrediction> {
    let mut out = Vec::new();
    if let Some(a) = truth {
        out.push(prediction(a, normal(rng, cfg.action_mean, cfg.action_std).clamp(0.0, 1.0)));
    }
    let others: Vec<&String> = vocabulary.iter().filter(|v| Some(v.as_str()) != truth).collect();
    for label in others.choose_multiple(rng, cfg.distractors_per_tick) {
        out.push(prediction(
            label,
            normal(rng, cfg.distractor_mean, cfg.distractor_std).clamp(0.0, 1.0),
        ));
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    out
}
