use std::collections::BTreeMap;

use argus_core::temporal::{build_matrix, summarize, Category, ConfidenceMatrix, Observation, Vocabulary};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const SESSIONS: u64 = 50;
const SECOND: u64 = 1_000_000;

const LABELS: [(Category, &[&str]); 3] = [
    (Category::Objects, &["tortilla", "knife", "jar", "plate", "towel"]),
    (Category::Actions, &["spread jar", "roll tortilla", "cut tortilla", "wipe knife"]),
    (Category::Steps, &["step 1", "step 2", "step 3", "step 10"]),
];

struct Mini {
    obs: Vec<Observation>,
    duration_us: u64,
    vocabulary: Option<Vocabulary>,
}

/// Frames at random times, each holding a few outputs of one category with
/// repeated labels.
fn mini_session(rng: &mut ChaCha8Rng) -> Mini {
    let duration_us = rng.random_range(1..=20 * SECOND);
    let frames = rng.random_range(0..60u64);
    let mut obs = Vec::new();
    for frame in 0..frames {
        let t_us = rng.random_range(0..duration_us);
        let (category, labels) = LABELS[rng.random_range(0..3)];
        for _ in 0..rng.random_range(1..=4) {
            obs.push(Observation {
                t_us,
                frame,
                category,
                label: labels.choose(rng).expect("non-empty").to_string(),
                // coarse grid so ties and equal maxima occur
                confidence: rng.random_range(0..=20) as f64 / 20.0,
            });
        }
    }
    let vocabulary = rng.random_bool(0.5).then(|| {
        LABELS
            .iter()
            .map(|(c, labels)| (*c, labels.iter().filter(|_| rng.random_bool(0.6)).map(|l| l.to_string()).collect()))
            .collect()
    });
    Mini {
        obs,
        duration_us,
        vocabulary,
    }
}

/// Row order by direct comparison: category, seen before unseen, first
/// sighting, label.
fn oracle_rows(m: &Mini) -> Vec<(Category, String, Option<u64>)> {
    let mut rows: Vec<(Category, String, Option<u64>)> = Vec::new();
    for o in &m.obs {
        match rows.iter_mut().find(|r| r.0 == o.category && r.1 == o.label) {
            Some(r) => r.2 = Some(r.2.expect("seen").min(o.t_us)),
            None => rows.push((o.category, o.label.clone(), Some(o.t_us))),
        }
    }
    for (c, labels) in m.vocabulary.iter().flatten() {
        for l in labels {
            if !rows.iter().any(|r| r.0 == *c && &r.1 == l) {
                rows.push((*c, l.clone(), None));
            }
        }
    }
    rows.sort_by(|a, b| (a.0, a.2.is_none(), a.2, &a.1).cmp(&(b.0, b.2.is_none(), b.2, &b.1)));
    rows
}

/// Every cell by scanning all observations for each (row, column).
fn check_against_oracle(m: &Mini, mat: &ConfidenceMatrix, width: u64) -> Result<(), String> {
    let rows = oracle_rows(m);
    let columns = (m.duration_us.div_ceil(width) as usize).max(1);
    ensure!(mat.columns == columns, "{} columns, expected {columns}", mat.columns);
    ensure!(mat.rows.len() == rows.len(), "{} rows, expected {}", mat.rows.len(), rows.len());
    for (r, (c, l, first)) in mat.rows.iter().zip(&rows) {
        ensure!(r.category == *c && &r.label == l && r.first_seen_us == *first, "row {l} out of place");
    }
    let mut expected = Vec::new();
    for (ri, (cat, label, _)) in rows.iter().enumerate() {
        for col in 0..columns {
            let inside: Vec<&Observation> = m
                .obs
                .iter()
                .filter(|o| o.category == *cat && &o.label == label && ((o.t_us / width) as usize).min(columns - 1) == col)
                .collect();
            if inside.is_empty() {
                continue;
            }
            let conf = inside.iter().map(|o| o.confidence).fold(f64::NEG_INFINITY, f64::max);
            let mut per_frame: BTreeMap<u64, u32> = BTreeMap::new();
            for o in &inside {
                *per_frame.entry(o.frame).or_default() += 1;
            }
            let inst = per_frame.values().copied().max().expect("non-empty");
            expected.push((ri, col, conf, inst));
        }
    }
    let got: Vec<_> = mat.cells.iter().map(|c| (c.row, c.column, c.confidence, c.instances)).collect();
    ensure!(got == expected, "cells differ at width {width}: {} vs {} cells", got.len(), expected.len());

    let summary = summarize(&m.obs, m.vocabulary.as_ref());
    ensure!(summary.len() == rows.len(), "summary has {} rows", summary.len());
    for (s, (cat, label, _)) in summary.iter().zip(&rows) {
        let mine: Vec<f64> = m.obs.iter().filter(|o| o.category == *cat && &o.label == label).map(|o| o.confidence).collect();
        let mut sum = 0.0;
        for v in &mine {
            sum += v;
        }
        let avg = (!mine.is_empty()).then(|| sum / mine.len() as f64);
        ensure!(s.label == *label && s.detection_coverage == mine.len() as u64, "coverage of {label}");
        ensure!(s.average_confidence == avg, "average of {label}: {:?} vs {avg:?}", s.average_confidence);
    }
    Ok(())
}

/// Coarse cells are exactly the maxima of the 1 s cells they cover.
fn check_rebinning(fine: &ConfidenceMatrix, coarse: &ConfidenceMatrix) -> Result<(), String> {
    ensure!(fine.rows == coarse.rows, "rows change with bin width");
    let mut folded: BTreeMap<(usize, usize), (f64, u32)> = BTreeMap::new();
    for c in &fine.cells {
        let col = ((c.column as u64 * fine.bin_width_us / coarse.bin_width_us) as usize).min(coarse.columns - 1);
        let e = folded.entry((c.row, col)).or_insert((f64::NEG_INFINITY, 0));
        e.0 = e.0.max(c.confidence);
        e.1 = e.1.max(c.instances);
    }
    let got: BTreeMap<(usize, usize), (f64, u32)> =
        coarse.cells.iter().map(|c| ((c.row, c.column), (c.confidence, c.instances))).collect();
    ensure!(got == folded, "{} s bins disagree with folded 1 s bins", coarse.bin_width_us / SECOND);
    Ok(())
}

pub fn oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut cells, mut obs) = (0, 0);
    for i in 0..SESSIONS {
        let m = mini_session(&mut rng);
        let fine = build_matrix(&m.obs, m.duration_us, SECOND, m.vocabulary.as_ref()).map_err(|e| e.to_string())?;
        check_against_oracle(&m, &fine, SECOND).map_err(|e| format!("session {i}: {e}"))?;
        for w in [2 * SECOND, 5 * SECOND] {
            let coarse = build_matrix(&m.obs, m.duration_us, w, m.vocabulary.as_ref()).map_err(|e| e.to_string())?;
            check_against_oracle(&m, &coarse, w).map_err(|e| format!("session {i}: {e}"))?;
            check_rebinning(&fine, &coarse).map_err(|e| format!("session {i}: {e}"))?;
        }
        cells += fine.cells.len();
        obs += m.obs.len();
    }
    Ok(format!(
        "{SESSIONS} sessions, {obs} observations, {cells} cells at 1 s: cells, averages and coverage equal the oracle exactly; 2 s and 5 s bins fold consistently"
    ))
}
