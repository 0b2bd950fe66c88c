use serde::{Deserialize, Serialize};

/// Step timeline as change points `(t_us, step)`, sorted by time; each step
/// holds until the next change point.
pub type Timeline = [(u64, usize)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepAccuracy {
    pub step: usize,
    /// Time the truth spent in this step.
    pub truth_us: u64,
    /// Part of `truth_us` during which the prediction was this step too.
    pub correct_us: u64,
    /// `None` when the step never occurred in the truth.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_step: Vec<StepAccuracy>,
    /// Time-weighted mean over all truth time.
    pub total: f64,
    /// Steps with accuracy above zero.
    pub identified: Vec<usize>,
}

fn value_at(tl: &Timeline, t: u64) -> Option<usize> {
    let i = tl.partition_point(|(ts, _)| *ts <= t);
    (i > 0).then(|| tl[i - 1].1)
}

/// Scores `predicted` against `truth` over `[0, end_us)`.
pub fn evaluate_accuracy(predicted: &Timeline, truth: &Timeline, end_us: u64, steps: usize) -> AccuracyReport {
    let mut cuts: Vec<u64> = predicted.iter().chain(truth).map(|(t, _)| *t).filter(|t| *t < end_us).collect();
    cuts.push(0);
    cuts.push(end_us);
    cuts.sort_unstable();
    cuts.dedup();
    let mut truth_us = vec![0u64; steps];
    let mut correct_us = vec![0u64; steps];
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let Some(s) = value_at(truth, a).filter(|s| *s < steps) else {
            continue;
        };
        truth_us[s] += b - a;
        if value_at(predicted, a) == Some(s) {
            correct_us[s] += b - a;
        }
    }
    let per_step: Vec<StepAccuracy> = (0..steps)
        .map(|s| StepAccuracy {
            step: s,
            truth_us: truth_us[s],
            correct_us: correct_us[s],
            accuracy: (truth_us[s] > 0).then(|| correct_us[s] as f64 / truth_us[s] as f64),
        })
        .collect();
    let all: u64 = truth_us.iter().sum();
    let ok: u64 = correct_us.iter().sum();
    AccuracyReport {
        identified: per_step.iter().filter(|s| s.accuracy.is_some_and(|a| a > 0.0)).map(|s| s.step).collect(),
        total: if all > 0 { ok as f64 / all as f64 } else { 0.0 },
        per_step,
    }
}

/// Collapses per-tick samples into change points.
pub fn to_timeline(samples: impl IntoIterator<Item = (u64, usize)>) -> Vec<(u64, usize)> {
    let mut out: Vec<(u64, usize)> = Vec::new();
    for (t, s) in samples {
        if out.last().is_none_or(|l| l.1 != s) {
            out.push((t, s));
        }
    }
    out
}
