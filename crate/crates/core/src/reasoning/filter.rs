use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::task::TaskDescription;
use super::ReasoningError;
use crate::payload::ActionPrediction;

pub const DEFAULT_SELF_STAY: f64 = 0.95;
pub const DEFAULT_ALPHA: f64 = 1.0;

/// Left-to-right step chain with per-step action emission probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionModel {
    pub task_id: String,
    /// Column labels of `emission`, sorted.
    pub actions: Vec<String>,
    /// `emission[step][action]`; every row sums to 1.
    pub emission: Vec<Vec<f64>>,
    pub self_stay: f64,
    /// Raw tallies the probabilities were smoothed from.
    pub counts: Vec<Vec<u64>>,
}

/// One labelled training observation: an action seen while in `step`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub action: String,
    pub step: usize,
}

impl EmissionModel {
    pub fn steps(&self) -> usize {
        self.emission.len()
    }

    pub fn action_index(&self, action: &str) -> Option<usize> {
        self.actions.binary_search_by(|a| a.as_str().cmp(action)).ok()
    }

    pub fn validate(&self) -> Result<(), ReasoningError> {
        if !(self.self_stay > 0.0 && self.self_stay < 1.0) {
            return Err(ReasoningError::InvalidModel(format!("self_stay {} outside (0, 1)", self.self_stay)));
        }
        if self.emission.is_empty() {
            return Err(ReasoningError::InvalidModel("no steps".into()));
        }
        for (s, row) in self.emission.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != self.actions.len() || (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(ReasoningError::InvalidModel(format!("emission row {s} is not a distribution")));
            }
        }
        Ok(())
    }
}

/// Laplace-smoothed emission tallies over `events`. The action vocabulary is
/// the task's required actions plus any action seen in training.
pub fn train_emissions(
    task: &TaskDescription,
    sessions: &[Vec<ActionEvent>],
    alpha: f64,
    self_stay: f64,
) -> Result<EmissionModel, ReasoningError> {
    if !(alpha > 0.0) {
        return Err(ReasoningError::InvalidModel(format!("alpha {alpha} must be positive")));
    }
    let mut vocab: BTreeSet<String> = task.action_vocabulary();
    for e in sessions.iter().flatten() {
        if e.step >= task.len() {
            return Err(ReasoningError::InvalidModel(format!("event step {} beyond {} steps", e.step, task.len())));
        }
        vocab.insert(e.action.clone());
    }
    let actions: Vec<String> = vocab.into_iter().collect();
    let col: BTreeMap<&str, usize> = actions.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; actions.len()]; task.len()];
    for e in sessions.iter().flatten() {
        counts[e.step][col[e.action.as_str()]] += 1;
    }
    let a = actions.len() as f64;
    let emission = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter().map(|&c| (c as f64 + alpha) / (total as f64 + alpha * a)).collect()
        })
        .collect();
    let model = EmissionModel {
        task_id: task.task_id.clone(),
        actions,
        emission,
        self_stay,
        counts,
    };
    model.validate()?;
    Ok(model)
}

fn normalize(b: &mut [f64]) -> bool {
    let s: f64 = b.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return false;
    }
    b.iter_mut().for_each(|v| *v /= s);
    true
}

/// Transition step only: stay with `self_stay`, else advance one step;
/// the last step absorbs.
pub fn predict(belief: &[f64], self_stay: f64) -> Vec<f64> {
    let n = belief.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        if i + 1 == n {
            out[i] += belief[i];
        } else {
            out[i] += self_stay * belief[i];
            out[i + 1] += (1.0 - self_stay) * belief[i];
        }
    }
    out
}

/// Actions at or above `theta` that the model knows, as emission columns.
pub fn surviving_actions(model: &EmissionModel, actions: &[ActionPrediction], theta: f64) -> Vec<usize> {
    actions
        .iter()
        .filter(|a| a.confidence >= theta)
        .filter_map(|a| model.action_index(&a.label()))
        .collect()
}

/// One forward-filter tick: predict, then weight by the emission of every
/// action with confidence ≥ θ and renormalize.
pub fn step_update(model: &EmissionModel, belief: &[f64], actions: &[ActionPrediction], theta: f64) -> Vec<f64> {
    let prior = predict(belief, model.self_stay);
    let obs = surviving_actions(model, actions, theta);
    if obs.is_empty() {
        return prior;
    }
    let mut post = prior.clone();
    for (s, p) in post.iter_mut().enumerate() {
        for &a in &obs {
            *p *= model.emission[s][a];
        }
    }
    if normalize(&mut post) {
        post
    } else {
        prior
    }
}

pub fn argmax(belief: &[f64]) -> usize {
    belief
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Stateful filter for one session.
#[derive(Clone, Debug)]
pub struct StepFilter {
    model: EmissionModel,
    belief: Vec<f64>,
    theta: f64,
}

impl StepFilter {
    /// Starts with all mass on the first step.
    pub fn new(model: EmissionModel, theta: f64) -> StepFilter {
        let mut belief = vec![0.0; model.steps()];
        belief[0] = 1.0;
        StepFilter { model, belief, theta }
    }

    pub fn belief(&self) -> &[f64] {
        &self.belief
    }

    pub fn step(&self) -> usize {
        argmax(&self.belief)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn update(&mut self, actions: &[ActionPrediction]) -> &[f64] {
        self.belief = step_update(&self.model, &self.belief, actions, self.theta);
        &self.belief
    }

    /// Moves all mass to `step`; used by the hands-absent policy.
    pub fn force(&mut self, step: usize) {
        let step = step.min(self.belief.len() - 1);
        self.belief.iter_mut().for_each(|b| *b = 0.0);
        self.belief[step] = 1.0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorConfig {
    pub window_us: u64,
    pub min_alignment: f64,
    pub sustain_us: u64,
    pub theta: f64,
}

impl Default for ErrorConfig {
    fn default() -> Self {
        ErrorConfig {
            window_us: 5_000_000,
            min_alignment: 0.5,
            sustain_us: 3_000_000,
            theta: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorState {
    pub alignment: f64,
    pub in_error: bool,
    pub missing: Vec<String>,
    pub reason: Option<String>,
}

/// Flags a step whose required objects stay out of view.
#[derive(Clone, Debug)]
pub struct ErrorDetector {
    cfg: ErrorConfig,
    seen: VecDeque<(u64, String)>,
    low_since: Option<(usize, u64)>,
}

impl ErrorDetector {
    pub fn new(cfg: ErrorConfig) -> ErrorDetector {
        ErrorDetector {
            cfg,
            seen: VecDeque::new(),
            low_since: None,
        }
    }

    /// Records detections at `t_us`; those below θ are ignored.
    pub fn observe<'a>(&mut self, t_us: u64, labels: impl IntoIterator<Item = (&'a str, f64)>) {
        for (l, c) in labels {
            if c >= self.cfg.theta {
                self.seen.push_back((t_us, l.to_string()));
            }
        }
    }

    /// Alignment of `required` with the objects seen in the window ending at
    /// `t_us`. Low alignment (≤ the minimum) must persist for the sustain
    /// period within one step before the step is flagged.
    pub fn check(&mut self, t_us: u64, step: usize, required: &BTreeSet<String>) -> ErrorState {
        let start = t_us.saturating_sub(self.cfg.window_us);
        while self.seen.front().is_some_and(|(t, _)| *t < start) {
            self.seen.pop_front();
        }
        let visible: BTreeSet<&str> = self.seen.iter().filter(|(t, _)| *t <= t_us).map(|(_, l)| l.as_str()).collect();
        let missing: Vec<String> = required.iter().filter(|r| !visible.contains(r.as_str())).cloned().collect();
        let alignment = if required.is_empty() {
            1.0
        } else {
            (required.len() - missing.len()) as f64 / required.len() as f64
        };
        let low = !required.is_empty() && alignment <= self.cfg.min_alignment;
        if !low {
            self.low_since = None;
        } else if self.low_since.is_none_or(|(s, _)| s != step) {
            self.low_since = Some((step, t_us));
        }
        let in_error = self
            .low_since
            .is_some_and(|(_, since)| t_us.saturating_sub(since) >= self.cfg.sustain_us);
        ErrorState {
            alignment,
            in_error,
            reason: in_error.then(|| format!("missing: {}", missing.join(", "))),
            missing,
        }
    }
}

/// Earlier step-advance heuristic: move on once no hand has been seen for
/// `absent_us`.
#[derive(Clone, Debug)]
pub struct HandsAbsent {
    pub absent_us: u64,
    last_seen: Option<u64>,
}

impl HandsAbsent {
    pub fn new(absent_us: u64) -> HandsAbsent {
        HandsAbsent { absent_us, last_seen: None }
    }

    pub fn hands_seen(&mut self, t_us: u64) {
        self.last_seen = Some(self.last_seen.map_or(t_us, |l| l.max(t_us)));
    }

    /// Whether to advance at `t_us`; restarts the absence clock when it does.
    pub fn should_advance(&mut self, t_us: u64) -> bool {
        let since = *self.last_seen.get_or_insert(t_us);
        if t_us.saturating_sub(since) > self.absent_us {
            self.last_seen = Some(t_us);
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::task::TaskStep;
    use proptest::prelude::*;

    fn task(n: usize) -> TaskDescription {
        TaskDescription {
            task_id: "t".into(),
            title: None,
            steps: (0..n)
                .map(|i| TaskStep {
                    index: i,
                    text: format!("step {i}"),
                    required_objects: BTreeSet::new(),
                    required_actions: BTreeSet::from([format!("do s{i}")]),
                    extracted: false,
                })
                .collect(),
        }
    }

    fn model(emission: Vec<Vec<f64>>) -> EmissionModel {
        let n = emission[0].len();
        EmissionModel {
            task_id: "t".into(),
            actions: (0..n).map(|i| format!("do s{i}")).collect(),
            counts: vec![vec![0; n]; emission.len()],
            emission,
            self_stay: DEFAULT_SELF_STAY,
        }
    }

    fn act(label: &str, c: f64) -> ActionPrediction {
        let (verb, noun) = label.split_once(' ').unwrap();
        ActionPrediction {
            verb: verb.into(),
            noun: noun.into(),
            confidence: c,
        }
    }

    #[test]
    fn two_state_update_by_hand() {
        let m = model(vec![vec![0.9, 0.1], vec![0.1, 0.9]]);
        let b = step_update(&m, &[1.0, 0.0], &[act("do s1", 0.8)], 0.3);
        // prior (0.95, 0.05); likelihood (0.1, 0.9)
        let (a0, a1) = (0.95 * 0.1, 0.05 * 0.9);
        assert!((b[0] - a0 / (a0 + a1)).abs() < 1e-12);
        assert!((b[1] - a1 / (a0 + a1)).abs() < 1e-12);
        let dropped = step_update(&m, &[1.0, 0.0], &[act("do s1", 0.2)], 0.3);
        assert!((dropped[0] - 0.95).abs() < 1e-12 && (dropped[1] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn predict_only_keeps_concentrated_argmax() {
        let b = predict(&[1.0, 0.0, 0.0], 0.95);
        assert_eq!(argmax(&b), 0);
        assert_eq!(predict(&[0.0, 0.0, 1.0], 0.95), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn training_counts_and_smooths() {
        let t = task(2);
        let ev = |a: &str, s| ActionEvent { action: a.into(), step: s };
        let m = train_emissions(&t, &[vec![ev("spread butter", 0), ev("spread butter", 0), ev("do s0", 0)]], 1.0, 0.95).unwrap();
        assert_eq!(m.actions, ["do s0", "do s1", "spread butter"]);
        let spread = m.action_index("spread butter").unwrap();
        assert_eq!(argmax(&m.emission[0]), spread);
        assert!((m.emission[0][spread] - 3.0 / 6.0).abs() < 1e-12);
        assert!(m.emission[1].iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        assert!(train_emissions(&t, &[vec![ev("x y", 5)]], 1.0, 0.95).is_err());
        assert!(train_emissions(&t, &[], 1.0, 1.0).is_err());
    }

    #[test]
    fn missing_object_flags_error_after_sustain() {
        let mut d = ErrorDetector::new(ErrorConfig::default());
        let req = BTreeSet::from(["knife".to_string(), "tortilla".to_string()]);
        let mut last = None;
        for i in 0..=100u64 {
            let t = i * 100_000;
            d.observe(t, [("knife", 0.9), ("tortilla", 0.1)]);
            let s = d.check(t, 3, &req);
            assert_eq!(s.in_error, t >= 3_000_000, "t = {t}");
            last = Some(s);
        }
        assert_eq!(last.unwrap().reason.as_deref(), Some("missing: tortilla"));

        let mut d = ErrorDetector::new(ErrorConfig::default());
        for i in 0..100u64 {
            d.observe(i * 100_000, [("knife", 0.9), ("tortilla", 0.9)]);
            assert!(!d.check(i * 100_000, 0, &req).in_error);
            assert!(!d.check(i * 100_000, 0, &BTreeSet::new()).in_error);
        }
    }

    #[test]
    fn hands_absent_advances_after_gap() {
        let mut h = HandsAbsent::new(5_000_000);
        h.hands_seen(0);
        assert!(!h.should_advance(5_000_000));
        assert!(h.should_advance(5_000_001));
        assert!(!h.should_advance(6_000_000));
    }

    fn arb_model(n: usize) -> impl Strategy<Value = EmissionModel> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), n).prop_map(|rows| {
            model(rows.into_iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            }).collect())
        })
    }

    proptest! {
        #[test]
        fn updates_stay_normalized_and_forward(m in arb_model(4), obs in prop::collection::vec((0usize..3, 0.0f64..1.0), 0..60), theta in 0.0f64..1.0) {
            let mut f = StepFilter::new(m, theta);
            let mut lowest = 0;
            let mut last_step = 0;
            for (a, c) in obs {
                let b = f.update(&[act(&format!("do s{a}"), c)]).to_vec();
                prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let first = b.iter().position(|p| *p > 0.0).unwrap();
                prop_assert!(first >= lowest);
                lowest = first;
                last_step = f.step();
            }
            prop_assert!(last_step < 4);
        }

        #[test]
        fn higher_theta_never_keeps_more(m in arb_model(2), confs in prop::collection::vec(0.0f64..1.0, 0..10), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let acts: Vec<_> = confs.iter().enumerate().map(|(i, c)| act(&format!("do s{}", i % 3), *c)).collect();
            prop_assert!(surviving_actions(&m, &acts, hi).len() <= surviving_actions(&m, &acts, lo).len());
        }
    }
}
