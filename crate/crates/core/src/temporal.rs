//! Confidence matrix over time bins for every detected object, action and
//! step label, plus per-label summaries and threshold filtering.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::payload::{ActionsPayload, DetectionsPayload, PayloadError, StepStatePayload};
use crate::session::{SessionError, SessionStore};
use crate::wire::ContentType;

pub const DEFAULT_BIN_US: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("session has no model output streams")]
    NoModelOutputs,
    #[error("bin width must be positive")]
    ZeroBinWidth,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("bad payload in {stream} seq {seq}: {source}")]
    Payload {
        stream: String,
        seq: u64,
        source: PayloadError,
    },
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Objects,
    Actions,
    Steps,
}

/// One raw model output. `frame` groups outputs reported in the same
/// update so instance counts can be taken per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t_us: u64,
    pub frame: u64,
    pub category: Category,
    pub label: String,
    pub confidence: f64,
}

pub trait Confidence {
    fn confidence(&self) -> f64;
}

impl Confidence for Observation {
    fn confidence(&self) -> f64 {
        self.confidence
    }
}

impl Confidence for crate::payload::Detection {
    fn confidence(&self) -> f64 {
        self.confidence
    }
}

impl Confidence for crate::payload::ActionPrediction {
    fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Items with confidence ≥ θ, in their original order.
pub fn threshold_filter<T: Confidence + Clone>(items: &[T], theta: f64) -> Vec<T> {
    items.iter().filter(|i| i.confidence() >= theta).cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub category: Category,
    pub label: String,
    /// `None` for vocabulary rows that were never observed.
    pub first_seen_us: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub row: usize,
    pub column: usize,
    /// Maximum confidence in the bin.
    pub confidence: f64,
    /// Largest number of instances reported in a single frame in the bin.
    pub instances: u32,
}

/// Sparse labels × bins matrix; absent cells are blank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceMatrix {
    pub bin_width_us: u64,
    pub duration_us: u64,
    pub columns: usize,
    pub rows: Vec<MatrixRow>,
    /// Sorted by `(row, column)`.
    pub cells: Vec<MatrixCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub category: Category,
    pub label: String,
    /// Mean over raw detections; `None` when never detected.
    pub average_confidence: Option<f64>,
    pub detection_coverage: u64,
}

/// Labels that should appear even when never observed.
pub type Vocabulary = BTreeMap<Category, Vec<String>>;

pub fn column_count(duration_us: u64, bin_width_us: u64) -> usize {
    (duration_us.div_ceil(bin_width_us) as usize).max(1)
}

pub fn column_of(t_us: u64, bin_width_us: u64, columns: usize) -> usize {
    ((t_us / bin_width_us) as usize).min(columns - 1)
}

fn sorted_rows(obs: &[Observation], vocabulary: Option<&Vocabulary>) -> Vec<MatrixRow> {
    let mut first: HashMap<(Category, &str), u64> = HashMap::new();
    for o in obs {
        first
            .entry((o.category, o.label.as_str()))
            .and_modify(|t| *t = (*t).min(o.t_us))
            .or_insert(o.t_us);
    }
    let mut rows: Vec<MatrixRow> = first
        .into_iter()
        .map(|((category, label), t)| MatrixRow {
            category,
            label: label.to_string(),
            first_seen_us: Some(t),
        })
        .collect();
    if let Some(v) = vocabulary {
        for (&category, labels) in v {
            for label in labels {
                if !rows.iter().any(|r| r.category == category && &r.label == label) {
                    rows.push(MatrixRow {
                        category,
                        label: label.clone(),
                        first_seen_us: None,
                    });
                }
            }
        }
    }
    // unseen vocabulary rows go last within their category
    rows.sort_by(|a, b| {
        (a.category, a.first_seen_us.is_none(), a.first_seen_us, &a.label).cmp(&(
            b.category,
            b.first_seen_us.is_none(),
            b.first_seen_us,
            &b.label,
        ))
    });
    rows
}

pub fn build_matrix(
    obs: &[Observation],
    duration_us: u64,
    bin_width_us: u64,
    vocabulary: Option<&Vocabulary>,
) -> Result<ConfidenceMatrix, TemporalError> {
    if bin_width_us == 0 {
        return Err(TemporalError::ZeroBinWidth);
    }
    let columns = column_count(duration_us, bin_width_us);
    let rows = sorted_rows(obs, vocabulary);
    let row_of: HashMap<(Category, &str), usize> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.category, r.label.as_str()), i))
        .collect();
    let mut per_frame: HashMap<(usize, u64), u32> = HashMap::new();
    let mut cells: BTreeMap<(usize, usize), MatrixCell> = BTreeMap::new();
    for o in obs {
        let row = row_of[&(o.category, o.label.as_str())];
        let column = column_of(o.t_us, bin_width_us, columns);
        let n = per_frame.entry((row, o.frame)).or_insert(0);
        *n += 1;
        let n = *n;
        let cell = cells.entry((row, column)).or_insert(MatrixCell {
            row,
            column,
            confidence: o.confidence,
            instances: 0,
        });
        cell.confidence = cell.confidence.max(o.confidence);
        cell.instances = cell.instances.max(n);
    }
    Ok(ConfidenceMatrix {
        bin_width_us,
        duration_us,
        columns,
        rows,
        cells: cells.into_values().collect(),
    })
}

impl ConfidenceMatrix {
    pub fn cell(&self, row: usize, column: usize) -> Option<&MatrixCell> {
        self.cells
            .binary_search_by(|c| (c.row, c.column).cmp(&(row, column)))
            .ok()
            .map(|i| &self.cells[i])
    }

    pub fn row_index(&self, category: Category, label: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.category == category && r.label == label)
    }

    /// Labels whose cell at `t_us`'s bin exists with confidence ≥ θ.
    pub fn slice_at(&self, t_us: u64, theta: f64) -> Vec<SliceEntry> {
        let column = column_of(t_us, self.bin_width_us, self.columns);
        self.cells
            .iter()
            .filter(|c| c.column == column && c.confidence >= theta)
            .map(|c| SliceEntry {
                category: self.rows[c.row].category,
                label: self.rows[c.row].label.clone(),
                confidence: c.confidence,
                instances: c.instances,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub category: Category,
    pub label: String,
    pub confidence: f64,
    pub instances: u32,
}

/// Per-label average confidence over raw observations and their count.
/// Vocabulary labels never observed appear with coverage 0.
pub fn summarize(obs: &[Observation], vocabulary: Option<&Vocabulary>) -> Vec<RowSummary> {
    let mut acc: HashMap<(Category, &str), (f64, u64)> = HashMap::new();
    for o in obs {
        let e = acc.entry((o.category, o.label.as_str())).or_insert((0.0, 0));
        e.0 += o.confidence;
        e.1 += 1;
    }
    sorted_rows(obs, vocabulary)
        .into_iter()
        .map(|r| {
            let (sum, n) = acc.get(&(r.category, r.label.as_str())).copied().unwrap_or((0.0, 0));
            RowSummary {
                category: r.category,
                label: r.label,
                average_confidence: (n > 0).then(|| sum / n as f64),
                detection_coverage: n,
            }
        })
        .collect()
}

/// Session-relative observations from every model output stream.
pub fn session_observations(store: &SessionStore, session_id: &str) -> Result<(Vec<Observation>, u64), TemporalError> {
    let meta = store.meta(session_id)?;
    let outputs: Vec<_> = meta
        .streams
        .iter()
        .filter(|s| {
            matches!(
                s.content_type,
                ContentType::Detections | ContentType::Actions | ContentType::StepState
            )
        })
        .collect();
    if outputs.is_empty() {
        return Err(TemporalError::NoModelOutputs);
    }
    let mut obs = Vec::new();
    let mut frame = 0u64;
    for info in outputs {
        for m in store.read_stream(session_id, &info.stream_id)? {
            let t = m.ts_us.saturating_sub(meta.start_ts_us);
            let bad = |source| TemporalError::Payload {
                stream: info.stream_id.clone(),
                seq: m.seq,
                source,
            };
            frame += 1;
            match info.content_type {
                ContentType::Detections => {
                    for d in DetectionsPayload::decode(&m.payload).map_err(bad)?.detections {
                        obs.push(Observation {
                            t_us: t,
                            frame,
                            category: Category::Objects,
                            label: d.label,
                            confidence: d.confidence,
                        });
                    }
                }
                ContentType::Actions => {
                    for a in ActionsPayload::decode(&m.payload).map_err(bad)?.actions {
                        obs.push(Observation {
                            t_us: t,
                            frame,
                            category: Category::Actions,
                            label: a.label(),
                            confidence: a.confidence,
                        });
                    }
                }
                _ => {
                    let s = StepStatePayload::decode(&m.payload).map_err(bad)?;
                    obs.push(Observation {
                        t_us: t,
                        frame,
                        category: Category::Steps,
                        label: format!("step {}", s.step),
                        confidence: s.confidence,
                    });
                }
            }
        }
    }
    obs.sort_by_key(|o| (o.t_us, o.frame));
    Ok((obs, meta.duration_us))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ob(t_s: f64, label: &str, conf: f64, frame: u64) -> Observation {
        Observation {
            t_us: (t_s * 1e6) as u64,
            frame,
            category: Category::Objects,
            label: label.into(),
            confidence: conf,
        }
    }

    #[test]
    fn single_knife_detection() {
        let m = build_matrix(&[ob(14.0, "knife", 0.8, 0)], 60_000_000, DEFAULT_BIN_US, None).unwrap();
        assert_eq!(m.columns, 60);
        assert_eq!(m.cells.len(), 1);
        assert_eq!((m.cells[0].row, m.cells[0].column, m.cells[0].confidence), (0, 14, 0.8));
        let s = summarize(&[ob(14.0, "knife", 0.8, 0)], None);
        assert_eq!(s[0].detection_coverage, 1);
        assert_eq!(s[0].average_confidence, Some(0.8));
    }

    #[test]
    fn constant_label_every_bin() {
        let obs: Vec<Observation> = (0..10).map(|i| ob(i as f64 + 0.5, "board", 0.5, i)).collect();
        let s = summarize(&obs, None);
        assert_eq!(s[0].average_confidence, Some(0.5));
        assert_eq!(s[0].detection_coverage, 10);
    }

    #[test]
    fn instances_counted_per_frame() {
        let obs = vec![
            ob(1.0, "toothpick", 0.4, 1),
            ob(1.0, "toothpick", 0.7, 1),
            ob(1.0, "toothpick", 0.5, 1),
            ob(1.5, "toothpick", 0.9, 2),
        ];
        let m = build_matrix(&obs, 3_000_000, DEFAULT_BIN_US, None).unwrap();
        assert_eq!(m.cells[0].instances, 3);
        assert_eq!(m.cells[0].confidence, 0.9);
    }

    #[test]
    fn rows_order_by_category_then_first_seen() {
        let mut obs = vec![ob(5.0, "knife", 0.8, 0), ob(2.0, "tortilla", 0.8, 1)];
        obs.push(Observation {
            category: Category::Actions,
            ..ob(0.0, "spread jelly", 0.3, 2)
        });
        let mut vocab = Vocabulary::new();
        vocab.insert(Category::Actions, vec!["move wrap".into(), "spread jelly".into()]);
        let m = build_matrix(&obs, 10_000_000, DEFAULT_BIN_US, Some(&vocab)).unwrap();
        let labels: Vec<&str> = m.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["tortilla", "knife", "spread jelly", "move wrap"]);
        let s = summarize(&obs, Some(&vocab));
        let wrap = s.iter().find(|r| r.label == "move wrap").unwrap();
        assert_eq!((wrap.detection_coverage, wrap.average_confidence), (0, None));
    }

    #[test]
    fn threshold_examples() {
        let obs = vec![ob(0.0, "a", 0.48, 0), ob(0.0, "b", 0.24, 0), ob(0.0, "c", 0.18, 0)];
        let kept = threshold_filter(&obs, 0.3);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.48);
        assert_eq!(threshold_filter(&obs, 0.0), obs);
        let ones = vec![ob(0.0, "a", 1.0, 0), ob(0.0, "b", 0.99, 0)];
        assert_eq!(threshold_filter(&ones, 1.0).len(), 1);
    }

    #[test]
    fn slice_reports_cells_at_or_above_theta() {
        let obs = vec![ob(3.2, "a", 0.48, 0), ob(3.4, "b", 0.24, 1), ob(4.1, "c", 0.9, 2)];
        let m = build_matrix(&obs, 10_000_000, DEFAULT_BIN_US, None).unwrap();
        let s = m.slice_at(3_500_000, 0.3);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].label, "a");
        assert!(build_matrix(&obs, 1, 0, None).is_err());
    }

    fn arb_obs() -> impl Strategy<Value = Vec<Observation>> {
        prop::collection::vec((0u64..20_000_000, 0usize..4, 0.0f64..=1.0, 0u64..50), 0..80).prop_map(|v| {
            v.into_iter()
                .map(|(t, l, c, f)| Observation {
                    t_us: t,
                    frame: f,
                    category: if l == 3 { Category::Actions } else { Category::Objects },
                    label: ["knife", "tortilla", "jar", "spread jelly"][l].into(),
                    confidence: c,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn rebinning_takes_max_of_fine_cells(obs in arb_obs(), k in 2u64..6) {
            let fine = build_matrix(&obs, 20_000_000, 1_000_000, None).unwrap();
            let coarse = build_matrix(&obs, 20_000_000, k * 1_000_000, None).unwrap();
            prop_assert_eq!(&fine.rows, &coarse.rows);
            for row in 0..fine.rows.len() {
                for col in 0..coarse.columns {
                    let expect = (col * k as usize..((col + 1) * k as usize).min(fine.columns))
                        .filter_map(|c| fine.cell(row, c).map(|x| x.confidence))
                        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
                    prop_assert_eq!(coarse.cell(row, col).map(|c| c.confidence), expect);
                }
            }
        }

        #[test]
        fn padding_does_not_change_averages(obs in arb_obs(), pad in 0u64..100_000_000) {
            let a = summarize(&obs, None);
            let m1 = build_matrix(&obs, 20_000_000, 1_000_000, None).unwrap();
            let m2 = build_matrix(&obs, 20_000_000 + pad, 1_000_000, None).unwrap();
            prop_assert_eq!(&m1.cells, &m2.cells);
            let coverage: u64 = a.iter().map(|r| r.detection_coverage).sum();
            prop_assert_eq!(coverage, obs.len() as u64);
        }

        #[test]
        fn threshold_is_monotone(obs in arb_obs(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = threshold_filter(&obs, lo);
            let b = threshold_filter(&obs, hi);
            prop_assert!(b.iter().all(|x| a.contains(x)));
            prop_assert!(b.len() <= a.len());
        }
    }
}
