use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::scenario::{EventKind, ObjectSpec, Scenario};
use crate::payload::Pose;

const DEFAULT_MOVE_US: u64 = 1_000_000;
const DEFAULT_LOOK_US: u64 = 400_000;

/// Piecewise-linear trajectory.
#[derive(Clone, Debug)]
struct Track {
    keys: Vec<(u64, Vector3<f64>)>,
}

impl Track {
    fn new(v: Vector3<f64>) -> Track {
        Track { keys: vec![(0, v)] }
    }

    fn at(&self, t: u64) -> Vector3<f64> {
        let i = self.keys.partition_point(|(kt, _)| *kt <= t);
        if i == 0 {
            return self.keys[0].1;
        }
        if i == self.keys.len() {
            return self.keys[i - 1].1;
        }
        let (t0, a) = self.keys[i - 1];
        let (t1, b) = self.keys[i];
        let f = (t - t0) as f64 / (t1 - t0) as f64;
        a + (b - a) * f
    }

    fn ramp(&mut self, t: u64, dur: u64, to: Vector3<f64>) {
        let from = self.at(t);
        self.keys.retain(|(kt, _)| *kt < t);
        self.keys.push((t, from));
        self.keys.push((t + dur.max(1), to));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpan {
    pub t0_us: u64,
    pub t1_us: u64,
    pub action: String,
    pub step: usize,
    pub object: Option<usize>,
}

#[derive(Clone, Debug)]
struct Placement {
    t_us: u64,
    position: Option<Vector3<f64>>,
}

/// Time-indexed view of a scenario's scripted state.
#[derive(Clone, Debug)]
pub struct Scene {
    pub objects: Vec<ObjectSpec>,
    head: Track,
    look: Track,
    placements: Vec<Vec<Placement>>,
    pub actions: Vec<ActionSpan>,
    pub duration_us: u64,
}

#[derive(Clone, Debug)]
pub struct SceneState {
    pub t_us: u64,
    pub head: Vector3<f64>,
    pub target: Vector3<f64>,
    /// Camera to world; camera axes x right, y down, z forward.
    pub rotation: UnitQuaternion<f64>,
    /// `(object index, world position)` for every object present.
    pub objects: Vec<(usize, Vector3<f64>)>,
    pub action: Option<ActionSpan>,
    pub step: usize,
}

impl SceneState {
    pub fn pose(&self) -> Pose {
        Pose::from_parts(self.rotation, self.head)
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }
}

/// Rotation whose z axis points along `forward` with y as close to world
/// down as possible.
pub fn look_rotation(forward: Vector3<f64>) -> UnitQuaternion<f64> {
    let f = forward.normalize();
    let down = Vector3::new(0.0, -1.0, 0.0);
    let mut d = down - f * down.dot(&f);
    if d.norm() < 1e-9 {
        d = Vector3::new(0.0, 0.0, 1.0) - f * f.z;
    }
    let d = d.normalize();
    let r = d.cross(&f);
    let m = Matrix3::from_columns(&[r, d, f]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

impl Scene {
    pub fn new(s: &Scenario) -> Scene {
        let room = &s.room;
        let mut head = Track::new(Vector3::from(room.rest_position));
        let mut look = Track::new(Vector3::from(room.rest_target));
        let index_of = |id: &str| s.room.objects.iter().position(|o| o.id == id).expect("validated");
        let mut placements: Vec<Vec<Placement>> = room
            .objects
            .iter()
            .map(|o| {
                vec![Placement {
                    t_us: 0,
                    position: o.present.then(|| Vector3::from(o.position)),
                }]
            })
            .collect();
        let mut actions: Vec<ActionSpan> = Vec::new();
        let duration_us = s.duration_us();
        let mut step = 0usize;
        for ev in &s.timeline {
            match &ev.kind {
                EventKind::MoveTo { position, duration_us } => {
                    head.ramp(ev.t_us, duration_us.unwrap_or(DEFAULT_MOVE_US), Vector3::from(*position))
                }
                EventKind::LookAt { target, duration_us } => {
                    look.ramp(ev.t_us, duration_us.unwrap_or(DEFAULT_LOOK_US), Vector3::from(*target))
                }
                EventKind::PerformAction {
                    action,
                    step: st,
                    object,
                    duration_us: d,
                } => {
                    if let Some(prev) = actions.last_mut() {
                        prev.t1_us = prev.t1_us.min(ev.t_us);
                    }
                    if let Some(st) = st {
                        step = *st;
                    }
                    actions.push(ActionSpan {
                        t0_us: ev.t_us,
                        t1_us: d.map_or(duration_us, |d| ev.t_us + d),
                        action: action.clone(),
                        step,
                        object: object.as_deref().map(index_of),
                    });
                }
                EventKind::PlaceObject { object, position } => placements[index_of(object)].push(Placement {
                    t_us: ev.t_us,
                    position: Some(Vector3::from(*position)),
                }),
                EventKind::RemoveObject { object } => placements[index_of(object)].push(Placement {
                    t_us: ev.t_us,
                    position: None,
                }),
            }
        }
        Scene {
            objects: room.objects.clone(),
            head,
            look,
            placements,
            actions,
            duration_us,
        }
    }

    pub fn action_at(&self, t: u64) -> Option<&ActionSpan> {
        let i = self.actions.partition_point(|a| a.t0_us <= t);
        let a = self.actions.get(i.checked_sub(1)?)?;
        (t < a.t1_us).then_some(a)
    }

    /// Ground-truth step: the step of the latest started action.
    pub fn step_at(&self, t: u64) -> usize {
        let i = self.actions.partition_point(|a| a.t0_us <= t);
        i.checked_sub(1).map_or(0, |i| self.actions[i].step)
    }

    pub fn object_position(&self, idx: usize, t: u64) -> Option<Vector3<f64>> {
        let p = &self.placements[idx];
        let i = p.partition_point(|pl| pl.t_us <= t);
        p[i.saturating_sub(1)].position
    }

    pub fn at(&self, t: u64) -> SceneState {
        let head = self.head.at(t);
        let mut target = self.look.at(t);
        if (target - head).norm() < 1e-6 {
            target = head + Vector3::z();
        }
        let objects = (0..self.objects.len())
            .filter_map(|i| self.object_position(i, t).map(|p| (i, p)))
            .collect();
        SceneState {
            t_us: t,
            head,
            target,
            rotation: look_rotation(target - head),
            objects,
            action: self.action_at(t).cloned(),
            step: self.step_at(t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scenario::{RoomModel, ScriptEvent, ScriptedStep};

    #[test]
    fn look_rotation_is_right_handed_and_points_forward() {
        for f in [Vector3::z(), Vector3::new(0.3, -0.8, 0.5), Vector3::new(-1.0, 0.0, 0.0)] {
            let q = look_rotation(f);
            let fw = q * Vector3::z();
            assert!((fw - f.normalize()).norm() < 1e-12);
            let down = q * Vector3::y();
            assert!(down.y <= 1e-12, "camera y should not point up");
            assert!((q.to_rotation_matrix().matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tracks_ramp_and_hold() {
        let mut s = Scenario::scripted("t", RoomModel::default(), &[]);
        s.timeline = vec![ScriptEvent {
            t_us: 1_000_000,
            kind: EventKind::MoveTo {
                position: [1.0, 1.55, -0.1],
                duration_us: Some(1_000_000),
            },
        }];
        let scene = Scene::new(&s);
        assert_eq!(scene.at(0).head, Vector3::new(0.0, 1.55, -0.1));
        assert!((scene.at(1_500_000).head.x - 0.5).abs() < 1e-12);
        assert_eq!(scene.at(5_000_000).head.x, 1.0);
    }

    #[test]
    fn scripted_steps_set_truth_step_and_actions() {
        let steps: Vec<ScriptedStep> = (0..3)
            .map(|i| ScriptedStep {
                duration_us: 2_000_000,
                actions: vec![format!("do thing{i}"), format!("check thing{i}")],
                object: None,
                look_at: None,
            })
            .collect();
        let s = Scenario::scripted("t", RoomModel::default(), &steps);
        s.validate().unwrap();
        let scene = Scene::new(&s);
        assert_eq!(scene.step_at(0), 0);
        assert_eq!(scene.step_at(2_000_000), 1);
        assert_eq!(scene.step_at(5_999_999), 2);
        assert_eq!(scene.action_at(1_000_000).unwrap().action, "check thing0");
        assert_eq!(scene.action_at(999_999).unwrap().action, "do thing0");
        assert!(scene.action_at(6_000_000).is_none());
    }
}
