use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use argus_core::session::SessionStore;
use argus_core::spatial::{merge_and_downsample, session_objects, GazeIndex, PointCloud, RayCast, SessionObjects, DEFAULT_LINK_M};
use argus_core::synth::{
    generate_session, generate_to_archive, GenerateOptions, Scenario, ScriptedStep, SynthStream, VecSink, STREAM_POINTCLOUD,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common;
use crate::Outcome;

const TARGET_POINTS: usize = 10_000_000;

fn only(streams: &[SynthStream]) -> GenerateOptions {
    GenerateOptions {
        seed: Some(42),
        streams: Some(streams.iter().copied().collect()),
    }
}

/// Published point clouds of the simulated session, cropped to the desk
/// and whatever stands on it.
fn desk_scene() -> Result<Vec<[f32; 3]>, String> {
    let scenario = common::pinwheels();
    let mut sink = VecSink::default();
    generate_session(&scenario, &only(&[SynthStream::Pointcloud]), &mut sink).map_err(|e| e.to_string())?;
    let room = &scenario.room;
    let (_, frames) = sink.streams.get(STREAM_POINTCLOUD).ok_or("no point cloud stream")?;
    let mut out = Vec::new();
    for (_, payload) in frames {
        let cloud = PointCloud::decode(payload).map_err(|e| e.to_string())?;
        out.extend(cloud.points.into_iter().filter(|p| {
            let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
            (room.desk_min[0]..=room.desk_max[0]).contains(&x)
                && (room.desk_min[1]..=room.desk_max[1]).contains(&z)
                && (room.desk_height - 0.02..=room.desk_height + 0.5).contains(&y)
        }));
    }
    Ok(out)
}

/// Desk scene repeated with millimetre jitter up to ten million points,
/// voxelized at 1 cm and checked against a direct per-key tally.
pub fn voxelization() -> Outcome {
    let base = desk_scene()?;
    ensure!(!base.is_empty(), "desk crop is empty");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<[f32; 3]> = (0..TARGET_POINTS)
        .map(|i| {
            let p = base[i % base.len()];
            [
                p[0] + rng.random_range(-0.001..0.001f32),
                p[1] + rng.random_range(-0.001..0.001f32),
                p[2] + rng.random_range(-0.001..0.001f32),
            ]
        })
        .collect();
    let cloud = [PointCloud::from_points(points)];

    let t = Instant::now();
    let grid = merge_and_downsample(&cloud, 0.01).map_err(|e| e.to_string())?;
    let build = t.elapsed();

    let mut tally: HashMap<[i64; 3], u64> = HashMap::new();
    for p in &cloud[0].points {
        let k = p.map(|c| (c as f64 / 0.01).floor() as i64);
        *tally.entry(k).or_default() += 1;
    }
    ensure!(tally.len() == grid.len(), "{} cells against {} distinct keys", grid.len(), tally.len());
    for (k, cell) in &grid.cells {
        let key = k.map(|c| c as i64);
        ensure!(tally.get(&key) == Some(&cell.count), "cell {k:?} holds {} points", cell.count);
    }
    ensure!(grid.total_count() == TARGET_POINTS as u64, "count {} after merge", grid.total_count());
    let again = grid.downsample(0.01).map_err(|e| e.to_string())?;
    ensure!(again == grid, "re-voxelizing changed the grid");
    ensure!(grid.len() <= 100_000, "{} cells", grid.len());
    ensure!(build.as_secs_f64() < 10.0, "build took {build:?}");
    Ok(format!(
        "{} base points inflated to {TARGET_POINTS}; {} cells at 1 cm, counts conserved and match a direct tally, idempotent; build {:.2} s",
        base.len(),
        grid.len(),
        build.as_secs_f64()
    ))
}

const PLANE_Z: f64 = 1.003;
const HALF: f64 = 0.8;

enum Expect {
    Hit(Vector3<f64>),
    Miss,
}

/// Closed-form ray/plane-square intersection, `None` inside the edge band
/// where a voxel-radius cast may legitimately go either way.
fn closed_form(o: &Vector3<f64>, d: &Vector3<f64>, max_range: f64) -> Option<Expect> {
    if d.z.abs() < 1e-12 {
        return Some(Expect::Miss);
    }
    let t = (PLANE_Z - o.z) / d.z;
    if t <= 0.0 {
        return Some(Expect::Miss);
    }
    let p = o + d * t;
    let edge = p.x.abs().max(p.y.abs());
    if edge <= HALF - 0.03 && t < max_range - 0.05 {
        Some(Expect::Hit(p))
    } else if edge >= HALF + 0.05 || t > max_range + 0.05 {
        Some(Expect::Miss)
    } else {
        None
    }
}

/// 1000 random rays against a flat square of points.
pub fn gaze_projection() -> Outcome {
    let step = 0.004;
    let n = (HALF / step).round() as i32;
    let mut pts = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            pts.push([(i as f64 * step) as f32, (j as f64 * step) as f32, PLANE_Z as f32]);
        }
    }
    let grid = merge_and_downsample(&[PointCloud::from_points(pts)], 0.01).map_err(|e| e.to_string())?;
    let index = GazeIndex::new(&grid);
    let cast = RayCast::for_grid(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let (mut hits, mut good, mut misses, mut worst) = (0, 0, 0, 0.0f64);
    let mut rays = 0;
    while rays < 1000 {
        let o = Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3));
        let d = if rng.random_bool(0.6) {
            let target = Vector3::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), PLANE_Z);
            (target - o).normalize()
        } else {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() < 1e-3 {
                continue;
            }
            v.normalize()
        };
        let Some(expect) = closed_form(&o, &d, cast.max_range) else {
            continue;
        };
        rays += 1;
        let got = index.intersect(&o, &d, cast);
        match (expect, got) {
            (Expect::Hit(p), Some(h)) => {
                hits += 1;
                let err = (h - p).norm();
                worst = worst.max(err);
                if err < 0.02 {
                    good += 1;
                }
            }
            (Expect::Hit(p), None) => return Err(format!("ray from {o:?} along {d:?} missed the plane at {p:?}")),
            (Expect::Miss, None) => misses += 1,
            (Expect::Miss, Some(h)) => return Err(format!("ray from {o:?} along {d:?} reported {h:?} but misses")),
        }
    }
    let frac = good as f64 / hits as f64;
    ensure!(hits > 0 && misses > 0, "degenerate sample: {hits} hits, {misses} misses");
    ensure!(frac >= 0.99, "{good} of {hits} hits within 2 cm (worst {:.1} mm)", worst * 1e3);
    Ok(format!(
        "{rays} rays: {hits} hits, {:.1}% within 2 cm (worst {:.1} mm); {misses} misses all reported as misses",
        frac * 100.0,
        worst * 1e3
    ))
}

fn localize(scenario: &Scenario, link_m: f64) -> Result<SessionObjects, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let streams = [SynthStream::Depth, SynthStream::Camera, SynthStream::Detections];
    let (meta, _) = generate_to_archive(scenario, &only(&streams), dir.path()).map_err(|e| e.to_string())?;
    let store = SessionStore::open(dir.path()).map_err(|e| e.to_string())?;
    session_objects(&store, &meta.session_id, None, link_m).map_err(|e| e.to_string())
}

/// The pinwheels objects minus the board the tortilla rests on, standing
/// on the desk, each looked at in turn from the rest position.
fn open_desk() -> Scenario {
    let mut room = common::pinwheels().room;
    room.objects.retain(|o| o.id != "board");
    // stand each sprite on the desk instead of sinking it into the top
    for o in &mut room.objects {
        o.position[1] = room.desk_height + o.size / 2.0 + 0.005;
    }
    let steps: Vec<ScriptedStep> = room
        .objects
        .iter()
        .map(|o| ScriptedStep {
            duration_us: 2_000_000,
            actions: Vec::new(),
            object: None,
            look_at: Some(o.position),
        })
        .collect();
    let mut s = Scenario::scripted("open-desk", room, &steps);
    s.perception.false_positive_rate = 0.0;
    s
}

/// Detections localized against rendered depth and compared with where
/// the scene put each object; then the two tortillas of the pinwheels
/// session.
pub fn localization() -> Outcome {
    let scenario = open_desk();
    // the two jars stand 16 cm apart, so link tighter than the default
    let found = localize(&scenario, 0.05)?;
    let mut checked = BTreeSet::new();
    let mut worst = 0.0f64;
    for c in found.clusters.iter().filter(|c| c.count >= 10) {
        let err = scenario
            .room
            .objects
            .iter()
            .filter(|o| o.label == c.label)
            .map(|o| (Vector3::from(o.position) - Vector3::from(c.centroid)).norm())
            .fold(f64::INFINITY, f64::min);
        ensure!(err < 0.02, "{} cluster of {} at {:?} is {:.1} mm from its object", c.label, c.count, c.centroid, err * 1e3);
        worst = worst.max(err);
        checked.insert(c.label.clone());
    }
    let labels: BTreeSet<String> = scenario.room.objects.iter().map(|o| o.label.clone()).collect();
    ensure!(checked == labels, "clusters found for {checked:?} of {labels:?}");

    let pinwheels = common::pinwheels();
    let session = localize(&pinwheels, DEFAULT_LINK_M)?;
    let tortillas: Vec<_> = session.clusters.iter().filter(|c| c.label == "tortilla").take(2).collect();
    ensure!(tortillas.len() == 2, "{} tortilla clusters", tortillas.len());
    let gap = (Vector3::from(tortillas[0].centroid) - Vector3::from(tortillas[1].centroid)).norm();
    ensure!(gap >= 0.3, "tortilla clusters {gap:.3} m apart");
    let board = pinwheels.room.objects.iter().find(|o| o.id == "board").ok_or("no board")?;
    let board_err = session
        .clusters
        .iter()
        .find(|c| c.label == board.label)
        .map(|c| (Vector3::from(c.centroid) - Vector3::from(board.position)).norm());
    Ok(format!(
        "{} detections, {} clusters covering all {} labels within {:.1} mm; pinwheels tortilla clusters {gap:.3} m apart (board under a tortilla reads {:.0} mm off)",
        found.points.len(),
        found.clusters.iter().filter(|c| c.count >= 10).count(),
        labels.len(),
        worst * 1e3,
        board_err.unwrap_or(f64::NAN) * 1e3
    ))
}
