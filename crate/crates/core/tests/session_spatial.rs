use std::path::Path;
use std::time::Instant;

use argus_core::spatial::{session_heatmap, session_objects, session_world, HeatmapLayer, DEFAULT_LINK_M};
use argus_core::session::SessionStore;
use argus_core::synth::{generate_to_archive, GenerateOptions, Scenario};

#[test]
fn pinwheels_archive_supports_spatial_queries() {
    let dir = tempfile::tempdir().unwrap();
    let path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/scenarios/pinwheels.toml"));
    let scenario = Scenario::load(path).unwrap();
    let started = Instant::now();
    let (meta, report) = generate_to_archive(&scenario, &GenerateOptions::default(), dir.path()).unwrap();
    println!("generated {} messages in {:?}", report.messages.values().sum::<u64>(), started.elapsed());
    let store = SessionStore::open(dir.path()).unwrap();
    let world = session_world(&store, &meta.session_id, 0.01).unwrap();
    assert!(world.cells.len() > 1000, "{} cells", world.cells.len());
    let heat = session_heatmap(&store, &meta.session_id, HeatmapLayer::Gaze, 0, u64::MAX, 0.05).unwrap();
    assert!(!heat.densities.is_empty());
    let objs = session_objects(&store, &meta.session_id, Some("tortilla"), DEFAULT_LINK_M).unwrap();
    let big: Vec<_> = objs.clusters.iter().filter(|c| c.count >= 5).collect();
    println!("{:?}", objs.clusters);
    assert!(big.len() >= 2);
    println!("total {:?}", started.elapsed());
}
