use std::fs;
use std::path::{Path, PathBuf};

use argus_core::reasoning::load_task;
use argus_core::synth::Scenario;

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures"))
}

fn toml_files(dir: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(fixtures().join(dir))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    out.sort();
    out
}

#[test]
fn every_task_parses() {
    let files = toml_files("tasks");
    assert!(!files.is_empty());
    for path in files {
        let task = load_task(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!task.is_empty(), "{}", path.display());
        for (i, s) in task.steps.iter().enumerate() {
            assert_eq!(s.index, i);
            assert!(
                !(s.required_objects.is_empty() && s.required_actions.is_empty() && s.text.trim().is_empty()),
                "{} step {i} is blank",
                path.display()
            );
        }
    }
}

#[test]
fn every_scenario_parses_and_names_a_known_task() {
    let tasks: Vec<String> = toml_files("tasks").iter().map(|p| load_task(p).unwrap().task_id).collect();
    let files = toml_files("scenarios");
    assert!(!files.is_empty());
    for path in files {
        let s = Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(tasks.contains(&s.task_id), "{} names unknown task {}", path.display(), s.task_id);
    }
}
