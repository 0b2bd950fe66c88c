use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use argus_core::hub::HubConfig;
use argus_core::session::{ReplayReport, SessionMeta, DEFAULT_MAX_REPLAY_GAP_US};
use argus_core::synth::{generate_to_hub, GenerateOptions, Pacing, SynthStream};
use argus_server::client::HubClient;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::common::{self, TestServer};
use crate::Outcome;

fn start(c: &HubClient, name: &str, streams: &[String]) -> Result<String, String> {
    let v: serde_json::Value = c
        .post_json("/sessions", &json!({ "name": name, "streams": streams, "task_id": "pinwheels" }))
        .map_err(|e| format!("start {name}: {e}"))?;
    Ok(v["session_id"].as_str().unwrap_or_default().to_string())
}

/// Waits for the recorder to drain, then stops it.
fn stop_when(c: &HubClient, id: &str, expected: &BTreeMap<String, u64>) -> Result<SessionMeta, String> {
    let t = Instant::now();
    loop {
        let m: SessionMeta = c.get_json(&format!("/sessions/{id}")).map_err(|e| e.to_string())?;
        if expected.iter().all(|(s, n)| m.stream(s).is_some_and(|i| i.message_count == *n)) {
            break;
        }
        if t.elapsed() > Duration::from_secs(60) {
            return Err(format!("recorder of {id} did not catch up"));
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    c.post_empty(&format!("/sessions/{id}/stop")).map_err(|e| e.to_string())
}

fn digests(srv: &TestServer, id: &str, streams: &[String]) -> Result<Vec<(usize, [u8; 32])>, String> {
    streams
        .iter()
        .map(|s| {
            let msgs = srv.state.store.read_stream(id, s).map_err(|e| e.to_string())?;
            let mut h = Sha256::new();
            for m in &msgs {
                h.update((m.payload.len() as u64).to_le_bytes());
                h.update(&m.payload);
            }
            Ok((msgs.len(), h.finalize().into()))
        })
        .collect()
}

/// Scheduled playback time at `speed` for merged timestamps.
fn expected_wall_us(srv: &TestServer, id: &str, streams: &[String], speed: f64) -> Result<f64, String> {
    let mut ts = Vec::new();
    for s in streams {
        ts.extend(srv.state.store.read_stream(id, s).map_err(|e| e.to_string())?.iter().map(|m| m.ts_us));
    }
    ts.sort_unstable();
    Ok(ts.windows(2).map(|w| (w[1] - w[0]).min(DEFAULT_MAX_REPLAY_GAP_US) as f64).sum::<f64>() / speed)
}

/// Simulated pinwheels session recorded through the API, replayed at 1x
/// onto fresh streams, re-recorded and compared; then timed at 2x.
pub fn round_trip() -> Outcome {
    let srv = TestServer::start(HubConfig::default());
    let c = srv.client();
    let originals: Vec<String> = SynthStream::ALL.iter().map(|s| s.stream_id().to_string()).collect();
    let replays: Vec<String> = originals.iter().map(|s| format!("{s}:replay:1")).collect();
    for (s, r) in SynthStream::ALL.iter().zip(&replays) {
        c.create_stream(s.stream_id(), s.content_type()).map_err(|e| e.to_string())?;
        c.create_stream(r, s.content_type()).map_err(|e| e.to_string())?;
    }

    let a = start(&c, "pinwheels seed 42", &originals)?;
    let opts = GenerateOptions {
        seed: Some(42),
        streams: None,
    };
    let report = generate_to_hub(&common::pinwheels(), &opts, &srv.state.hub, Pacing::Fast).map_err(|e| e.to_string())?;
    let first = stop_when(&c, &a, &report.messages)?;

    let b = start(&c, "re-recorded replay", &replays)?;
    let rep: ReplayReport = c
        .post_empty(&format!("/sessions/{a}/replay?speed=1"))
        .map_err(|e| format!("replay: {e}"))?;
    ensure!(rep.replay_index == 1, "replay went to index {}", rep.replay_index);
    let want: BTreeMap<String, u64> = first
        .streams
        .iter()
        .map(|s| (format!("{}:replay:1", s.stream_id), s.message_count))
        .collect();
    stop_when(&c, &b, &want)?;

    let da = digests(&srv, &a, &originals)?;
    let db = digests(&srv, &b, &replays)?;
    let mut messages = 0;
    for ((s, x), y) in originals.iter().zip(&da).zip(&db) {
        ensure!(x.0 > 0, "{s} recorded nothing");
        ensure!(x == y, "{s}: {} vs {} messages, digests differ: {}", x.0, y.0, x.1 != y.1);
        messages += x.0;
    }
    let expect_1x = expected_wall_us(&srv, &a, &originals, 1.0)?;

    let fast: ReplayReport = c
        .post_empty(&format!("/sessions/{a}/replay?speed=2"))
        .map_err(|e| format!("replay at 2x: {e}"))?;
    let expect_2x = expect_1x / 2.0;
    let ratio = fast.wall_duration_us as f64 / expect_2x;
    ensure!(
        (0.9..=1.1).contains(&ratio),
        "2x replay took {:.2} s against {:.2} s scheduled",
        fast.wall_duration_us as f64 / 1e6,
        expect_2x / 1e6
    );
    Ok(format!(
        "{messages} messages on {} streams hash-identical after replay and re-record; 1x replay {:.2} s (scheduled {:.2} s); 2x replay {:.2} s vs {:.2} s scheduled (ratio {ratio:.3})",
        originals.len(),
        rep.wall_duration_us as f64 / 1e6,
        expect_1x / 1e6,
        fast.wall_duration_us as f64 / 1e6,
        expect_2x / 1e6
    ))
}
