use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use argus_core::hub::HubConfig;
use argus_core::wire::{ContentType, StreamMessage};
use futures_util::StreamExt;
use serde::{Deserialize, Serialize};
use tokio_tungstenite::tungstenite::Message;

use crate::common::TestServer;
use crate::Outcome;

const STREAMS: usize = 8;
const RATE_HZ: u64 = 100;
const SECONDS: u64 = 60;
const PER_STREAM: u64 = RATE_HZ * SECONDS;

#[derive(Serialize, Deserialize)]
struct Probe {
    i: u64,
    /// Nanoseconds since the shared epoch when the publish call started.
    sent_ns: u64,
}

/// Eight HTTP publishers at 100 Hz each for a minute, one WebSocket
/// consumer on all eight streams.
pub fn fidelity() -> Outcome {
    let started = Instant::now();
    let srv = TestServer::start(HubConfig::default());
    let names: Vec<String> = (0..STREAMS).map(|i| format!("load:{i}")).collect();
    for n in &names {
        srv.client().create_stream(n, ContentType::Json).map_err(|e| e.to_string())?;
    }
    let epoch = Arc::new(Instant::now());

    let url = srv.ws_url(&format!("streams={}&from=latest&lossless=true", names.join(",")));
    let (mut ws, _) = srv
        .rt
        .block_on(tokio_tungstenite::connect_async(url))
        .map_err(|e| format!("websocket connect: {e}"))?;
    let total = STREAMS as u64 * PER_STREAM;
    let consumer_epoch = epoch.clone();
    let consumer = srv.rt.spawn(async move {
        // (stream index, seq, probe index, latency ns)
        let mut got: Vec<(usize, u64, u64, u64)> = Vec::with_capacity(total as usize);
        while (got.len() as u64) < total {
            let next = tokio::time::timeout(Duration::from_secs(15), ws.next()).await;
            let Ok(Some(Ok(msg))) = next else { break };
            let Message::Binary(buf) = msg else { continue };
            let now = consumer_epoch.elapsed().as_nanos() as u64;
            let Ok((m, _)) = StreamMessage::decode(&buf) else { break };
            let Ok(p) = serde_json::from_slice::<Probe>(&m.payload) else { break };
            let idx = m.stream_id.as_str().trim_start_matches("load:").parse().unwrap_or(usize::MAX);
            got.push((idx, m.seq, p.i, now.saturating_sub(p.sent_ns)));
        }
        got
    });

    let publishers: Vec<_> = names
        .iter()
        .cloned()
        .map(|name| {
            let client = srv.client();
            let epoch = epoch.clone();
            thread::spawn(move || -> Result<(), String> {
                let t0 = Instant::now();
                for i in 0..PER_STREAM {
                    let due = t0 + Duration::from_micros(i * 1_000_000 / RATE_HZ);
                    let now = Instant::now();
                    if due > now {
                        thread::sleep(due - now);
                    }
                    let probe = Probe {
                        i,
                        sent_ns: epoch.elapsed().as_nanos() as u64,
                    };
                    let body = serde_json::to_vec(&probe).expect("serializable");
                    client.publish(&name, None, &body).map_err(|e| format!("{name} #{i}: {e}"))?;
                }
                Ok(())
            })
        })
        .collect();
    for p in publishers {
        p.join().map_err(|_| "publisher panicked".to_string())??;
    }
    let got = srv.rt.block_on(consumer).map_err(|e| e.to_string())?;
    let runtime = started.elapsed();

    ensure!(got.len() as u64 == total, "received {} of {total} messages", got.len());
    let mut per_stream = vec![Vec::new(); STREAMS];
    for &(idx, seq, i, _) in &got {
        ensure!(idx < STREAMS, "message from an unexpected stream");
        per_stream[idx].push((seq, i));
    }
    for (s, msgs) in per_stream.iter().enumerate() {
        ensure!(msgs.len() as u64 == PER_STREAM, "stream {s}: {} of {PER_STREAM}", msgs.len());
        for (k, &(seq, i)) in msgs.iter().enumerate() {
            ensure!(seq == k as u64 && i == k as u64, "stream {s}: position {k} holds seq {seq} probe {i}");
        }
    }
    let mut lat: Vec<u64> = got.iter().map(|g| g.3).collect();
    lat.sort_unstable();
    let pct = |q: f64| lat[((lat.len() as f64 * q).ceil() as usize).clamp(1, lat.len()) - 1] as f64 / 1e6;
    let (p50, p99, max) = (pct(0.5), pct(0.99), *lat.last().expect("non-empty") as f64 / 1e6);
    ensure!(p99 < 50.0, "p99 latency {p99:.2} ms (p50 {p50:.2}, max {max:.2})");
    ensure!(runtime < Duration::from_secs(120), "runtime {runtime:?}");
    Ok(format!(
        "{total} messages, zero loss, FIFO on {STREAMS} streams; latency p50 {p50:.2} ms p99 {p99:.2} ms max {max:.2} ms; runtime {:.1} s",
        runtime.as_secs_f64()
    ))
}
