mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use argus_core::hub::{HubConfig, CONTROL_STREAM};
use argus_core::wire::{ContentType, StreamMessage};
use common::TestServer;
use futures_util::StreamExt;
use tokio_tungstenite::tungstenite::{self, Message};

#[test]
fn create_is_idempotent_and_conflicts_are_409() {
    let srv = TestServer::start(HubConfig::default());
    let c = srv.client();
    let info = c.create_stream("main:rgb", ContentType::JpegFrame).unwrap();
    assert_eq!(info.message_count, 0);
    assert_eq!(info.content_type, ContentType::JpegFrame);
    c.create_stream("main:rgb", ContentType::JpegFrame).unwrap();
    let err = c.create_stream("main:rgb", ContentType::Depth16).unwrap_err();
    assert_eq!(err.status(), Some(409));
    let err = c.create_stream("Main RGB", ContentType::JpegFrame).unwrap_err();
    assert!(matches!(err.status(), Some(400 | 404)), "{err}");
}

#[test]
fn put_without_content_type_is_rejected() {
    let srv = TestServer::start(HubConfig::default());
    let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
    let r = agent.put(&format!("{}/streams/a", srv.url)).send_empty().unwrap();
    assert_eq!(r.status().as_u16(), 400);
    let r = agent.put(&format!("{}/streams/a?content_type=gaze", srv.url)).send_empty().unwrap();
    assert_eq!(r.status().as_u16(), 201);
    let r = agent.put(&format!("{}/streams/b?content_type=video", srv.url)).send_empty().unwrap();
    assert_eq!(r.status().as_u16(), 400);
}

#[test]
fn publish_latest_and_info_round_trip() {
    let srv = TestServer::start(HubConfig::default());
    let c = srv.client();
    c.create_stream("s", ContentType::Json).unwrap();
    assert!(c.latest("s").unwrap().is_none());
    for i in 0..4u64 {
        let r = c.publish("s", Some(100 + i), format!("{{\"i\":{i}}}").as_bytes()).unwrap();
        assert_eq!((r.seq, r.ts_us), (i, 100 + i));
    }
    let m = c.latest("s").unwrap().unwrap();
    assert_eq!((m.seq, m.ts_us, m.content_type), (3, 103, ContentType::Json));
    assert_eq!(&m.payload[..], b"{\"i\":3}");
    let info = c.info("s").unwrap();
    assert_eq!((info.message_count, info.first_ts_us, info.last_ts_us), (4, 100, 103));
    assert_eq!(info.bytes_total, 4 * 7);

    let err = c.publish("s", Some(50), b"x").unwrap_err();
    assert_eq!(err.status(), Some(409));
    assert_eq!(c.publish("nope", Some(1), b"x").unwrap_err().status(), Some(404));
    assert_eq!(c.publish("s", Some(200), b"").unwrap_err().status(), Some(400));
    assert_eq!(c.info("nope").unwrap_err().status(), Some(404));
}

#[test]
fn publish_without_timestamp_uses_hub_clock() {
    let srv = TestServer::start(HubConfig::default());
    let c = srv.client();
    c.create_stream("s", ContentType::Imu).unwrap();
    let before = c.now_us().unwrap();
    let a = c.publish("s", None, b"a").unwrap();
    let b = c.publish("s", None, b"b").unwrap();
    assert!(a.ts_us >= before && b.ts_us >= a.ts_us);
}

#[test]
fn control_stream_announces_epoch() {
    let srv = TestServer::start(HubConfig::default());
    let m = srv.client().latest(CONTROL_STREAM).unwrap().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&m.payload).unwrap();
    assert_eq!(v["epoch_wall_ns"].as_u64(), Some(srv.state.hub.epoch_wall_ns()));
}

fn ws_connect_error(srv: &TestServer, query: &str) -> u16 {
    let url = srv.ws_url(query);
    match srv.rt.block_on(tokio_tungstenite::connect_async(url)) {
        Err(tungstenite::Error::Http(resp)) => resp.status().as_u16(),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("handshake unexpectedly succeeded"),
    }
}

#[test]
fn ws_rejects_bad_subscriptions() {
    let srv = TestServer::start(HubConfig {
        retention_msgs: 4,
        ..HubConfig::default()
    });
    let c = srv.client();
    c.create_stream("s", ContentType::Json).unwrap();
    for i in 0..10 {
        c.publish("s", Some(i), b"{}").unwrap();
    }
    assert_eq!(ws_connect_error(&srv, "streams=nope"), 404);
    assert_eq!(ws_connect_error(&srv, "streams="), 400);
    assert_eq!(ws_connect_error(&srv, "streams=s&from=seq:x"), 400);
    assert_eq!(ws_connect_error(&srv, "streams=s&from=seq:0"), 410);
}

#[test]
fn ws_replays_from_seq_then_follows_live() {
    let srv = TestServer::start(HubConfig::default());
    let c = srv.client();
    c.create_stream("a", ContentType::Json).unwrap();
    c.create_stream("b", ContentType::Imu).unwrap();
    for i in 0..10u64 {
        c.publish("a", Some(i), format!("{i}").as_bytes()).unwrap();
    }
    let (mut ws, _) = srv
        .rt
        .block_on(tokio_tungstenite::connect_async(srv.ws_url("streams=a,b&from=seq:5")))
        .unwrap();
    for i in 10..60u64 {
        c.publish("a", Some(i), format!("{i}").as_bytes()).unwrap();
        c.publish("b", Some(i), b"imu").unwrap();
    }
    let mut got: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    srv.rt.block_on(async {
        while got.values().map(Vec::len).sum::<usize>() < 55 + 45 {
            let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
            let Message::Binary(buf) = msg else { continue };
            let (m, used) = StreamMessage::decode(&buf).unwrap();
            assert_eq!(used, buf.len());
            got.entry(m.stream_id.as_str().to_string()).or_default().push(m.seq);
        }
    });
    assert_eq!(got["a"], (5..60).collect::<Vec<u64>>());
    // the start position applies to every listed stream
    assert_eq!(got["b"], (5..50).collect::<Vec<u64>>());
}

#[test]
fn ws_latest_sees_only_new_messages() {
    let srv = TestServer::start(HubConfig::default());
    let c = srv.client();
    c.create_stream("a", ContentType::Json).unwrap();
    c.publish("a", Some(0), b"old").unwrap();
    let (mut ws, _) = srv
        .rt
        .block_on(tokio_tungstenite::connect_async(srv.ws_url("streams=a&from=latest")))
        .unwrap();
    c.publish("a", Some(1), b"new").unwrap();
    let m = srv.rt.block_on(async {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
            if let Message::Binary(buf) = msg {
                return StreamMessage::decode(&buf).unwrap().0;
            }
        }
    });
    assert_eq!((m.seq, &m.payload[..]), (1, &b"new"[..]));
}

#[test]
fn closing_the_socket_releases_the_subscription() {
    let srv = TestServer::start(HubConfig::default());
    let c = srv.client();
    c.create_stream("a", ContentType::Json).unwrap();
    let (mut ws, _) = srv
        .rt
        .block_on(tokio_tungstenite::connect_async(srv.ws_url("streams=a")))
        .unwrap();
    let hub = srv.state.hub.clone();
    let wait_for = |n: usize| {
        for _ in 0..200 {
            if hub.subscriber_count("a").unwrap() == n {
                return true;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        false
    };
    assert!(wait_for(1));
    srv.rt.block_on(ws.close(None)).unwrap();
    drop(ws);
    // the feed thread notices on the next message
    c.publish("a", Some(1), b"x").unwrap();
    assert!(wait_for(0));
}
