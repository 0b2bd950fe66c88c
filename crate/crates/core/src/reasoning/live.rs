use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use bytes::Bytes;

use super::{Reasoner, ReasoningError};
use crate::hub::{FeedCloser, FeedError, Hub, StartAt, SubscribeOptions};
use crate::payload::{decode_hands, ActionsPayload, DetectionsPayload};
use crate::synth::{STREAM_ACTIONS, STREAM_DETECTIONS, STREAM_HAND, STREAM_STEPS};
use crate::wire::ContentType;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiveStreams {
    pub actions: String,
    pub detections: String,
    pub hands: Option<String>,
    pub output: String,
}

impl Default for LiveStreams {
    fn default() -> Self {
        LiveStreams {
            actions: STREAM_ACTIONS.into(),
            detections: STREAM_DETECTIONS.into(),
            hands: Some(STREAM_HAND.into()),
            output: STREAM_STEPS.into(),
        }
    }
}

/// Background step tracker: consumes action and detection streams from a
/// hub and publishes one step state per action message.
pub struct LiveReasoner {
    closer: FeedCloser,
    published: Arc<AtomicU64>,
    worker: Option<JoinHandle<Reasoner>>,
}

impl LiveReasoner {
    /// Creates any missing input or output streams, then starts the worker.
    pub fn start(hub: Arc<Hub>, reasoner: Reasoner, streams: LiveStreams) -> Result<LiveReasoner, ReasoningError> {
        hub.create_stream(&streams.actions, ContentType::Actions)?;
        hub.create_stream(&streams.detections, ContentType::Detections)?;
        if let Some(h) = &streams.hands {
            hub.create_stream(h, ContentType::Hand)?;
        }
        hub.create_stream(&streams.output, ContentType::StepState)?;
        let mut inputs = vec![streams.actions.clone(), streams.detections.clone()];
        inputs.extend(streams.hands.clone());
        let sub = hub.subscribe_with(
            &inputs,
            SubscribeOptions {
                start: StartAt::Latest,
                max_lag: None,
            },
        )?;
        let closer = sub.closer();
        let published = Arc::new(AtomicU64::new(0));
        let counter = published.clone();
        let worker = std::thread::Builder::new()
            .name("live-reasoner".into())
            .spawn(move || {
                let mut r = reasoner;
                loop {
                    let m = match sub.recv() {
                        Ok(m) => m,
                        Err(FeedError::Closed | FeedError::Lagged) => break,
                    };
                    let sid = m.stream_id.as_str();
                    if sid == streams.detections {
                        if let Ok(d) = DetectionsPayload::decode(&m.payload) {
                            r.observe_detections(m.ts_us, &d);
                        }
                    } else if Some(sid) == streams.hands.as_deref() {
                        if decode_hands(&m.payload).is_ok_and(|h| !h.is_empty()) {
                            r.observe_hands(m.ts_us);
                        }
                    } else if let Ok(a) = ActionsPayload::decode(&m.payload) {
                        let mut state = r.on_actions(m.ts_us, &a);
                        state.t_us = a.t_us;
                        if hub.publish(&streams.output, m.ts_us, Bytes::from(state.encode())).is_ok() {
                            counter.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
                r
            })
            .expect("spawn reasoner thread");
        Ok(LiveReasoner {
            closer,
            published,
            worker: Some(worker),
        })
    }

    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }

    /// Stops after draining queued input; returns the final reasoner.
    pub fn stop(mut self) -> Reasoner {
        self.closer.close();
        self.worker.take().expect("running").join().expect("reasoner thread panicked")
    }
}

impl Drop for LiveReasoner {
    fn drop(&mut self) {
        self.closer.close();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
