//! Typed payload decoders, selected by the first input byte.
#![no_main]

use argus_core::payload::{
    decode_hands, decode_rgb_frame, ActionsPayload, CameraPayload, DetectionsPayload, GazeSample, ImuSample,
    StepStatePayload, TruthPayload,
};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&which, buf)) = data.split_first() else { return };
    match which % 9 {
        0 => {
            if let Ok(g) = GazeSample::decode(buf) {
                assert!(GazeSample::decode(&g.encode()).is_ok());
            }
        }
        1 => {
            let _ = decode_hands(buf);
        }
        2 => {
            if let Ok(s) = ImuSample::decode(buf) {
                let bytes = s.encode();
                assert_eq!(ImuSample::decode(&bytes).map(|t| t.encode()).ok(), Some(bytes));
            }
        }
        3 => {
            let _ = decode_rgb_frame(buf);
        }
        4 => {
            let _ = DetectionsPayload::decode(buf);
        }
        5 => {
            let _ = ActionsPayload::decode(buf);
        }
        6 => {
            let _ = CameraPayload::decode(buf);
        }
        7 => {
            let _ = TruthPayload::decode(buf);
        }
        _ => {
            let _ = StepStatePayload::decode(buf);
        }
    }
});
