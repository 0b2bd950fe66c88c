//! Wire envelope decoding; accepted prefixes must re-encode byte for byte.
#![no_main]

use argus_core::StreamMessage;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((msg, used)) = StreamMessage::decode(data) {
        assert!(used <= data.len());
        assert_eq!(msg.encode(), &data[..used]);
    }
});
