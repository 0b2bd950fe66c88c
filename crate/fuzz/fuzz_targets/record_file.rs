//! Stream file reader over arbitrary bytes.
#![no_main]

use argus_core::record::RecordReader;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(reader) = RecordReader::new(data) else { return };
    let mut last = None;
    for m in reader {
        match m {
            Ok(m) => {
                assert!(last.is_none_or(|(seq, ts)| m.seq == seq + 1 && m.ts_us >= ts));
                last = Some((m.seq, m.ts_us));
            }
            Err(_) => break,
        }
    }
});
