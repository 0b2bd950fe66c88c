#![no_main]

use argus_core::payload::Raster;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = Raster::decode(data) {
        assert_eq!(Raster::decode(&r.encode()).ok(), Some(r));
    }
});
