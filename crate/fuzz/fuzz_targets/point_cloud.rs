#![no_main]

use argus_core::spatial::PointCloud;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cloud) = PointCloud::decode(data) {
        let bytes = cloud.encode();
        let again = PointCloud::decode(&bytes).expect("re-encoded cloud decodes");
        assert_eq!(again.encode(), bytes);
    }
});
