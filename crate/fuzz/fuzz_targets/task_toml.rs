#![no_main]

use argus_core::reasoning::parse_task;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(task) = parse_task(text) {
            assert!(!task.steps.is_empty());
        }
    }
});
