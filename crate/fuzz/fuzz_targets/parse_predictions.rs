#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = calli_core::ingest::parse_predictions(data);
});
