#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(page) = calli_core::ingest::parse_labelme(data) {
        // Anything accepted must survive the rest of the pipeline's entry checks.
        page.validate().unwrap();
        let _ = page.text();
        let _ = calli_core::orderformer::rule_baseline(&page, &Default::default());
    }
});
