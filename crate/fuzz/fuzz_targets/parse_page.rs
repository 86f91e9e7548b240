#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(page) = calli_core::ingest::parse_page(data) {
        let _ = calli_core::preprocess::prepare_page(&page, &Default::default());
        let again = serde_json::to_string(&page).unwrap();
        assert_eq!(calli_core::ingest::parse_page(&again).unwrap(), page);
    }
});
