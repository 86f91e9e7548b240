#![no_main]
use std::path::{Component, Path};

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(m) = calli_core::ingest::parse_dataset_manifest(data) {
        for f in &m.files {
            assert!(Path::new(&f.path)
                .components()
                .all(|c| matches!(c, Component::Normal(_))));
        }
    }
});
