#![no_main]
use calli_core::callialign::AlignTrainConfig;
use calli_core::orderformer::OrderTrainConfig;
use calli_core::pilots::NoiseGridConfig;
use calli_core::synthgen::GenConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(c) = toml::from_str::<GenConfig>(data) {
        let _ = c.validate();
    }
    if let Ok(c) = toml::from_str::<OrderTrainConfig>(data) {
        let _ = c.validate();
    }
    if let Ok(c) = toml::from_str::<AlignTrainConfig>(data) {
        let _ = c.validate();
    }
    if let Ok(c) = toml::from_str::<NoiseGridConfig>(data) {
        if c.validate().is_ok() {
            assert_eq!(c.mus().len(), c.mu_steps);
        }
    }
});
