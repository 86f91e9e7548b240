#![no_main]
use libfuzzer_sys::arbitrary::{self, Arbitrary};
use libfuzzer_sys::fuzz_target;

#[derive(Debug, Arbitrary)]
struct Input<'a> {
    shape: Vec<usize>,
    bytes: &'a [u8],
}

fuzz_target!(|input: Input<'_>| {
    if let Ok(v) = calli_core::nn::decode_tensor(input.bytes, &input.shape) {
        assert_eq!(v.len() * 4, input.bytes.len());
    }
});
