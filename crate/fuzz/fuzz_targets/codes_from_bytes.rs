#![no_main]

use libfuzzer_sys::fuzz_target;
use quantvec::io::{codes_from_bytes, codes_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(codes) = codes_from_bytes(data) {
        assert_eq!(codes_from_bytes(&codes_to_bytes(&codes)).unwrap(), codes);
    }
});
