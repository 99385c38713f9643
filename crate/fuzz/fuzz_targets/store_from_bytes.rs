#![no_main]

use libfuzzer_sys::fuzz_target;
use quantvec::io::{store_from_bytes, store_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = store_from_bytes(data) {
        let bytes = store_to_bytes(&store);
        assert_eq!(store_from_bytes(&bytes).unwrap(), store);
    }
});
