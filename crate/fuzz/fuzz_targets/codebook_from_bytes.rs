#![no_main]

use libfuzzer_sys::fuzz_target;
use quantvec::io::{codebook_from_bytes, codebook_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(cb) = codebook_from_bytes(data) {
        let bytes = codebook_to_bytes(&cb);
        let back = codebook_from_bytes(&bytes).unwrap();
        assert_eq!(back.centroids(), cb.centroids());
        assert_eq!(back.config(), cb.config());
    }
});
