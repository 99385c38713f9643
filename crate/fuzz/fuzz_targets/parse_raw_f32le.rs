#![no_main]

use libfuzzer_sys::fuzz_target;
use quantvec::io::parse_raw_f32le;

fuzz_target!(|data: &[u8]| {
    let Some((&d, body)) = data.split_first() else { return };
    let dim = usize::from(d % 64) + 1;
    if let Ok(m) = parse_raw_f32le(body, dim) {
        assert_eq!(m.payload_bytes(), body);
    }
});
