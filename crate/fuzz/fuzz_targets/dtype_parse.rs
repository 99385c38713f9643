#![no_main]

use libfuzzer_sys::fuzz_target;
use quantvec::dtype_parse;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(dt) = dtype_parse(text) {
        assert_eq!(dtype_parse(&dt.to_string()).unwrap(), dt);
    }
});
