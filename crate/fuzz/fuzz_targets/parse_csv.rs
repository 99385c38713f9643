#![no_main]

use libfuzzer_sys::fuzz_target;
use quantvec::io::parse_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_csv(data, None) {
        assert_eq!(m.data().len(), m.len() * m.dim());
        assert!(m.data().iter().all(|v| v.is_finite()));
    }
});
