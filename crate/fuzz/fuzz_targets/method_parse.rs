#![no_main]

use libfuzzer_sys::fuzz_target;
use quantvec::eval::parse_methods;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(methods) = parse_methods(text) {
        let again: Vec<String> = methods.iter().map(|m| m.to_string()).collect();
        assert_eq!(parse_methods(&again.join(",")).unwrap(), methods);
    }
});
