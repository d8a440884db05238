#![no_main]

use kadnode::control::Request;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(req) = Request::parse(text) {
        let json = serde_json::to_string(&req).unwrap();
        assert_eq!(Request::parse(&json), Ok(req));
    }
});
