#![no_main]

use kadrtc::protocol::{decode, encode};
use libfuzzer_sys::fuzz_target;

// The decoder only accepts canonical input, so anything it accepts must
// re-encode to the same bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = decode(data) {
        let again = encode(&msg).expect("decoded messages encode");
        assert_eq!(again, data);
    }
});
