#![no_main]

use kadrtc::signaling::PresenceRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rec) = PresenceRecord::decode(data) {
        assert_eq!(rec.encode(), data);
    }
});
