#![no_main]
use libfuzzer_sys::fuzz_target;

use snspd_array::formats::parse_timetags;

fuzz_target!(|data: &str| {
    if let Ok(file) = parse_timetags(data) {
        assert!(file.records.iter().all(|r| r.channel < 16));
    }
});
