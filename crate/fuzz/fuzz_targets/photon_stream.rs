#![no_main]
use libfuzzer_sys::fuzz_target;

use snspd_array::formats::{parse_photon_stream, write_photon_stream};

fuzz_target!(|data: &str| {
    if let Ok(stream) = parse_photon_stream(data) {
        let mut buf = Vec::new();
        write_photon_stream(&mut buf, &stream).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(parse_photon_stream(&text).unwrap(), stream);
    }
});
