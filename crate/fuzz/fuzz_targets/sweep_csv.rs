#![no_main]
use libfuzzer_sys::fuzz_target;

use snspd_array::formats::read_sweep_csv;

fuzz_target!(|data: &str| {
    if let Ok(sweep) = read_sweep_csv(data, [1.0 / 16.0; 16]) {
        for ch in 0..16 {
            let _ = snspd_array::analysis::fit_reset_time(&sweep, ch);
        }
    }
});
