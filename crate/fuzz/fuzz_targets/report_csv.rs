#![no_main]
use libfuzzer_sys::fuzz_target;

use snspd_array::formats::{read_crosstalk_csv, read_fits_csv, read_jitter_csv, read_sde_csv};
use snspd_array::report::summarize;

fuzz_target!(|data: &str| {
    let _ = read_fits_csv(data);
    let _ = read_jitter_csv(data);
    let _ = read_crosstalk_csv(data);
    let _ = read_sde_csv(data);
    let _ = summarize(Some(data), Some(data), Some(data), Some(data), 3e6);
});
