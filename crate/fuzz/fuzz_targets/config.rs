#![no_main]
use libfuzzer_sys::fuzz_target;

use snspd_array::config::ExperimentConfig;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = ExperimentConfig::parse(data) {
        // an accepted config must survive its own echo
        let echoed = cfg.to_text();
        let again = ExperimentConfig::parse(&echoed).expect("echoed config parses");
        assert_eq!(echoed, again.to_text());
    }
});
