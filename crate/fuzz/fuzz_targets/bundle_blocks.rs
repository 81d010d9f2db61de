#![no_main]

use libfuzzer_sys::fuzz_target;
use verinduce::bundle::parse_bundles;

fuzz_target!(|completion: &str| {
    for block in parse_bundles(completion) {
        assert!(completion.contains(block.trim_end()));
    }
});
