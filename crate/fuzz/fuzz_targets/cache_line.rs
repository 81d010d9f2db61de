#![no_main]

use libfuzzer_sys::fuzz_target;
use verinduce::context::parse_cache_line;

fuzz_target!(|line: &str| {
    let _ = parse_cache_line(line);
});
