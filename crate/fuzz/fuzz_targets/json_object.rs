#![no_main]

use libfuzzer_sys::fuzz_target;
use verinduce::context::extract_json_object;

fuzz_target!(|reply: &str| {
    let _ = extract_json_object(reply);
});
