#![no_main]

use libfuzzer_sys::fuzz_target;
use verinduce::bundle::{bundle_digest, lint_bundle, normalize_source};

fuzz_target!(|source: &str| {
    let _ = lint_bundle(source);
    assert_eq!(bundle_digest(source), bundle_digest(&normalize_source(source)));
});
