#![no_main]

use libfuzzer_sys::fuzz_target;
use verinduce::stub::{lexer::tokenize, parser::parse_module, validate_source};

fuzz_target!(|source: &str| {
    let _ = tokenize(source);
    let parsed = parse_module(source);
    let report = validate_source(source);
    if parsed.is_err() {
        assert!(!report.ok);
    }
});
