#![no_main]

use libfuzzer_sys::fuzz_target;
use verinduce::llm::{parse_replay, Provider, ReplayProvider};

fuzz_target!(|text: &str| {
    if let Ok(records) = parse_replay(text) {
        let provider = ReplayProvider::new(records.clone());
        for r in &records {
            provider.complete(&r.request).expect("every record is served");
        }
    }
});
