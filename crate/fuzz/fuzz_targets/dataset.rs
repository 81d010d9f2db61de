#![no_main]

use libfuzzer_sys::fuzz_target;
use verinduce::dataset::{dump_dev_set, parse_dev_set};

fuzz_target!(|text: &str| {
    if let Ok(set) = parse_dev_set(text, "task") {
        // a dump must parse back to the same examples
        let again = parse_dev_set(&dump_dev_set(&set), "task").expect("dump reparses");
        assert_eq!(again.examples, set.examples);
    }
});
