#![no_main]

use libfuzzer_sys::fuzz_target;
use verinduce::gateway::protocol::{parse_hello, parse_reply, parse_request};

fuzz_target!(|line: &str| {
    if let Ok(req) = parse_request(line) {
        assert_eq!(parse_request(&req.to_line()).expect("request reparses"), req);
    }
    if let Ok(reply) = parse_reply(line) {
        let _ = parse_reply(&reply.to_line()).expect("reply reparses");
    }
    let _ = parse_hello(line);
});
