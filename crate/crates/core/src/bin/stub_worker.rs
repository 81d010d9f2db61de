//! Stub verifier worker: serves the NDJSON protocol on stdin/stdout.

use std::io::{self, BufReader};

use verinduce::stub::{serve, WorkerOptions};

fn main() {
    let opts = WorkerOptions::from_env();
    // deep verifier recursion needs more than the default main-thread stack
    let worker = std::thread::Builder::new()
        .stack_size(256 << 20)
        .spawn(move || {
            let stdin = io::stdin();
            let stdout = io::stdout();
            serve(BufReader::new(stdin.lock()), stdout.lock(), &opts)
        })
        .expect("spawn worker thread");
    match worker.join() {
        Ok(Ok(())) => {}
        Ok(Err(e)) => {
            eprintln!("stub worker: {e}");
            std::process::exit(1);
        }
        Err(_) => std::process::exit(101),
    }
}
