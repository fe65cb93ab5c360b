//! Writes the bench checkpoint and the bundled corpora into a directory, so
//! the command-line tool has something to run against.
//!
//! Usage: `cargo run -p actlab --example bench_fixture -- [DIR]` (default
//! `bench`). The directory ends up holding `model.bin`, `wikitext.txt`, and
//! `c4.jsonl`.

use std::path::PathBuf;

use actlab::fixtures::bench::write_fixture_tree;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "bench".to_string());
    match write_fixture_tree(&PathBuf::from(&dir)) {
        Ok(model) => println!("wrote {}", model.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
