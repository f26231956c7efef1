#![no_main]

use blocklab::ir::{check_wellformed, parse_program};
use blocklab::semantics::{int_args, run};
use libfuzzer_sys::fuzz_target;

// First 8 bytes: main's argument. The rest: program text.
fuzz_target!(|data: &[u8]| {
    if data.len() < 8 {
        return;
    }
    let arg = i64::from_le_bytes(data[..8].try_into().unwrap());
    let Ok(text) = std::str::from_utf8(&data[8..]) else {
        return;
    };
    let Ok(p) = parse_program(text) else {
        return;
    };
    if !check_wellformed(&p).is_empty() {
        return;
    }
    let _ = run(&p, int_args(&[arg]), 20_000, 0);
});
