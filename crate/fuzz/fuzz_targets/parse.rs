#![no_main]

use blocklab::ir::{
    check_wellformed, parse_program, parse_program_with, print_program, ParseOptions,
};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_program(text);
    if let Ok(p) = parse_program_with(text, ParseOptions::transformed()) {
        let printed = print_program(&p);
        let again = parse_program_with(&printed, ParseOptions::transformed())
            .expect("printed program parses");
        assert_eq!(again, p);
        let _ = check_wellformed(&p);
    }
});
