#![no_main]

use blocklab::ir::{check_wellformed, parse_program};
use blocklab::passes::{pipeline_stages, PassConfig};
use blocklab::semantics::int_args;
use blocklab::validate::validate_stage;
use libfuzzer_sys::fuzz_target;

// First byte: pass flags. Second byte: main's argument. The rest: program text.
fuzz_target!(|data: &[u8]| {
    let [flags, arg, rest @ ..] = data else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let Ok(p) = parse_program(text) else {
        return;
    };
    if !check_wellformed(&p).is_empty() {
        return;
    }
    let bit = |i: u8| flags & (1 << i) != 0;
    let cfg = PassConfig {
        ftailcalls: bit(0),
        ftailrec: bit(1),
        fstack_protector: bit(2),
        fstack_protector_all: bit(3),
        fretaddr_pac: bit(4),
        fretaa: bit(5),
    };
    let Ok(stages) = pipeline_stages(&p, &cfg) else {
        return;
    };
    let args = int_args(&[*arg as i8 as i64]);
    for s in &stages {
        assert!(
            check_wellformed(&s.output).is_empty(),
            "{} broke well-formedness",
            s.pass
        );
        let v = validate_stage(s, &cfg, &args, 20_000, 0);
        assert!(v.accepted, "{}", v.report());
    }
});
