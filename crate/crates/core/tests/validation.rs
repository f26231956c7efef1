use blocklab::corpus::{hunt_mutant, run_corpus, CorpusConfig};
use blocklab::demos::{CANARY, FAC, LAST};
use blocklab::ir::parse_program;
use blocklab::passes::mutants::Mutant;
use blocklab::passes::{stage_for, Pass, PassConfig};
use blocklab::semantics::{int_args, DEFAULT_FUEL};
use blocklab::validate::{validate_stage, VerdictReason};

fn protect_all() -> PassConfig {
    PassConfig {
        fstack_protector_all: true,
        ..PassConfig::all()
    }
}

#[test]
fn every_pass_is_accepted_on_the_demos() {
    let cfg = protect_all();
    for (src, inputs) in [(FAC, [0, 4, 10]), (LAST, [0, 3, 10]), (CANARY, [0, 3, 9])] {
        let p = parse_program(src).unwrap();
        for pass in Pass::ALL {
            let stage = stage_for(pass, &p, &cfg).unwrap();
            for a in inputs {
                let v = validate_stage(&stage, &cfg, &int_args(&[a]), DEFAULT_FUEL, 2);
                assert!(v.accepted, "{pass} on input {a}:\n{}", v.report());
                assert_eq!(v.reason, VerdictReason::Accepted);
            }
        }
    }
}

#[test]
fn a_small_corpus_catches_every_mutant() {
    let cc = CorpusConfig {
        count: 24,
        ..CorpusConfig::default()
    };
    let s = run_corpus(&cc);
    assert!(s.all_accepted(), "{}", s.render());
    for m in Mutant::ALL {
        assert!(hunt_mutant(&cc, m).is_some(), "{m} slipped through");
    }
}

#[test]
fn counterexamples_name_a_step() {
    let p = parse_program(CANARY).unwrap();
    let cfg = protect_all();
    let stage = Mutant::SkipEpilogue.stage(&p, &cfg).unwrap();
    let v = validate_stage(&stage, &cfg, &int_args(&[3]), DEFAULT_FUEL, 2);
    assert!(!v.accepted);
    let c = v
        .counterexample
        .as_ref()
        .expect("rejections carry a counterexample");
    assert!(c.step > 0);
    assert!(v.report().contains(&v.reason.to_string()));
}
