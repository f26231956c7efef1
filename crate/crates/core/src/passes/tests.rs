use super::*;
use crate::ir::{check_wellformed, parse_program, print_program, Instr, Operation};
use crate::memory::Value;
use crate::semantics::{int_args, run, Outcome, DEFAULT_FUEL};

const FAC: &str = "main fac
function fac(x) stacksize 0 { 1: one = const 1 goto 2; 2: r = call fac_rec(x, one) goto 3; 3: return r }
function fac_rec(x, acc) stacksize 0 {
  1: one = const 1 goto 2; 2: if ge x, one then 3 else 7; 3: x1 = sub x, one goto 4;
  4: a1 = mul x, acc goto 5; 5: r = call fac_rec(x1, a1) goto 6; 6: return r; 7: return acc }";

const FRAMED: &str = "function main(a) stacksize 0 { 1: r = call g(a) goto 2; 2: z = extcall print_int(r) goto 3; 3: return r }
function g(a) stacksize 16 {
  1: s = getsp goto 2; 2: store [s, 8], a goto 3; 3: x = load [s, 8] goto 4; 4: if lt x, a then 5 else 6;
  5: return a; 6: y = add x, x goto 7; 7: return y }";

fn fac() -> Program {
    parse_program(FAC).unwrap()
}

fn self_tailcalls(f: &Function) -> usize {
    f.code
        .values()
        .filter(|i| matches!(i, Instr::Tailcall { callee, .. } if *callee == f.name))
        .count()
}

fn final_of(p: &Program, args: &[i64]) -> Outcome {
    run(p, int_args(args), DEFAULT_FUEL, 11).outcome
}

#[test]
fn refine_div_replaces_only_strict_division() {
    let p = parse_program(
        "function main(a, b) stacksize 0 { 1: q = div_strict a, b goto 2; 2: w = div_total a, b goto 3; 3: return q }",
    )
    .unwrap();
    let (out, counts) = pass_refine_div(&p);
    assert_eq!(counts, vec![("main".to_string(), 1)]);
    assert!(print_program(&out).contains("q = div_total a, b"));
    let (same, _) = pass_refine_div(&fac());
    assert_eq!(same, fac());
}

#[test]
fn tailcall_in_frameless_function() {
    let p = fac();
    let (f, n) = pass_tailcall(&p.functions["fac_rec"], &p);
    assert_eq!(n, 1);
    assert_eq!(self_tailcalls(&f), 1);
    let (g, n) = pass_tailcall(&p.functions["fac"], &p);
    assert_eq!(n, 1);
    assert!(matches!(g.code[&Node(2)], Instr::Tailcall { .. }));
}

#[test]
fn tailcall_needs_empty_frame_and_tail_position() {
    let p = parse_program(&FAC.replace(
        "fac_rec(x, acc) stacksize 0",
        "fac_rec(x, acc) stacksize 16",
    ))
    .unwrap();
    let (f, n) = pass_tailcall(&p.functions["fac_rec"], &p);
    assert_eq!((n, &f), (0, &p.functions["fac_rec"]));

    let p = parse_program(
        "function main(a) stacksize 0 { 1: r = call g(a) goto 2; 2: s = add r, a goto 3; 3: return s }
         function g(a) stacksize 0 { 1: return a }",
    )
    .unwrap();
    assert_eq!(pass_tailcall(&p.functions["main"], &p).1, 0);
}

#[test]
fn tailrec_turns_self_tail_calls_into_a_loop() {
    let (p, _) = per_function(&fac(), |f| pass_tailcall(f, &fac()));
    let f = &p.functions["fac_rec"];
    let (g, n) = pass_tailrec(f);
    assert_eq!(n, 1);
    assert_eq!(self_tailcalls(&g), 0);
    // Entry is reachable from the rewritten site.
    let preds = g.predecessors();
    assert!(preds.get(&g.entry).is_some_and(|ps| !ps.is_empty()));
    // The copy chain starts at the old call node and has 2 * arity moves.
    let mut at = Node(5);
    let mut moves = 0;
    while at != g.entry {
        match &g.code[&at] {
            Instr::Op {
                op: Operation::Move,
                succ,
                ..
            } => {
                moves += 1;
                at = *succ;
            }
            i => panic!("unexpected {i}"),
        }
    }
    assert_eq!(moves, 4);
    // Calls to other functions stay.
    let (h, n) = pass_tailrec(&p.functions["fac"]);
    assert_eq!((n, self_tailcalls(&h)), (0, 0));
    assert!(matches!(h.code[&Node(2)], Instr::Tailcall { .. }));
}

#[test]
fn tailrec_keeps_results() {
    let cfg = PassConfig {
        ftailcalls: true,
        ftailrec: true,
        ..PassConfig::default()
    };
    let (p, report) = apply_pipeline(&fac(), &cfg).unwrap();
    assert!(check_wellformed(&p).is_empty());
    assert_eq!(final_of(&p, &[10]), Outcome::Final(Value::Int(3628800)));
    assert!(report
        .rewrites
        .contains(&("fac_rec".to_string(), Pass::Tailrec, 1)));
    let r = run(&p, int_args(&[100]), DEFAULT_FUEL, 0);
    assert!(r.stats.max_live_frames <= 2);
}

#[test]
fn swapped_copies_compute_garbage() {
    let (p, _) = per_function(&fac(), |f| pass_tailcall(f, &fac()));
    let (bad, _) = per_function(&p, |f| simple::tailrec_impl(f, true));
    assert_ne!(final_of(&bad, &[5]), Outcome::Final(Value::Int(120)));
}

#[test]
fn canary_layout_and_behaviour() {
    let p = parse_program(FRAMED).unwrap();
    let cfg = PassConfig {
        fstack_protector: true,
        ..PassConfig::default()
    };
    let (out, spec, counts) = pass_canary(&p, &cfg);
    assert!(check_wellformed(&out).is_empty());
    assert_eq!(counts, vec![("g".to_string(), 2)]);
    assert_eq!(spec, crate::relations::CanarySpec::derive(&p, false));
    assert_eq!(out.functions["g"].stacksize, 24);
    assert_eq!(out.functions["main"], p.functions["main"]);
    assert_eq!(final_of(&out, &[3]), final_of(&p, &[3]));

    let all = PassConfig {
        fstack_protector_all: true,
        ..PassConfig::default()
    };
    let (out, spec, _) = pass_canary(&p, &all);
    assert_eq!(out.functions["main"].stacksize, 8);
    assert!(spec.get("main").is_some());
    assert_eq!(final_of(&out, &[3]), final_of(&p, &[3]));
}

#[test]
fn smashed_canary_aborts() {
    let src = FRAMED
        .replace("2: store [s, 8], a goto 3", "2: store [s, 16], a goto 3")
        .replace("3: x = load [s, 8]", "3: x = load [s, 16]");
    let p = parse_program(&src).unwrap();
    assert!(matches!(final_of(&p, &[3]), Outcome::Stuck(_)));
    let cfg = PassConfig {
        fstack_protector: true,
        ..PassConfig::default()
    };
    let (out, _, _) = pass_canary(&p, &cfg);
    assert!(matches!(final_of(&out, &[3]), Outcome::Aborted(_)));
}

#[test]
fn lowering_and_signing() {
    let p = parse_program(FRAMED).unwrap();
    let (low, info) = pass_lower_ra(&p);
    assert!(check_wellformed(&low).is_empty());
    // g is a leaf and stays abstract.
    assert_eq!(low.functions["g"], p.functions["g"]);
    let main = &info.functions["main"];
    assert_eq!(main.offset, 0);
    assert_eq!(main.returns.len(), 1);
    assert_eq!(final_of(&low, &[4]), final_of(&p, &[4]));

    let signed = pass_pac(&low, &info).unwrap();
    assert!(check_wellformed(&signed).is_empty());
    assert_eq!(final_of(&signed, &[4]), final_of(&p, &[4]));
    assert_eq!(
        pass_pac(&p, &LoweringInfo::default()),
        Err(PassError::NotLowered("main".into()))
    );

    let f = &signed.functions["main"];
    let (fused, n) = peephole_retaa(f);
    assert_eq!(n, 1);
    assert!(fused
        .code
        .values()
        .any(|i| matches!(i, Instr::RetAa { .. })));
    assert!(!fused
        .code
        .values()
        .any(|i| matches!(i, Instr::RetVia { .. })));
    let mut q = signed.clone();
    q.add(fused);
    assert!(check_wellformed(&q).is_empty());
    assert_eq!(final_of(&q, &[4]), final_of(&p, &[4]));
}

#[test]
fn peephole_respects_liveness() {
    let body = "function main(a) stacksize 8 {
      1: sp = getsp goto 2; 2: ra = getra goto 3; 3: ra = pac_encode ra, sp goto 4; 4: store [sp, 0], ra goto 5;
      5: s = getsp goto 6; 6: rr = load [s, 0] goto 7; 7: rr = pac_decode rr, s goto 8; 8: retvia rr, a";
    let printed = format!("{body}; 9: z = extcall print_int(rr) goto 8 }}");
    let p = parse_program(&printed).unwrap();
    assert_eq!(peephole_retaa(&p.functions["main"]).1, 0);
    let ok = parse_program(&format!("{body} }}")).unwrap();
    assert_eq!(peephole_retaa(&ok.functions["main"]).1, 1);
    let wrong =
        format!("{body} }}").replace("7: rr = pac_decode rr, s", "7: rr = pac_decode rr, a");
    assert_eq!(
        peephole_retaa(&parse_program(&wrong).unwrap().functions["main"]).1,
        0
    );
}

#[test]
fn pipeline_all_off_only_refines_division() {
    let (p, report) = apply_pipeline(&fac(), &PassConfig::default()).unwrap();
    assert_eq!(p, fac());
    assert!(report.rewrites.is_empty());
}

#[test]
fn canary_and_return_slots_are_disjoint() {
    let p = parse_program(
        "function main(a) stacksize 24 { 1: r = call main2(a) goto 2; 2: return r }
         function main2(a) stacksize 0 { 1: return a }",
    )
    .unwrap();
    let cfg = PassConfig {
        fstack_protector: true,
        fretaddr_pac: true,
        ..PassConfig::default()
    };
    let (out, report) = apply_pipeline(&p, &cfg).unwrap();
    let canary = report.canary.unwrap().get("main").copied().unwrap();
    let ra = report.lowering.unwrap().functions["main"].offset;
    assert_eq!(canary.canary_offset, 24);
    assert_eq!(ra, 32);
    assert_eq!(out.functions["main"].stacksize, 40);
    assert_eq!(final_of(&out, &[9]), Outcome::Final(Value::Int(9)));
}

#[test]
fn report_formats() {
    let (_, report) = apply_pipeline(&fac(), &PassConfig::all()).unwrap();
    let kv = report.to_kv();
    assert!(kv.lines().any(|l| l == "fac_rec tailrec 1"));
    assert!(report.to_table().starts_with("function"));
}

#[test]
fn passes_preserve_wellformedness_and_round_trip() {
    let cfg = PassConfig {
        fstack_protector_all: true,
        ..PassConfig::all()
    };
    for src in [FAC, FRAMED] {
        let p = parse_program(src).unwrap();
        for s in pipeline_stages(&p, &cfg).unwrap() {
            assert!(check_wellformed(&s.output).is_empty(), "{}", s.pass);
            let text = print_program(&s.output);
            let back = crate::ir::parse_program_with(&text, crate::ir::ParseOptions::transformed())
                .unwrap();
            assert_eq!(back, s.output);
        }
    }
}

#[test]
fn pass_names_round_trip() {
    for p in Pass::ALL {
        assert_eq!(Pass::from_name(p.name()), Some(p));
    }
    assert_eq!(Pass::from_name("inline"), None);
}
