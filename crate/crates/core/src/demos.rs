//! Bundled demonstration programs and the protection modes they are
//! compared under.

use std::fmt::Write;

use crate::ir::{parse_program, Program};
use crate::passes::{apply_pipeline, pass_lower_ra, PassConfig, PassError};
use crate::semantics::{int_args, run, Event, ExecStats, Outcome};

pub const CANARY: &str = include_str!("../demos/canary.rtl");
pub const PTRCMP: &str = include_str!("../demos/ptrcmp.rtl");
pub const FAC: &str = include_str!("../demos/fac.rtl");
pub const LAST: &str = include_str!("../demos/last.rtl");
pub const QUICKSORT: &str = include_str!("../demos/quicksort.rtl");

/// Every bundled source with its file name.
pub const SOURCES: [(&str, &str); 5] = [
    ("canary.rtl", CANARY),
    ("ptrcmp.rtl", PTRCMP),
    ("fac.rtl", FAC),
    ("last.rtl", LAST),
    ("quicksort.rtl", QUICKSORT),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub label: &'static str,
    pub cfg: PassConfig,
    /// Store return addresses in the frame without signing them. No flag
    /// selects this; it shows what signing protects against.
    pub lower_only: bool,
}

impl Mode {
    pub const fn flags(label: &'static str, cfg: PassConfig) -> Mode {
        Mode {
            label,
            cfg,
            lower_only: false,
        }
    }

    pub fn build(&self, p: &Program) -> Result<Program, PassError> {
        let (out, _) = apply_pipeline(p, &self.cfg)?;
        Ok(if self.lower_only {
            pass_lower_ra(&out).0
        } else {
            out
        })
    }
}

const OFF: PassConfig = PassConfig {
    ftailcalls: false,
    ftailrec: false,
    fstack_protector: false,
    fstack_protector_all: false,
    fretaddr_pac: false,
    fretaa: false,
};

pub const UNPROTECTED: Mode = Mode::flags("unprotected", OFF);
pub const STACK_PROTECTOR: Mode = Mode::flags(
    "-fstack-protector",
    PassConfig {
        fstack_protector: true,
        ..OFF
    },
);
pub const LOWERED: Mode = Mode {
    label: "ra in frame",
    cfg: OFF,
    lower_only: true,
};
pub const LOWERED_PROTECTED: Mode = Mode {
    label: "ra in frame, -fstack-protector",
    cfg: PassConfig {
        fstack_protector: true,
        ..OFF
    },
    lower_only: true,
};
pub const PAC: Mode = Mode::flags(
    "-fretaddr-pac",
    PassConfig {
        fretaddr_pac: true,
        ..OFF
    },
);
pub const PAC_RETAA: Mode = Mode::flags(
    "-fretaddr-pac -fretaa",
    PassConfig {
        fretaddr_pac: true,
        fretaa: true,
        ..OFF
    },
);
pub const TAILCALLS: Mode = Mode::flags(
    "-ftailcalls",
    PassConfig {
        ftailcalls: true,
        ..OFF
    },
);
pub const TAILREC: Mode = Mode::flags(
    "-ftailcalls -ftailrec",
    PassConfig {
        ftailcalls: true,
        ftailrec: true,
        ..OFF
    },
);

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: &'static str,
    pub file: &'static str,
    pub source: &'static str,
    pub inputs: Vec<Vec<i64>>,
    pub modes: Vec<Mode>,
}

impl Scenario {
    pub fn program(&self) -> Program {
        parse_program(self.source).expect("bundled program parses")
    }
}

pub fn scenarios() -> Vec<Scenario> {
    let frames = vec![UNPROTECTED, TAILCALLS, TAILREC];
    vec![
        Scenario {
            name: "canary-attack",
            file: "canary.rtl",
            source: CANARY,
            inputs: vec![vec![9], vec![12]],
            modes: vec![UNPROTECTED, STACK_PROTECTOR],
        },
        Scenario {
            name: "hijack",
            file: "canary.rtl",
            source: CANARY,
            inputs: vec![vec![9], vec![12]],
            modes: vec![UNPROTECTED, LOWERED, LOWERED_PROTECTED],
        },
        Scenario {
            name: "pac-attack",
            file: "canary.rtl",
            source: CANARY,
            inputs: vec![vec![9], vec![12]],
            modes: vec![LOWERED, PAC, PAC_RETAA],
        },
        Scenario {
            name: "ptrcmp",
            file: "ptrcmp.rtl",
            source: PTRCMP,
            inputs: vec![vec![]],
            modes: vec![UNPROTECTED, STACK_PROTECTOR],
        },
        Scenario {
            name: "fac",
            file: "fac.rtl",
            source: FAC,
            inputs: vec![vec![1], vec![10], vec![100]],
            modes: frames.clone(),
        },
        Scenario {
            name: "last",
            file: "last.rtl",
            source: LAST,
            inputs: vec![vec![10]],
            modes: frames.clone(),
        },
        Scenario {
            name: "quicksort",
            file: "quicksort.rtl",
            source: QUICKSORT,
            inputs: vec![vec![1_000_000_001, 24]],
            modes: frames,
        },
    ]
}

pub fn scenario(name: &str) -> Option<Scenario> {
    scenarios().into_iter().find(|s| s.name == name)
}

#[derive(Clone, Debug)]
pub struct Row {
    pub mode: &'static str,
    pub args: Vec<i64>,
    pub outcome: Outcome,
    pub trace: Vec<Event>,
    pub stats: ExecStats,
}

pub fn run_scenario(s: &Scenario, fuel: u64, seed: u64) -> Result<Vec<Row>, PassError> {
    let p = s.program();
    let mut rows = Vec::new();
    for mode in &s.modes {
        let q = mode.build(&p)?;
        for args in &s.inputs {
            let r = run(&q, int_args(args), fuel, seed);
            rows.push(Row {
                mode: mode.label,
                args: args.clone(),
                outcome: r.outcome,
                trace: r.trace,
                stats: r.stats,
            });
        }
    }
    Ok(rows)
}

fn short_trace(t: &[Event]) -> String {
    let items: Vec<String> = t
        .iter()
        .map(|e| match e {
            Event::ExtCall(_, args) if args.len() == 1 => args[0].to_string(),
            Event::Abort(_) => "abort".to_string(),
            e => e.to_string(),
        })
        .collect();
    if items.len() > 8 {
        format!("[{} ... ({} events)]", items[..8].join(" "), items.len())
    } else {
        format!("[{}]", items.join(" "))
    }
}

pub fn render_table(rows: &[Row]) -> String {
    let mw = rows.iter().map(|r| r.mode.len()).max().unwrap_or(4).max(4);
    let mut out = String::new();
    writeln!(
        out,
        "{:<mw$}  {:<16}  {:>8}  {:>6}  {:>4}  {:<28}  trace",
        "mode", "args", "steps", "allocs", "live", "outcome"
    )
    .unwrap();
    for r in rows {
        let args: Vec<String> = r.args.iter().map(i64::to_string).collect();
        let outcome = r.outcome.to_string();
        let outcome: String = outcome.chars().take(28).collect();
        writeln!(
            out,
            "{:<mw$}  {:<16}  {:>8}  {:>6}  {:>4}  {:<28}  {}",
            r.mode,
            args.join(" "),
            r.stats.steps,
            r.stats.allocs,
            r.stats.max_live_frames,
            outcome,
            short_trace(&r.trace)
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::check_wellformed;
    use crate::memory::Value;
    use crate::semantics::{StuckReason, DEFAULT_FUEL};

    fn row<'a>(rows: &'a [Row], mode: &str, args: &[i64]) -> &'a Row {
        rows.iter()
            .find(|r| r.mode == mode && r.args == args)
            .unwrap()
    }

    #[test]
    fn bundled_sources_are_wellformed() {
        for (name, src) in SOURCES {
            let p = parse_program(src).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(check_wellformed(&p).is_empty(), "{name}");
        }
    }

    #[test]
    fn hijack_reaches_quack_only_without_signing() {
        let rows = run_scenario(&scenario("hijack").unwrap(), DEFAULT_FUEL, 0).unwrap();
        let quack = row(&rows, LOWERED.label, &[12]);
        assert_eq!(
            quack.trace,
            vec![
                Event::ExtCall("print_int".into(), vec![1]),
                Event::ExtCall("print_int".into(), vec![666])
            ]
        );
        assert!(matches!(
            row(&rows, UNPROTECTED.label, &[12]).outcome,
            Outcome::Stuck(_)
        ));
        assert!(matches!(
            row(&rows, LOWERED_PROTECTED.label, &[12]).outcome,
            Outcome::Aborted(_)
        ));
        let rows = run_scenario(&scenario("pac-attack").unwrap(), DEFAULT_FUEL, 0).unwrap();
        for m in [PAC, PAC_RETAA] {
            let r = row(&rows, m.label, &[12]);
            assert!(
                matches!(&r.outcome, Outcome::Stuck(s) if matches!(s.reason, StuckReason::BadReturnAddress(_)))
            );
            assert_eq!(r.trace.len(), 1);
        }
    }

    #[test]
    fn quicksort_sorts_by_the_twisted_order() {
        let rows = run_scenario(&scenario("quicksort").unwrap(), DEFAULT_FUEL, 0).unwrap();
        let x: i64 = 1_000_000_001;
        let mut want: Vec<i64> = (0..24).collect();
        want.sort_by_key(|v| x.wrapping_mul(*v));
        for r in rows {
            let got: Vec<i64> = r
                .trace
                .iter()
                .map(|e| match e {
                    Event::ExtCall(_, a) => a[0],
                    e => panic!("{e}"),
                })
                .collect();
            assert_eq!(got, want, "{}", r.mode);
            assert_eq!(r.outcome, Outcome::Final(Value::Int(24)));
        }
    }

    #[test]
    fn last_walks_to_the_end() {
        let rows = run_scenario(&scenario("last").unwrap(), DEFAULT_FUEL, 0).unwrap();
        for r in &rows {
            assert_eq!(r.outcome, Outcome::Final(Value::Int(16)), "{}", r.mode);
        }
        assert!(row(&rows, TAILREC.label, &[10]).stats.max_live_frames <= 2);
        assert!(row(&rows, UNPROTECTED.label, &[10]).stats.max_live_frames >= 11);
    }

    #[test]
    fn table_has_a_row_per_mode_and_input() {
        let s = scenario("canary-attack").unwrap();
        let rows = run_scenario(&s, DEFAULT_FUEL, 0).unwrap();
        assert_eq!(
            render_table(&rows).lines().count(),
            1 + s.modes.len() * s.inputs.len()
        );
    }
}
