//! Validation over a corpus of generated programs.

use std::collections::BTreeMap;
use std::fmt::Write;

use rayon::prelude::*;

use crate::gen::{gen_random_program, DEFAULT_BUDGET};
use crate::ir::{check_wellformed, parse_program_with, print_program, ParseOptions, Program};
use crate::passes::mutants::Mutant;
use crate::passes::{pipeline_stages, Pass, PassConfig};
use crate::semantics::{int_args, run, DEFAULT_FUEL};
use crate::validate::{validate_stage, Verdict, VerdictReason};

#[derive(Clone, Debug)]
pub struct CorpusConfig {
    pub first_seed: u64,
    pub count: u64,
    pub budget: usize,
    /// Each program runs once per entry, as the argument of `main`.
    pub inputs: Vec<i64>,
    pub fuel: u64,
    pub canary_seed: u64,
    pub passes: PassConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            first_seed: 0,
            count: 500,
            budget: DEFAULT_BUDGET,
            inputs: vec![0, 3, 7],
            fuel: DEFAULT_FUEL / 10,
            canary_seed: 1,
            passes: PassConfig {
                fstack_protector_all: true,
                ..PassConfig::all()
            },
        }
    }
}

impl CorpusConfig {
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        self.first_seed..self.first_seed + self.count
    }

    pub fn program(&self, seed: u64) -> Program {
        gen_random_program(seed, self.budget)
    }
}

#[derive(Clone, Debug)]
pub struct StageResult {
    pub pass: Pass,
    pub input: i64,
    pub rewrites: usize,
    pub verdict: Verdict,
}

#[derive(Clone, Debug)]
pub struct ProgramReport {
    pub seed: u64,
    /// Outcome label of the untransformed program, per input.
    pub outcomes: Vec<&'static str>,
    pub stages: Vec<StageResult>,
    /// Well-formedness or round-trip failures, and pass errors.
    pub problems: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct CorpusSummary {
    pub programs: Vec<ProgramReport>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassTally {
    pub accepted: usize,
    pub rejected: usize,
}

impl CorpusSummary {
    pub fn per_pass(&self) -> BTreeMap<Pass, PassTally> {
        let mut out: BTreeMap<Pass, PassTally> = BTreeMap::new();
        for s in self.programs.iter().flat_map(|p| &p.stages) {
            let t = out.entry(s.pass).or_default();
            if s.verdict.accepted {
                t.accepted += 1;
            } else {
                t.rejected += 1;
            }
        }
        out
    }

    pub fn outcomes(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for o in self.programs.iter().flat_map(|p| &p.outcomes) {
            *out.entry(*o).or_default() += 1;
        }
        out
    }

    pub fn problems(&self) -> impl Iterator<Item = (u64, &String)> {
        self.programs
            .iter()
            .flat_map(|p| p.problems.iter().map(move |m| (p.seed, m)))
    }

    pub fn rejections(&self) -> impl Iterator<Item = (u64, &StageResult)> {
        self.programs.iter().flat_map(|p| {
            p.stages
                .iter()
                .filter(|s| !s.verdict.accepted)
                .map(move |s| (p.seed, s))
        })
    }

    pub fn all_accepted(&self) -> bool {
        self.rejections().next().is_none() && self.problems().next().is_none()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "programs {}", self.programs.len()).unwrap();
        for (o, n) in self.outcomes() {
            writeln!(out, "original {o}: {n}").unwrap();
        }
        writeln!(out, "{:<12} {:>9} {:>9}", "pass", "accepted", "rejected").unwrap();
        for (p, t) in self.per_pass() {
            writeln!(out, "{:<12} {:>9} {:>9}", p.name(), t.accepted, t.rejected).unwrap();
        }
        for (seed, s) in self.rejections().take(10) {
            writeln!(
                out,
                "seed {seed} {} input {}: {}",
                s.pass, s.input, s.verdict.reason
            )
            .unwrap();
        }
        for (seed, m) in self.problems().take(10) {
            writeln!(out, "seed {seed}: {m}").unwrap();
        }
        out
    }
}

fn round_trips(p: &Program) -> bool {
    parse_program_with(&print_program(p), ParseOptions::transformed()).as_ref() == Ok(p)
}

/// Generates, transforms and validates one program. Each pass is checked
/// on the output of the previous one.
pub fn check_program(cc: &CorpusConfig, seed: u64) -> ProgramReport {
    let p = cc.program(seed);
    let mut report = ProgramReport {
        seed,
        outcomes: Vec::new(),
        stages: Vec::new(),
        problems: Vec::new(),
    };
    if !check_wellformed(&p).is_empty() {
        report
            .problems
            .push("generated program is not well-formed".into());
    }
    if !round_trips(&p) {
        report
            .problems
            .push("generated program does not round-trip".into());
    }
    for &a in &cc.inputs {
        report.outcomes.push(
            run(&p, int_args(&[a]), cc.fuel, cc.canary_seed)
                .outcome
                .label(),
        );
    }
    let stages = match pipeline_stages(&p, &cc.passes) {
        Ok(s) => s,
        Err(e) => {
            report.problems.push(format!("pipeline: {e}"));
            return report;
        }
    };
    for stage in &stages {
        let diags = check_wellformed(&stage.output);
        if let Some(d) = diags.first() {
            report
                .problems
                .push(format!("{} broke well-formedness: {d}", stage.pass));
        }
        if !round_trips(&stage.output) {
            report
                .problems
                .push(format!("{} output does not round-trip", stage.pass));
        }
        let rewrites = stage.counts.iter().map(|(_, n)| n).sum();
        for &a in &cc.inputs {
            let verdict =
                validate_stage(stage, &cc.passes, &int_args(&[a]), cc.fuel, cc.canary_seed);
            report.stages.push(StageResult {
                pass: stage.pass,
                input: a,
                rewrites,
                verdict,
            });
        }
    }
    report
}

/// Runs the whole corpus in parallel; reports come back sorted by seed.
pub fn run_corpus(cc: &CorpusConfig) -> CorpusSummary {
    let seeds: Vec<u64> = cc.seeds().collect();
    let programs = seeds.par_iter().map(|&s| check_program(cc, s)).collect();
    CorpusSummary { programs }
}

/// First corpus input on which `mutant` is rejected, if any.
#[derive(Clone, Debug)]
pub struct MutantHit {
    pub seed: u64,
    pub input: i64,
    pub reason: VerdictReason,
}

pub fn hunt_mutant(cc: &CorpusConfig, mutant: Mutant) -> Option<MutantHit> {
    let seeds: Vec<u64> = cc.seeds().collect();
    seeds
        .par_iter()
        .filter_map(|&seed| {
            let stage = mutant.stage(&cc.program(seed), &cc.passes).ok()?;
            if stage.output == stage.input {
                return None;
            }
            cc.inputs.iter().find_map(|&a| {
                let v =
                    validate_stage(&stage, &cc.passes, &int_args(&[a]), cc.fuel, cc.canary_seed);
                (!v.accepted).then_some(MutantHit {
                    seed,
                    input: a,
                    reason: v.reason,
                })
            })
        })
        .min_by_key(|h| h.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_corpus_is_accepted() {
        let cc = CorpusConfig {
            count: 40,
            ..CorpusConfig::default()
        };
        let s = run_corpus(&cc);
        assert!(s.all_accepted(), "{}", s.render());
        let seeds: Vec<u64> = s.programs.iter().map(|p| p.seed).collect();
        assert_eq!(seeds, (0..40).collect::<Vec<_>>());
    }
}
