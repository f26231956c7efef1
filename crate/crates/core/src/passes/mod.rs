//! Program transformations.
//!
//! Every pass keeps original node ids at the program point they had before
//! and puts inserted code at fresh ids above the function's maximum. Pass
//! temporaries use `$`-prefixed register names, which source files cannot
//! contain.

mod canary;
mod lower;
pub mod mutants;
mod peephole;
mod simple;

use std::collections::BTreeSet;
use std::fmt::{self, Write};

use thiserror::Error;

use crate::ir::{Function, Node, Program, Reg};
use crate::relations::CanarySpec;

pub use canary::pass_canary;
pub use lower::{pass_lower_ra, pass_pac, LoweredFunction, LoweringInfo, ReturnSite};
pub use peephole::{peephole_retaa, symexec_equiv};
pub use simple::{pass_refine_div, pass_tailcall, pass_tailrec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassConfig {
    pub ftailcalls: bool,
    pub ftailrec: bool,
    pub fstack_protector: bool,
    pub fstack_protector_all: bool,
    pub fretaddr_pac: bool,
    pub fretaa: bool,
}

impl PassConfig {
    pub fn all() -> PassConfig {
        PassConfig {
            ftailcalls: true,
            ftailrec: true,
            fstack_protector: true,
            fstack_protector_all: false,
            fretaddr_pac: true,
            fretaa: true,
        }
    }

    /// Protection is on when either protector flag is set.
    pub fn protector(&self) -> bool {
        self.fstack_protector || self.fstack_protector_all
    }

    /// Passes that run under this configuration, in pipeline order.
    pub fn passes(&self) -> Vec<Pass> {
        let mut out = vec![Pass::RefineDiv];
        if self.ftailcalls {
            out.push(Pass::Tailcall);
        }
        if self.ftailrec {
            out.push(Pass::Tailrec);
        }
        if self.protector() {
            out.push(Pass::Canary);
        }
        if self.fretaddr_pac {
            out.push(Pass::LowerRa);
            out.push(Pass::Pac);
        }
        if self.fretaa {
            out.push(Pass::Peephole);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pass {
    RefineDiv,
    Tailcall,
    Tailrec,
    Canary,
    LowerRa,
    Pac,
    Peephole,
}

impl Pass {
    pub const ALL: [Pass; 7] = [
        Pass::RefineDiv,
        Pass::Tailcall,
        Pass::Tailrec,
        Pass::Canary,
        Pass::LowerRa,
        Pass::Pac,
        Pass::Peephole,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pass::RefineDiv => "refine_div",
            Pass::Tailcall => "tailcall",
            Pass::Tailrec => "tailrec",
            Pass::Canary => "canary",
            Pass::LowerRa => "lower_ra",
            Pass::Pac => "pac",
            Pass::Peephole => "peephole",
        }
    }

    pub fn from_name(s: &str) -> Option<Pass> {
        Pass::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Passes that must run first for this one to have anything to do.
    pub fn prerequisites(self) -> &'static [Pass] {
        match self {
            Pass::Tailrec => &[Pass::Tailcall],
            Pass::Pac => &[Pass::LowerRa],
            Pass::Peephole => &[Pass::LowerRa, Pass::Pac],
            _ => &[],
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum PassError {
    #[error("function `{0}` has no return-address slot; run lower_ra first")]
    NotLowered(String),
    #[error("function `{function}` node {node}: {detail}")]
    UnexpectedShape {
        function: String,
        node: Node,
        detail: String,
    },
}

/// Rewrite counts and layout metadata produced by a pipeline run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PipelineReport {
    /// (function, pass, count) for every nonzero count.
    pub rewrites: Vec<(String, Pass, usize)>,
    pub canary: Option<CanarySpec>,
    pub lowering: Option<LoweringInfo>,
}

impl PipelineReport {
    fn add(&mut self, pass: Pass, counts: Counts) {
        for (f, n) in counts {
            if n > 0 {
                self.rewrites.push((f, pass, n));
            }
        }
    }

    /// One `function pass count` line per entry.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (f, p, n) in &self.rewrites {
            writeln!(out, "{f} {p} {n}").unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let w = self
            .rewrites
            .iter()
            .map(|(f, _, _)| f.len())
            .max()
            .unwrap_or(0)
            .max("function".len());
        writeln!(out, "{:<w$}  {:<10}  rewrites", "function", "pass").unwrap();
        for (f, p, n) in &self.rewrites {
            writeln!(out, "{f:<w$}  {:<10}  {n}", p.name()).unwrap();
        }
        if let Some(spec) = &self.canary {
            for (f, e) in spec.functions.iter().filter(|(_, e)| e.protected) {
                writeln!(
                    out,
                    "canary {f}: offset {} frame {}",
                    e.canary_offset, e.new_stacksize
                )
                .unwrap();
            }
        }
        if let Some(info) = &self.lowering {
            for (f, l) in &info.functions {
                writeln!(out, "ra slot {f}: offset {}", l.offset).unwrap();
            }
        }
        out
    }
}

/// Per-function rewrite counts.
pub type Counts = Vec<(String, usize)>;

/// Output of one pass plus whatever metadata it produced.
#[derive(Clone, Debug)]
pub struct Stage {
    pub pass: Pass,
    pub input: Program,
    pub output: Program,
    pub counts: Counts,
    pub canary: Option<CanarySpec>,
    pub lowering: Option<LoweringInfo>,
}

/// Applies one pass. `lowering` must come from the `lower_ra` run that
/// produced `p` when `pass` is `Pac`.
pub fn apply_pass(
    pass: Pass,
    p: &Program,
    cfg: &PassConfig,
    lowering: Option<&LoweringInfo>,
) -> Result<Stage, PassError> {
    let mut canary = None;
    let mut lowered = None;
    let (output, counts) = match pass {
        Pass::RefineDiv => pass_refine_div(p),
        Pass::Tailcall => per_function(p, |f| pass_tailcall(f, p)),
        Pass::Tailrec => per_function(p, pass_tailrec),
        Pass::Canary => {
            let (out, spec, counts) = pass_canary(p, cfg);
            canary = Some(spec);
            (out, counts)
        }
        Pass::LowerRa => {
            let (out, info) = pass_lower_ra(p);
            let counts = info
                .functions
                .iter()
                .map(|(f, l)| (f.clone(), l.returns.len()))
                .collect();
            lowered = Some(info);
            (out, counts)
        }
        Pass::Pac => {
            let empty = LoweringInfo::default();
            let info = lowering.unwrap_or(&empty);
            let out = pass_pac(p, info)?;
            let counts = info
                .functions
                .iter()
                .map(|(f, l)| (f.clone(), l.returns.len() + 1))
                .collect();
            lowered = Some(info.clone());
            (out, counts)
        }
        Pass::Peephole => per_function(p, peephole_retaa),
    };
    Ok(Stage {
        pass,
        input: p.clone(),
        output,
        counts,
        canary,
        lowering: lowered,
    })
}

/// Runs the passes enabled by `cfg` in order, keeping each intermediate.
pub fn pipeline_stages(p: &Program, cfg: &PassConfig) -> Result<Vec<Stage>, PassError> {
    let mut stages: Vec<Stage> = Vec::new();
    let mut cur = p.clone();
    let mut lowering: Option<LoweringInfo> = None;
    for pass in cfg.passes() {
        let stage = apply_pass(pass, &cur, cfg, lowering.as_ref())?;
        if stage.lowering.is_some() {
            lowering = stage.lowering.clone();
        }
        cur = stage.output.clone();
        stages.push(stage);
    }
    Ok(stages)
}

pub fn apply_pipeline(
    p: &Program,
    cfg: &PassConfig,
) -> Result<(Program, PipelineReport), PassError> {
    let stages = pipeline_stages(p, cfg)?;
    let mut report = PipelineReport::default();
    let mut out = p.clone();
    for s in stages {
        report.add(s.pass, s.counts);
        if s.canary.is_some() {
            report.canary = s.canary;
        }
        if s.lowering.is_some() {
            report.lowering = s.lowering;
        }
        out = s.output;
    }
    Ok((out, report))
}

/// Applies `pass` after its prerequisites. Returns the stage whose input is
/// the program right before `pass`.
pub fn stage_for(pass: Pass, p: &Program, cfg: &PassConfig) -> Result<Stage, PassError> {
    let mut cur = p.clone();
    let mut lowering = None;
    for &pre in pass.prerequisites() {
        let s = apply_pass(pre, &cur, cfg, lowering.as_ref())?;
        if s.lowering.is_some() {
            lowering = s.lowering;
        }
        cur = s.output;
    }
    apply_pass(pass, &cur, cfg, lowering.as_ref())
}

fn per_function(
    p: &Program,
    mut pass: impl FnMut(&Function) -> (Function, usize),
) -> (Program, Counts) {
    let mut out = Program::new(p.main.clone());
    let mut counts = Vec::new();
    for f in p.functions.values() {
        let (g, n) = pass(f);
        counts.push((f.name.clone(), n));
        out.add(g);
    }
    (out, counts)
}

/// Hands out register names unused in a function.
pub(crate) struct Fresh {
    used: BTreeSet<Reg>,
}

impl Fresh {
    pub(crate) fn new(f: &Function) -> Fresh {
        Fresh {
            used: f.registers(),
        }
    }

    pub(crate) fn reg(&mut self, base: &str) -> Reg {
        let mut r = Reg::new(format!("${base}"));
        let mut i = 1;
        while self.used.contains(&r) {
            r = Reg::new(format!("${base}{i}"));
            i += 1;
        }
        self.used.insert(r.clone());
        r
    }
}

#[cfg(test)]
mod tests;
