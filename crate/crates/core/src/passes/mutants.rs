//! Deliberately broken pass variants, used to check that the validator
//! rejects wrong transformations.

use std::fmt;

use crate::ir::Program;

use super::canary::{canary_impl, CanaryBug};
use super::lower::pac_impl;
use super::peephole::peephole_impl;
use super::simple::tailrec_impl;
use super::{apply_pass, per_function, LoweringInfo, Pass, PassConfig, PassError, Stage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mutant {
    /// Canary stored one word below its slot, over the last local.
    CanaryOffset,
    /// Canary stored but never checked.
    SkipEpilogue,
    /// Parameters copied from the temporaries before the temporaries are set.
    SwappedCopies,
    /// Return address authenticated against 0 instead of the stack pointer.
    DecodeModifier,
    /// Authenticate-and-return fused into a plain return-via.
    FuseWithoutDecode,
}

impl Mutant {
    pub const ALL: [Mutant; 5] = [
        Mutant::CanaryOffset,
        Mutant::SkipEpilogue,
        Mutant::SwappedCopies,
        Mutant::DecodeModifier,
        Mutant::FuseWithoutDecode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutant::CanaryOffset => "canary-offset",
            Mutant::SkipEpilogue => "skip-epilogue",
            Mutant::SwappedCopies => "swapped-copies",
            Mutant::DecodeModifier => "decode-modifier",
            Mutant::FuseWithoutDecode => "fuse-without-decode",
        }
    }

    /// The pass this mutant replaces.
    pub fn pass(self) -> Pass {
        match self {
            Mutant::CanaryOffset | Mutant::SkipEpilogue => Pass::Canary,
            Mutant::SwappedCopies => Pass::Tailrec,
            Mutant::DecodeModifier => Pass::Pac,
            Mutant::FuseWithoutDecode => Pass::Peephole,
        }
    }

    fn apply(
        self,
        p: &Program,
        cfg: &PassConfig,
        lowering: Option<&LoweringInfo>,
    ) -> Result<Stage, PassError> {
        let mut stage = apply_pass(self.pass(), p, cfg, lowering)?;
        let (output, counts) = match self {
            Mutant::CanaryOffset | Mutant::SkipEpilogue => {
                let bug = if self == Mutant::CanaryOffset {
                    CanaryBug::WrongOffset
                } else {
                    CanaryBug::SkipEpilogue
                };
                let (out, _, counts) = canary_impl(p, cfg, Some(bug));
                (out, counts)
            }
            Mutant::SwappedCopies => per_function(p, |f| tailrec_impl(f, true)),
            Mutant::DecodeModifier => {
                let empty = LoweringInfo::default();
                (
                    pac_impl(p, lowering.unwrap_or(&empty), true)?,
                    stage.counts.clone(),
                )
            }
            Mutant::FuseWithoutDecode => per_function(p, |f| peephole_impl(f, true)),
        };
        // Metadata stays that of the correct pass: the validator must not
        // learn the layout from the broken one.
        stage.output = output;
        stage.counts = counts;
        Ok(stage)
    }

    /// Like [`super::stage_for`], with this mutant in place of its pass.
    pub fn stage(self, p: &Program, cfg: &PassConfig) -> Result<Stage, PassError> {
        let mut cur = p.clone();
        let mut lowering = None;
        for &pre in self.pass().prerequisites() {
            let s = apply_pass(pre, &cur, cfg, lowering.as_ref())?;
            if s.lowering.is_some() {
                lowering = s.lowering;
            }
            cur = s.output;
        }
        self.apply(&cur, cfg, lowering.as_ref())
    }
}

impl fmt::Display for Mutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
