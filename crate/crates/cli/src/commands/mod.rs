//! Subcommand implementations. Each returns an [`Outcome`]; errors map to
//! exit code 1.

mod bounds;
mod certify;
mod compare;
mod run;
mod verify;

pub use bounds::cmd_bounds;
pub use certify::cmd_certify;
pub use compare::{cmd_compare, BOUNDS_HEADER, COMPARE_HEADER};
pub use run::{cmd_run, TRACE_HEADER};
pub use verify::cmd_verify;

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A checked inequality failed or a run was refused.
    Violations,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Violations => 2,
        }
    }

    fn from_ok(ok: bool) -> Self {
        if ok {
            Outcome::Success
        } else {
            Outcome::Violations
        }
    }
}
