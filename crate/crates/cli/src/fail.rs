//! Process failure type carrying the exit code.
//!
//! Exit codes: 0 success, 1 validation error (bad arguments, config, or
//! input files), 2 partial data failure (the run finished but skipped some
//! inputs), 3 internal error (divergence, I/O breakage mid-run).

use asc_core::error::Error;

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub struct Fail {
    pub code: i32,
    pub message: String,
}

impl Fail {
    pub fn validation(message: impl Into<String>) -> Fail {
        Fail {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn partial(message: impl Into<String>) -> Fail {
        Fail {
            code: EXIT_PARTIAL,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Fail {
        Fail {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        let code = match &e {
            Error::Io(_) | Error::Diverged(_) | Error::NoAdjoint(_) => EXIT_INTERNAL,
            _ => EXIT_VALIDATION,
        };
        Fail {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for Fail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}
