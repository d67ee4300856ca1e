use std::fmt;

use ecgdel_core::harness::HarnessError;
use ecgdel_core::unet::ModelError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// A failure with an explicit exit-code class, for errors raised by the CLI
/// itself rather than by the library.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

pub fn data(msg: impl Into<String>) -> anyhow::Error {
    Failure::Data(msg.into()).into()
}

/// Usage/config problems exit 1, divergence 3, everything else (bad or
/// missing data, I/O) 2.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Usage(_) => EXIT_USAGE,
                Failure::Data(_) => EXIT_DATA,
            };
        }
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            if h.is_divergence() {
                return EXIT_DIVERGED;
            }
            return match h {
                HarnessError::Config(_) | HarnessError::Augment(_) => EXIT_USAGE,
                HarnessError::Model(ModelError::InvalidConfig(_)) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            return match m {
                ModelError::Divergence(_) => EXIT_DIVERGED,
                ModelError::InvalidConfig(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_the_cause() {
        assert_eq!(exit_code(&usage("x")), EXIT_USAGE);
        assert_eq!(exit_code(&data("x")), EXIT_DATA);
        let div: anyhow::Error = HarnessError::Model(ModelError::Divergence("nan".into())).into();
        assert_eq!(exit_code(&div.context("fold 0")), EXIT_DIVERGED);
        let cfg: anyhow::Error = HarnessError::Config("bad".into()).into();
        assert_eq!(exit_code(&cfg), EXIT_USAGE);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), EXIT_DATA);
    }
}
