//! Exit codes and the mapping from library errors onto them.

use hfbm::dwt::DwtError;
use hfbm::estimate::EstimateError;
use hfbm::fctest::TestError;
use hfbm::io::IoError;
use hfbm::mc::McError;
use hfbm::varmodel::VarError;
use hfbm::{ModelError, SynthError};
use std::fmt;
use std::path::Path;

pub const IO: u8 = 1;
pub const USAGE: u8 = 2;
pub const NOT_PSD: u8 = 3;
pub const TOO_SHORT: u8 = 4;
pub const DEGENERATE: u8 = 5;
pub const SKIPPED: u8 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: String) -> Self {
        Self { code, message }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(IO, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Self::new(USAGE, e.to_string())
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        let code = match e {
            SynthError::Model(_) | SynthError::TooShort(_) => USAGE,
            SynthError::EmbeddingNotPsd { .. } | SynthError::NotConverged { .. } | SynthError::NotHermitian { .. } => {
                NOT_PSD
            }
        };
        Self::new(code, e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let code = if matches!(e, IoError::Io(_)) { IO } else { USAGE };
        Self::new(code, e.to_string())
    }
}

impl From<DwtError> for Failure {
    fn from(e: DwtError) -> Self {
        let code = if matches!(e, DwtError::TooShort { .. }) { TOO_SHORT } else { USAGE };
        Self::new(code, e.to_string())
    }
}

impl From<EstimateError> for Failure {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Dwt(d) => d.into(),
            EstimateError::TooShort(_) => Self::new(TOO_SHORT, e.to_string()),
            EstimateError::DegenerateVariance { .. } | EstimateError::DegenerateInput(_) => {
                Self::new(DEGENERATE, e.to_string())
            }
            EstimateError::InvalidRange { .. } | EstimateError::RangeNotCovered { .. } => {
                Self::new(USAGE, e.to_string())
            }
        }
    }
}

impl From<VarError> for Failure {
    fn from(e: VarError) -> Self {
        let code = match e {
            VarError::Layout(_) => TOO_SHORT,
            VarError::InfiniteVariance { .. } | VarError::NonPositiveNormalizer { .. } => DEGENERATE,
            VarError::MissingConstituent(..) => USAGE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<TestError> for Failure {
    fn from(e: TestError) -> Self {
        let code = match e {
            TestError::DegenerateCoherence { .. } | TestError::InvalidVariance(_) => DEGENERATE,
            TestError::TooFewCoefficients { .. } | TestError::TooFewOctaves => TOO_SHORT,
            TestError::InvalidSignificance(_) | TestError::TooFewReplications(_) | TestError::InvalidTarget(_) => USAGE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<McError> for Failure {
    fn from(e: McError) -> Self {
        match e {
            McError::Model(m) => m.into(),
            McError::Var(v) => v.into(),
            McError::Calibration(t) => t.into(),
            McError::TooManySkipped { .. } => Self::new(SKIPPED, e.to_string()),
            McError::Ledger(_) => Self::new(IO, e.to_string()),
            McError::Config(_) | McError::Pool(_) => Self::new(USAGE, e.to_string()),
        }
    }
}
