//! Query tree collision resolution, with and without successive interference
//! cancellation, plus the closed-form latency bounds, exhaustive oracles,
//! frame/codebook evaluation and Monte Carlo harnesses built around them.

use std::fmt;
use std::str::FromStr;

pub mod bounds;
pub mod codebook;
pub mod error;
pub mod model;
pub mod qta;
pub mod report;
pub mod sicqta;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    DeviceId, Query, ResolutionTrace, SlotOutcome, SlotRecord, SlotSignal, TreeParams,
};
pub use qta::{run_qta, QtaState, Step};
pub use sicqta::{run_sicqta, SicqtaState};

/// Which gateway algorithm resolves a contention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Qta,
    Sicqta,
}

impl Algorithm {
    /// Run one resolution. `max_cancel_depth` is ignored by QTA.
    pub fn resolve(
        self,
        participants: impl IntoIterator<Item = DeviceId>,
        params: TreeParams,
        max_cancel_depth: Option<usize>,
    ) -> Result<ResolutionTrace> {
        match self {
            Algorithm::Qta => run_qta(participants, params),
            Algorithm::Sicqta => run_sicqta(participants, params, max_cancel_depth),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Qta => "qta",
            Algorithm::Sicqta => "sicqta",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qta" => Ok(Algorithm::Qta),
            "sicqta" => Ok(Algorithm::Sicqta),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}
