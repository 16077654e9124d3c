//! Two-factor cancelable ECG biometric verification.
//!
//! Two template schemes are provided, both keyed by a random second factor
//! that only the enrolled subject holds:
//!
//! - **Bioconvolving** ([`bioconv`]): the ensemble-average beat is cut into
//!   `k` equal pieces, each piece is split at a key-chosen position and its
//!   two parts are convolved, and the results are stacked into a template of
//!   length `l - k`.
//! - **MACE filter** ([`mace`]): beats are convolved with a random tap vector
//!   and transformed to the frequency domain; a minimum average correlation
//!   energy filter is synthesized so that every enrollment segment correlates
//!   to a unit peak at the origin.
//!
//! Matching uses the mean squared error against the stored credential, and
//! each subject gets an interquartile-range fence computed from their own
//! enrollment scores ([`decision`]). [`store`] persists credentials and
//! supports revocation by re-keying; [`eval`] runs leave-one-out FPR/FNR/EER
//! experiments over sampling rate and probe-size grids.
//!
//! ```text
//! signal -> preprocess (median baseline, notch, [decimate]) -> beats
//!        -> keys + bioconv | mace -> decision (MSE, IQR fence) -> store
//! ```

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bioconv;
pub mod decision;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod keys;
pub mod mace;
pub mod preprocess;
pub mod store;

pub use bioconv::BioTemplate;
pub use decision::{MatchScore, RejectReason, ThresholdModel, Verdict};
pub use error::{Error, Result};
pub use ingest::{EcgRecord, SynthSubjectParams};
pub use keys::{BioKey, Key, MaceKey};
pub use mace::{CorrelationSpectrum, EncryptedSegment, MaceFilter};
pub use preprocess::{BeatSegment, PreprocessConfig};
pub use store::{Credential, Store, SubjectEntry};

/// Which cancelable template construction a credential uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Bioconvolving,
    Mace,
}

impl Scheme {
    /// Token used in the store file.
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Bioconvolving => "bioconvolving",
            Scheme::Mace => "mace",
        }
    }

    /// Short token used on the command line and in reports.
    pub fn short_name(self) -> &'static str {
        match self {
            Scheme::Bioconvolving => "bio",
            Scheme::Mace => "mace",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bio" | "bioconvolving" => Ok(Scheme::Bioconvolving),
            "mace" => Ok(Scheme::Mace),
            other => Err(Error::InvalidParameter(format!("unknown scheme '{other}'"))),
        }
    }
}
