//! MSE scoring, per-subject interquartile fences and accept/reject verdicts.

use std::fmt;

use crate::bioconv::{bio_probe, build_bio_template};
use crate::error::{Error, Result};
use crate::keys::Key;
use crate::mace::{correlation_spectrum, encrypt_segment, mean_encrypted};
use crate::preprocess::BeatSegment;
use crate::store::{Credential, SubjectEntry};

/// Fence parameter used when no EER calibration has been run.
pub const DEFAULT_K_IQR: f64 = 1.5;

/// Mean squared error between a probe and a stored vector.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MatchScore(pub f64);

impl MatchScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for MatchScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.10e}", self.0)
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<MatchScore> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("mse of empty sequences"));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(MatchScore(sum / a.len() as f64))
}

/// Quantile by linear interpolation at zero-indexed rank `p * (n - 1)` of
/// the sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// First and third quartiles.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "quartiles need at least 2 values, got {}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75)))
}

/// Per-subject acceptance fence `t_mse = q3 + k_iqr * (q3 - q1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdModel {
    pub q1: f64,
    pub q3: f64,
    pub k_iqr: f64,
    pub t_mse: f64,
    pub enrollment_mses: Vec<f64>,
}

impl ThresholdModel {
    pub fn threshold_at(&self, k_iqr: f64) -> f64 {
        self.q3 + k_iqr * (self.q3 - self.q1)
    }

    /// Same enrollment scores, different fence parameter.
    pub fn recalibrated(&self, k_iqr: f64) -> ThresholdModel {
        ThresholdModel {
            k_iqr,
            t_mse: self.threshold_at(k_iqr),
            ..self.clone()
        }
    }

    pub fn accepts(&self, score: MatchScore) -> bool {
        score.0 < self.t_mse
    }
}

pub fn compute_threshold(enrollment_mses: &[f64], k_iqr: f64) -> Result<ThresholdModel> {
    let (q1, q3) = quartiles(enrollment_mses)?;
    Ok(ThresholdModel {
        q1,
        q3,
        k_iqr,
        t_mse: q3 + k_iqr * (q3 - q1),
        enrollment_mses: enrollment_mses.to_vec(),
    })
}

fn check_key(credential: &Credential, key: &Key) -> Result<()> {
    if credential.scheme() != key.scheme() {
        return Err(Error::SchemeMismatch {
            expected: credential.scheme(),
            found: key.scheme(),
        });
    }
    Ok(())
}

/// One score per enrollment beat against the stored credential.
///
/// Bioconvolving: each beat's single-beat template against `F`. MACE: the
/// correlation spectrum of `h` with each encrypted beat against the stored
/// reference spectrum.
pub fn enrollment_scores(beats: &[BeatSegment], credential: &Credential, key: &Key) -> Result<Vec<MatchScore>> {
    check_key(credential, key)?;
    beats
        .iter()
        .map(|beat| match (credential, key) {
            (Credential::Bio(stored), Key::Bio(k)) => {
                let single = build_bio_template(&beat.samples, k)?;
                mse(&single.values, &stored.values)
            }
            (Credential::Mace { filter, reference }, Key::Mace(k)) => {
                let c = correlation_spectrum(filter, &encrypt_segment(beat, k))?;
                mse(&c.values, &reference.values)
            }
            _ => unreachable!("scheme checked above"),
        })
        .collect()
}

/// Score `N_v` probe beats presented with `key` against a credential.
pub fn score_probe(probe: &[BeatSegment], key: &Key, credential: &Credential) -> Result<MatchScore> {
    check_key(credential, key)?;
    match (credential, key) {
        (Credential::Bio(stored), Key::Bio(k)) => mse(&bio_probe(probe, k)?.values, &stored.values),
        (Credential::Mace { filter, reference }, Key::Mace(k)) => {
            let c = correlation_spectrum(filter, &mean_encrypted(probe, k)?)?;
            mse(&c.values, &reference.values)
        }
        _ => unreachable!("scheme checked above"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    AboveThreshold,
    /// Key material differs from what was enrolled (fingerprint check).
    KeyMismatch,
    SchemeMismatch,
    /// Key shape incompatible with the stored credential.
    InvalidKey,
    LengthMismatch,
    NoProbe,
    Failed(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::AboveThreshold => f.write_str("above-threshold"),
            RejectReason::KeyMismatch => f.write_str("key-mismatch"),
            RejectReason::SchemeMismatch => f.write_str("scheme-mismatch"),
            RejectReason::InvalidKey => f.write_str("invalid-key"),
            RejectReason::LengthMismatch => f.write_str("length-mismatch"),
            RejectReason::NoProbe => f.write_str("no-probe-beats"),
            RejectReason::Failed(msg) => write!(f, "error: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub decision: Decision,
    pub score: Option<MatchScore>,
    pub reason: Option<RejectReason>,
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accept
    }

    pub fn reject(reason: RejectReason, score: Option<MatchScore>) -> Self {
        Verdict {
            decision: Decision::Reject,
            score,
            reason: Some(reason),
        }
    }
}

/// `ACCEPT <score>` or `REJECT <score> <reason>`; an unavailable score
/// prints as `NaN`.
impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let score = self.score.map_or_else(|| "NaN".to_string(), |s| s.to_string());
        match (&self.decision, &self.reason) {
            (Decision::Accept, _) => write!(f, "ACCEPT {score}"),
            (Decision::Reject, Some(r)) => write!(f, "REJECT {score} {r}"),
            (Decision::Reject, None) => write!(f, "REJECT {score} unspecified"),
        }
    }
}

fn key_fits(entry: &SubjectEntry, key: &Key) -> bool {
    match key {
        Key::Bio(k) => k.segment_length() == entry.segment_length && k.piece_count() == entry.key_length,
        Key::Mace(k) => k.taps().len() == entry.key_length,
    }
}

/// Verify a claimed identity at the entry's stored fence. Every failure
/// path rejects.
pub fn verify(probe: &[BeatSegment], key: &Key, entry: &SubjectEntry) -> Verdict {
    verify_with_threshold(probe, key, entry, &entry.threshold)
}

/// Verify at a different fence parameter, recomputed from the stored
/// enrollment scores.
pub fn verify_at(probe: &[BeatSegment], key: &Key, entry: &SubjectEntry, k_iqr: f64) -> Verdict {
    verify_with_threshold(probe, key, entry, &entry.threshold.recalibrated(k_iqr))
}

fn verify_with_threshold(
    probe: &[BeatSegment],
    key: &Key,
    entry: &SubjectEntry,
    threshold: &ThresholdModel,
) -> Verdict {
    if key.scheme() != entry.scheme() {
        return Verdict::reject(RejectReason::SchemeMismatch, None);
    }
    if !key_fits(entry, key) {
        return Verdict::reject(RejectReason::InvalidKey, None);
    }
    if probe.is_empty() {
        return Verdict::reject(RejectReason::NoProbe, None);
    }
    if probe.iter().any(|b| b.len() != entry.segment_length) {
        return Verdict::reject(RejectReason::LengthMismatch, None);
    }
    let score = match score_probe(probe, key, &entry.credential) {
        Ok(s) => s,
        Err(e) => return Verdict::reject(RejectReason::Failed(e.to_string()), None),
    };
    if key.fingerprint() != entry.key_fingerprint {
        return Verdict::reject(RejectReason::KeyMismatch, Some(score));
    }
    if threshold.accepts(score) {
        Verdict {
            decision: Decision::Accept,
            score: Some(score),
            reason: None,
        }
    } else {
        Verdict::reject(RejectReason::AboveThreshold, Some(score))
    }
}
