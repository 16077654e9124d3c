//! Enrolled credential storage with revocation by re-keying.
//!
//! The store is a single line-oriented text file:
//!
//! ```text
//! CANCELAUTH-STORE v1
//! SUBJECT <id> <scheme> <l> <k> <t_mse> <k_iqr> <q1> <q3>
//! META <created_at_unix_s> <key_fingerprint_hex>
//! DATA <name> <len> <v1,v2,...>
//! ...
//! END
//! ```
//!
//! Bioconvolving records carry `F`; MACE records carry `H_RE`, `H_IM` and
//! `REFSPEC`. Both carry `ENROLL_MSE`, the per-beat enrollment scores, so
//! the fence can be recomputed for a different `k_iqr`. Reals are written
//! at 17 significant digits. Keys are never written; only a fingerprint.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;

use crate::bioconv::{build_bio_template, ensemble_average, BioTemplate};
use crate::decision::{compute_threshold, enrollment_scores, ThresholdModel};
use crate::error::{Error, Result};
use crate::keys::Key;
use crate::mace::{
    build_mace_filter_with, correlation_spectrum, encrypt_segment, mean_encrypted, CorrelationSpectrum, MaceFilter,
    Weighting,
};
use crate::preprocess::BeatSegment;
use crate::Scheme;

pub const STORE_HEADER: &str = "CANCELAUTH-STORE v1";

/// The scheme-specific part of a stored credential.
#[derive(Debug, Clone, PartialEq)]
pub enum Credential {
    Bio(BioTemplate),
    Mace {
        filter: MaceFilter,
        /// Correlation of `filter` with the mean encrypted enrollment segment.
        reference: CorrelationSpectrum,
    },
}

impl Credential {
    pub fn scheme(&self) -> Scheme {
        match self {
            Credential::Bio(_) => Scheme::Bioconvolving,
            Credential::Mace { .. } => Scheme::Mace,
        }
    }
}

/// One enrolled subject under one scheme. Immutable once built.
#[derive(Debug, Clone)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub segment_length: usize,
    /// Bioconvolving piece count or MACE tap count.
    pub key_length: usize,
    pub credential: Credential,
    pub threshold: ThresholdModel,
    /// Seconds since the Unix epoch; informational only.
    pub created_at: u64,
    pub key_fingerprint: u64,
}

impl SubjectEntry {
    pub fn scheme(&self) -> Scheme {
        self.credential.scheme()
    }
}

impl PartialEq for SubjectEntry {
    fn eq(&self, other: &Self) -> bool {
        self.subject_id == other.subject_id
            && self.segment_length == other.segment_length
            && self.key_length == other.key_length
            && self.credential == other.credential
            && self.threshold == other.threshold
            && self.key_fingerprint == other.key_fingerprint
    }
}

fn check_subject_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(Error::InvalidParameter(format!(
            "subject id '{id}' must be nonempty and contain no whitespace"
        )));
    }
    Ok(())
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Build a credential, score every enrollment beat against it and derive
/// the subject's fence. Nothing is persisted.
pub fn build_entry(subject_id: &str, beats: &[BeatSegment], key: &Key, k_iqr: f64) -> Result<SubjectEntry> {
    build_entry_with(subject_id, beats, key, k_iqr, Weighting::default())
}

pub fn build_entry_with(
    subject_id: &str,
    beats: &[BeatSegment],
    key: &Key,
    k_iqr: f64,
    weighting: Weighting,
) -> Result<SubjectEntry> {
    check_subject_id(subject_id)?;
    if beats.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "enrollment needs at least 2 beats, got {}",
            beats.len()
        )));
    }
    let l = beats[0].len();
    if let Some(bad) = beats.iter().find(|b| b.len() != l) {
        return Err(Error::LengthMismatch {
            expected: l,
            found: bad.len(),
        });
    }
    let credential = match key {
        Key::Bio(k) => Credential::Bio(build_bio_template(&ensemble_average(beats)?, k)?),
        Key::Mace(k) => {
            let encrypted: Vec<_> = beats.iter().map(|b| encrypt_segment(b, k)).collect();
            let filter = build_mace_filter_with(&encrypted, weighting)?;
            let reference = correlation_spectrum(&filter, &mean_encrypted(beats, k)?)?;
            Credential::Mace { filter, reference }
        }
    };
    let scores: Vec<f64> = enrollment_scores(beats, &credential, key)?
        .into_iter()
        .map(|s| s.value())
        .collect();
    let threshold = compute_threshold(&scores, k_iqr)?;
    Ok(SubjectEntry {
        subject_id: subject_id.to_string(),
        segment_length: l,
        key_length: key.length(),
        credential,
        threshold,
        created_at: now_unix(),
        key_fingerprint: key.fingerprint(),
    })
}

/// File-backed collection of entries keyed by `(subject_id, scheme)`.
///
/// Mutations go through `&mut self`, so a single writer is enforced by the
/// borrow checker; readers can clone entries out freely.
#[derive(Debug, Clone, Default)]
pub struct Store {
    path: Option<PathBuf>,
    entries: Vec<SubjectEntry>,
}

impl Store {
    /// A store that is never written to disk.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open the store at `path`; a missing file is an empty store.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let entries = match fs::read_to_string(&path) {
            Ok(text) => parse_store(&text)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(Self {
            path: Some(path),
            entries,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn entries(&self) -> &[SubjectEntry] {
        &self.entries
    }

    fn position(&self, subject_id: &str, scheme: Scheme) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.subject_id == subject_id && e.scheme() == scheme)
    }

    pub fn get_entry(&self, subject_id: &str, scheme: Scheme) -> Result<&SubjectEntry> {
        self.position(subject_id, scheme)
            .map(|i| &self.entries[i])
            .ok_or_else(|| Error::NotFound {
                subject_id: subject_id.to_string(),
                scheme,
            })
    }

    /// Distinct subject ids in first-enrollment order.
    pub fn list_subjects(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !ids.contains(&e.subject_id.as_str()) {
                ids.push(&e.subject_id);
            }
        }
        ids
    }

    /// Enroll a new subject under the key's scheme and persist.
    pub fn enroll(&mut self, subject_id: &str, beats: &[BeatSegment], key: &Key, k_iqr: f64) -> Result<&SubjectEntry> {
        if self.position(subject_id, key.scheme()).is_some() {
            return Err(Error::DuplicateEnrollment {
                subject_id: subject_id.to_string(),
                scheme: key.scheme(),
            });
        }
        let entry = build_entry(subject_id, beats, key, k_iqr)?;
        self.insert(entry)
    }

    /// Insert a prebuilt entry and persist.
    pub fn insert(&mut self, entry: SubjectEntry) -> Result<&SubjectEntry> {
        if self.position(&entry.subject_id, entry.scheme()).is_some() {
            return Err(Error::DuplicateEnrollment {
                subject_id: entry.subject_id.clone(),
                scheme: entry.scheme(),
            });
        }
        let mut next = self.entries.clone();
        next.push(entry);
        self.commit(next)?;
        Ok(self.entries.last().unwrap())
    }

    /// Replace an existing entry with one built from `new_key`.
    pub fn revoke_and_reenroll(
        &mut self,
        subject_id: &str,
        beats: &[BeatSegment],
        new_key: &Key,
        k_iqr: f64,
    ) -> Result<&SubjectEntry> {
        let idx = self
            .position(subject_id, new_key.scheme())
            .ok_or_else(|| Error::NotFound {
                subject_id: subject_id.to_string(),
                scheme: new_key.scheme(),
            })?;
        let entry = build_entry(subject_id, beats, new_key, k_iqr)?;
        let mut next = self.entries.clone();
        next[idx] = entry;
        self.commit(next)?;
        Ok(&self.entries[idx])
    }

    fn commit(&mut self, next: Vec<SubjectEntry>) -> Result<()> {
        if let Some(path) = &self.path {
            write_atomic(path, &format_store(&next), |_| Ok(()))?;
        }
        self.entries = next;
        Ok(())
    }

    pub fn save(&self) -> Result<()> {
        match &self.path {
            Some(path) => write_atomic(path, &format_store(&self.entries), |_| Ok(())),
            None => Ok(()),
        }
    }
}

/// Write to a temporary sibling, sync, then rename over `path`. `before_rename`
/// runs between the sync and the rename.
pub(crate) fn write_atomic(
    path: &Path,
    contents: &str,
    before_rename: impl FnOnce(&Path) -> io::Result<()>,
) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        drop(f);
        before_rename(&tmp)?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

fn push_data(out: &mut String, name: &str, values: impl ExactSizeIterator<Item = f64>) {
    write!(out, "DATA {name} {} ", values.len()).unwrap();
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v:.16e}").unwrap();
    }
    out.push('\n');
}

pub fn format_store(entries: &[SubjectEntry]) -> String {
    let mut out = String::new();
    out.push_str(STORE_HEADER);
    out.push('\n');
    for e in entries {
        let t = &e.threshold;
        writeln!(
            out,
            "SUBJECT {} {} {} {} {:.16e} {:.16e} {:.16e} {:.16e}",
            e.subject_id,
            e.scheme().as_str(),
            e.segment_length,
            e.key_length,
            t.t_mse,
            t.k_iqr,
            t.q1,
            t.q3
        )
        .unwrap();
        writeln!(out, "META {} {:016x}", e.created_at, e.key_fingerprint).unwrap();
        match &e.credential {
            Credential::Bio(f) => push_data(&mut out, "F", f.values.iter().copied()),
            Credential::Mace { filter, reference } => {
                push_data(&mut out, "H_RE", filter.coefficients.iter().map(|c| c.re));
                push_data(&mut out, "H_IM", filter.coefficients.iter().map(|c| c.im));
                push_data(&mut out, "REFSPEC", reference.values.iter().copied());
            }
        }
        push_data(&mut out, "ENROLL_MSE", t.enrollment_mses.iter().copied());
        out.push_str("END\n");
    }
    out
}

struct RecordBuilder {
    line: usize,
    subject_id: String,
    scheme: Scheme,
    l: usize,
    k: usize,
    t_mse: f64,
    k_iqr: f64,
    q1: f64,
    q3: f64,
    meta: Option<(u64, u64)>,
    data: Vec<(String, Vec<f64>)>,
}

fn fmt_err(line: usize, message: impl Into<String>) -> Error {
    Error::StoreFormat {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| fmt_err(line, format!("invalid {what} '{s}'")))
}

impl RecordBuilder {
    fn take(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let idx = self
            .data
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| fmt_err(self.line, format!("record missing DATA {name}")))?;
        let (_, values) = self.data.remove(idx);
        if values.len() != len {
            return Err(fmt_err(
                self.line,
                format!("DATA {name} has {} values, expected {len}", values.len()),
            ));
        }
        Ok(values)
    }

    fn finish(mut self) -> Result<SubjectEntry> {
        let (created_at, key_fingerprint) = self.meta.ok_or_else(|| fmt_err(self.line, "record missing META"))?;
        let credential = match self.scheme {
            Scheme::Bioconvolving => {
                if self.k == 0 || !self.l.is_multiple_of(self.k) {
                    return Err(fmt_err(self.line, "piece count must divide segment length"));
                }
                Credential::Bio(BioTemplate {
                    values: self.take("F", self.l - self.k)?,
                    bio_k: self.k,
                    segment_length: self.l,
                })
            }
            Scheme::Mace => {
                let len = self.l + self.k - 1;
                let re = self.take("H_RE", len)?;
                let im = self.take("H_IM", len)?;
                let reference = self.take("REFSPEC", len)?;
                Credential::Mace {
                    filter: MaceFilter {
                        coefficients: re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect(),
                    },
                    reference: CorrelationSpectrum { values: reference },
                }
            }
        };
        let idx = self
            .data
            .iter()
            .position(|(n, _)| n == "ENROLL_MSE")
            .ok_or_else(|| fmt_err(self.line, "record missing DATA ENROLL_MSE"))?;
        let (_, enrollment_mses) = self.data.remove(idx);
        if let Some((name, _)) = self.data.first() {
            return Err(fmt_err(self.line, format!("unexpected DATA {name}")));
        }
        if self.q1 > self.q3 {
            return Err(fmt_err(self.line, "q1 exceeds q3"));
        }
        Ok(SubjectEntry {
            subject_id: self.subject_id,
            segment_length: self.l,
            key_length: self.k,
            credential,
            threshold: ThresholdModel {
                q1: self.q1,
                q3: self.q3,
                k_iqr: self.k_iqr,
                t_mse: self.t_mse,
                enrollment_mses,
            },
            created_at,
            key_fingerprint,
        })
    }
}

pub fn parse_store(text: &str) -> Result<Vec<SubjectEntry>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h.trim_end() == STORE_HEADER => {}
        _ => return Err(fmt_err(1, format!("expected header '{STORE_HEADER}'"))),
    }
    let mut entries: Vec<SubjectEntry> = Vec::new();
    let mut current: Option<RecordBuilder> = None;
    for (n, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split(' ').collect();
        match (tokens[0], current.as_mut()) {
            ("SUBJECT", None) => {
                if tokens.len() != 9 {
                    return Err(fmt_err(n, "SUBJECT line needs 8 fields"));
                }
                let scheme = match tokens[2] {
                    "bioconvolving" => Scheme::Bioconvolving,
                    "mace" => Scheme::Mace,
                    other => return Err(fmt_err(n, format!("unknown scheme '{other}'"))),
                };
                current = Some(RecordBuilder {
                    line: n,
                    subject_id: tokens[1].to_string(),
                    scheme,
                    l: num(n, tokens[3], "segment length")?,
                    k: num(n, tokens[4], "key length")?,
                    t_mse: num(n, tokens[5], "t_mse")?,
                    k_iqr: num(n, tokens[6], "k_iqr")?,
                    q1: num(n, tokens[7], "q1")?,
                    q3: num(n, tokens[8], "q3")?,
                    meta: None,
                    data: Vec::new(),
                });
            }
            ("META", Some(rec)) => {
                if tokens.len() != 3 {
                    return Err(fmt_err(n, "META line needs 2 fields"));
                }
                let created: u64 = num(n, tokens[1], "timestamp")?;
                let fp = u64::from_str_radix(tokens[2], 16)
                    .map_err(|_| fmt_err(n, format!("invalid fingerprint '{}'", tokens[2])))?;
                rec.meta = Some((created, fp));
            }
            ("DATA", Some(rec)) => {
                if tokens.len() != 4 {
                    return Err(fmt_err(n, "DATA line needs name, length and values"));
                }
                let len: usize = num(n, tokens[2], "length")?;
                let values = tokens[3]
                    .split(',')
                    .map(|v| num::<f64>(n, v, "value"))
                    .collect::<Result<Vec<_>>>()?;
                if values.len() != len {
                    return Err(fmt_err(n, format!("declared {len} values, found {}", values.len())));
                }
                rec.data.push((tokens[1].to_string(), values));
            }
            ("END", Some(_)) => {
                let entry = current.take().unwrap().finish()?;
                if entries
                    .iter()
                    .any(|e| e.subject_id == entry.subject_id && e.scheme() == entry.scheme())
                {
                    return Err(fmt_err(n, format!("duplicate record for '{}'", entry.subject_id)));
                }
                entries.push(entry);
            }
            (tok, _) => return Err(fmt_err(n, format!("unexpected '{tok}'"))),
        }
    }
    if current.is_some() {
        return Err(fmt_err(text.lines().count(), "unterminated record"));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::verify;
    use crate::ingest::{synth_subject, SynthSubjectParams};
    use crate::keys::{gen_bio_key, gen_mace_key};
    use crate::preprocess::{clean_record, segment_beats, PreprocessConfig};

    fn beats(seed: u64) -> Vec<BeatSegment> {
        let params = SynthSubjectParams {
            wave_amplitudes: [0.15, 1.2, 0.3],
            wave_widths: [0.02, 0.01, 0.05],
            wave_centers: [-0.2, 0.0, 0.26],
            mean_rr_s: 0.9,
            rr_jitter_frac: 0.05,
            noise_std_mv: 0.02,
        };
        let rec = synth_subject(&params, 20, 1000.0, seed, "x").unwrap();
        let clean = clean_record(&rec, &PreprocessConfig::default()).unwrap();
        segment_beats(&clean, 0.8).unwrap()
    }

    fn keys(seed: u64) -> [Key; 2] {
        [
            Key::Bio(gen_bio_key(800, 4, seed).unwrap()),
            Key::Mace(gen_mace_key(16, seed).unwrap()),
        ]
    }

    #[test]
    fn enroll_then_verify_same_beats_accepts() {
        let b = beats(1);
        let mut store = Store::in_memory();
        for key in keys(3) {
            let entry = store.enroll("alice", &b[..15], &key, 1.5).unwrap().clone();
            assert!(verify(&b[..15], &key, &entry).accepted());
        }
        assert_eq!(store.list_subjects(), vec!["alice"]);
    }

    #[test]
    fn enroll_preconditions() {
        let b = beats(2);
        let mut store = Store::in_memory();
        let [bio, _] = keys(1);
        assert!(store.enroll("a", &b[..1], &bio, 1.5).is_err());
        store.enroll("a", &b[..5], &bio, 1.5).unwrap();
        assert!(matches!(
            store.enroll("a", &b[..5], &bio, 1.5),
            Err(Error::DuplicateEnrollment { .. })
        ));
        assert!(store.enroll("has space", &b[..5], &bio, 1.5).is_err());
        assert!(matches!(
            store.get_entry("b", Scheme::Bioconvolving),
            Err(Error::NotFound { .. })
        ));
        assert!(matches!(
            store.get_entry("a", Scheme::Mace),
            Err(Error::NotFound { .. })
        ));
    }

    #[test]
    fn file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.txt");
        let b = beats(4);
        let mut store = Store::open(&path).unwrap();
        for (i, key) in keys(9).iter().enumerate() {
            store.enroll(&format!("s{i}"), &b[..15], key, 2.0).unwrap();
        }
        let back = Store::open(&path).unwrap();
        assert_eq!(back.entries(), store.entries());
        assert_eq!(back.list_subjects(), vec!["s0", "s1"]);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("CANCELAUTH-STORE v1\nSUBJECT s0 bioconvolving 800 4 "));
        assert_eq!(format_store(back.entries()), text);
    }

    #[test]
    fn key_is_never_at_rest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.txt");
        let b = beats(5);
        let mut store = Store::open(&path).unwrap();
        let ks = keys(11);
        for key in &ks {
            store.enroll("bob", &b[..15], key, 1.5).unwrap();
        }
        let text = fs::read_to_string(&path).unwrap();
        for key in &ks {
            let line = key.to_string();
            assert!(!text.contains(&line));
            let payload = line.rsplit(':').next().unwrap();
            assert!(!text.contains(payload));
        }
    }

    #[test]
    fn failed_rename_leaves_previous_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.txt");
        let b = beats(6);
        let mut store = Store::open(&path).unwrap();
        let [bio, mace] = keys(2);
        store.enroll("a", &b[..10], &bio, 1.5).unwrap();
        let before = fs::read(&path).unwrap();

        let entry = build_entry("b", &b[..10], &mace, 1.5).unwrap();
        let mut next = store.entries().to_vec();
        next.push(entry);
        let crash = write_atomic(&path, &format_store(&next), |_| Err(io::Error::other("injected crash")));
        assert!(crash.is_err());
        assert_eq!(fs::read(&path).unwrap(), before);
        assert_eq!(Store::open(&path).unwrap().entries(), store.entries());
        let leftovers = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn revocation_replaces_in_place() {
        let b = beats(7);
        let mut store = Store::in_memory();
        let old = Key::Bio(gen_bio_key(800, 4, 1).unwrap());
        let new = Key::Bio(gen_bio_key(800, 4, 2).unwrap());
        store.enroll("a", &b[..15], &old, 1.5).unwrap();
        store.enroll("z", &b[..15], &old, 1.5).unwrap();
        let prev = store.get_entry("a", Scheme::Bioconvolving).unwrap().clone();
        let fresh = store.revoke_and_reenroll("a", &b[..15], &new, 1.5).unwrap().clone();
        assert_ne!(prev.credential, fresh.credential);
        assert_eq!(store.list_subjects(), vec!["a", "z"]);
        assert!(!verify(&b[..15], &old, &fresh).accepted());
        assert!(verify(&b[..15], &new, &fresh).accepted());
        assert!(store.revoke_and_reenroll("nobody", &b[..15], &new, 1.5).is_err());
    }

    #[test]
    fn malformed_store_is_rejected() {
        assert!(parse_store("").is_err());
        assert!(parse_store("WRONG\n").is_err());
        let good = {
            let b = beats(8);
            format_store(&[build_entry("a", &b[..5], &keys(1)[0], 1.5).unwrap()])
        };
        assert_eq!(parse_store(&good).unwrap().len(), 1);
        let truncated: String = good.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(parse_store(&truncated).is_err());
        let bad_len = good.replacen("DATA F 796", "DATA F 795", 1);
        assert!(matches!(parse_store(&bad_len), Err(Error::StoreFormat { .. })));
        let dup = format!("{good}{}", good.trim_start_matches(STORE_HEADER).trim_start());
        assert!(parse_store(&dup).is_err());
    }
}
