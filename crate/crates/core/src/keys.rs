//! The user-held random second factor for each scheme.
//!
//! Keys are serialized as a single text line:
//!
//! ```text
//! BIO:<l>:<k>:<r1,...,rk>
//! MACE:<k>:<t1,...,tk>          taps at 17 significant digits
//! ```

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::Scheme;

/// Split positions for bioconvolving. Piece `i` (of length `l/k`) is cut into
/// parts of lengths `splits[i]` and `l/k - splits[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BioKey {
    splits: Vec<usize>,
    segment_length: usize,
}

impl BioKey {
    pub fn new(segment_length: usize, splits: Vec<usize>) -> Result<Self> {
        let k = splits.len();
        check_bio_shape(segment_length, k)?;
        let piece = segment_length / k;
        if let Some(&bad) = splits.iter().find(|&&r| r < 1 || r > piece - 1) {
            return Err(Error::InvalidParameter(format!(
                "split {bad} outside [1, {}]",
                piece - 1
            )));
        }
        Ok(Self { splits, segment_length })
    }

    pub fn splits(&self) -> &[usize] {
        &self.splits
    }

    pub fn piece_count(&self) -> usize {
        self.splits.len()
    }

    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    pub fn piece_length(&self) -> usize {
        self.segment_length / self.splits.len()
    }
}

fn check_bio_shape(l: usize, k: usize) -> Result<()> {
    if k == 0 || !l.is_multiple_of(k) {
        return Err(Error::InvalidParameter(format!(
            "piece count {k} must divide segment length {l}"
        )));
    }
    // Both parts of a split piece must be nonempty.
    if l / k < 2 {
        return Err(Error::InvalidParameter(format!(
            "piece length l/k = {} must be at least 2",
            l / k
        )));
    }
    Ok(())
}

/// Convolution taps for the MACE scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct MaceKey {
    taps: Vec<f64>,
}

impl MaceKey {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len() < 2 {
            return Err(Error::InvalidParameter("MACE key needs at least 2 taps".into()));
        }
        if taps.iter().all(|&t| t == 0.0) {
            return Err(Error::InvalidParameter("MACE key taps are all zero".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("MACE key taps must be finite".into()));
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// Either scheme's key.
#[derive(Debug, Clone, PartialEq)]
pub enum Key {
    Bio(BioKey),
    Mace(MaceKey),
}

impl Key {
    pub fn scheme(&self) -> Scheme {
        match self {
            Key::Bio(_) => Scheme::Bioconvolving,
            Key::Mace(_) => Scheme::Mace,
        }
    }

    /// `k`: piece count for bioconvolving, tap count for MACE.
    pub fn length(&self) -> usize {
        match self {
            Key::Bio(b) => b.piece_count(),
            Key::Mace(m) => m.taps.len(),
        }
    }

    /// 64-bit FNV-1a of the serialized key line. Not a security primitive.
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        self.to_string()
            .bytes()
            .fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
    }
}

/// Draw `k` split positions uniformly from `[1, l/k - 1]`.
pub fn gen_bio_key(l: usize, k: usize, seed: u64) -> Result<BioKey> {
    check_bio_shape(l, k)?;
    let piece = l / k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = (0..k).map(|_| rng.random_range(1..piece)).collect();
    BioKey::new(l, splits)
}

/// Draw `k` i.i.d. standard normal taps and scale them to unit norm.
pub fn gen_mace_key(k: usize, seed: u64) -> Result<MaceKey> {
    if k < 2 {
        return Err(Error::InvalidParameter("MACE key needs at least 2 taps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let taps: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > 0.0 {
            return MaceKey::new(taps.into_iter().map(|t| t / norm).collect());
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Bio(b) => {
                write!(f, "BIO:{}:{}:", b.segment_length, b.piece_count())?;
                write_list(f, b.splits.iter().map(|r| r.to_string()))
            }
            Key::Mace(m) => {
                write!(f, "MACE:{}:", m.taps.len())?;
                write_list(f, m.taps.iter().map(|t| format!("{t:.16e}")))
            }
        }
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: impl Iterator<Item = String>) -> fmt::Result {
    for (i, item) in items.enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        f.write_str(&item)?;
    }
    Ok(())
}

/// Splits `s` on `sep`, yielding each field with its byte offset.
fn fields(s: &str, sep: char) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    s.split(sep).map(move |part| {
        let start = offset;
        offset += part.len() + sep.len_utf8();
        (start, part)
    })
}

fn key_err(position: usize, message: impl Into<String>) -> Error {
    Error::KeyParse {
        position,
        message: message.into(),
    }
}

fn parse_num<T: FromStr>(pos: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| key_err(pos, format!("invalid {what} '{s}'")))
}

impl FromStr for Key {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let line = line.trim_end_matches(['\n', '\r']);
        let parts: Vec<(usize, &str)> = fields(line, ':').collect();
        match parts.first().map(|p| p.1) {
            Some("BIO") => {
                if parts.len() != 4 {
                    return Err(key_err(0, "expected BIO:<l>:<k>:<splits>"));
                }
                let l: usize = parse_num(parts[1].0, parts[1].1, "segment length")?;
                let k: usize = parse_num(parts[2].0, parts[2].1, "piece count")?;
                let (base, list) = parts[3];
                let splits = fields(list, ',')
                    .map(|(off, s)| parse_num(base + off, s, "split"))
                    .collect::<Result<Vec<usize>>>()?;
                if splits.len() != k {
                    return Err(key_err(base, format!("expected {k} splits, found {}", splits.len())));
                }
                BioKey::new(l, splits)
                    .map(Key::Bio)
                    .map_err(|e| key_err(base, e.to_string()))
            }
            Some("MACE") => {
                if parts.len() != 3 {
                    return Err(key_err(0, "expected MACE:<k>:<taps>"));
                }
                let k: usize = parse_num(parts[1].0, parts[1].1, "tap count")?;
                let (base, list) = parts[2];
                let taps = fields(list, ',')
                    .map(|(off, s)| parse_num(base + off, s, "tap"))
                    .collect::<Result<Vec<f64>>>()?;
                if taps.len() != k {
                    return Err(key_err(base, format!("expected {k} taps, found {}", taps.len())));
                }
                MaceKey::new(taps)
                    .map(Key::Mace)
                    .map_err(|e| key_err(base, e.to_string()))
            }
            _ => Err(key_err(0, "key must start with BIO: or MACE:")),
        }
    }
}

/// Serialize a key to its one-line text form.
pub fn serialize_key(key: &Key) -> String {
    key.to_string()
}

pub fn parse_key(line: &str) -> Result<Key> {
    line.parse()
}
