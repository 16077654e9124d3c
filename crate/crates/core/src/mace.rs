//! Keyed encryption of beats and minimum average correlation energy (MACE)
//! filter synthesis.
//!
//! Conventions fixed for stored-spectrum compatibility: the forward DFT is
//! unnormalized, the inverse carries `1/L`, spectra are stored unshifted and
//! bin 0 is the correlation origin.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dsp::{convolve, fft_real, ifft_in_place};
use crate::error::{Error, Result};
use crate::keys::MaceKey;
use crate::preprocess::BeatSegment;

/// Relative floor applied to the diagonal weighting before inversion.
pub const D_FLOOR: f64 = 1e-12;
/// Largest accepted condition estimate of the `N x N` correlation matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Largest accepted deviation of any `m_i^H h` from 1 after synthesis.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// DFT of a beat convolved with the key taps, length `l + k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedSegment {
    pub spectrum: Vec<Complex64>,
}

impl EncryptedSegment {
    pub fn len(&self) -> usize {
        self.spectrum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectrum.is_empty()
    }

    /// `m^H h`
    pub fn inner(&self, h: &MaceFilter) -> Complex64 {
        self.spectrum
            .iter()
            .zip(&h.coefficients)
            .map(|(m, h)| m.conj() * h)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaceFilter {
    pub coefficients: Vec<Complex64>,
}

impl MaceFilter {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// Magnitude of the correlation plane, bin 0 = origin.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpectrum {
    pub values: Vec<f64>,
}

impl CorrelationSpectrum {
    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Origin value divided by the largest off-origin value.
    pub fn origin_dominance(&self) -> f64 {
        let side = self.values.iter().skip(1).cloned().fold(0.0, f64::max);
        match self.values.first() {
            Some(&origin) if side > 0.0 => origin / side,
            Some(&origin) if origin > 0.0 => f64::INFINITY,
            _ => 0.0,
        }
    }

    /// A single sharp peak at the origin at least `ratio` times any other.
    pub fn has_origin_peak(&self, ratio: f64) -> bool {
        self.argmax() == 0 && self.origin_dominance() >= ratio
    }
}

/// Diagonal weighting for filter synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `|mean_i m_i|^2` per bin.
    #[default]
    MeanSpectrum,
    /// Classical average power `mean_i |m_i|^2` per bin.
    AveragePower,
}

pub fn encrypt_samples(samples: &[f64], key: &MaceKey) -> EncryptedSegment {
    EncryptedSegment {
        spectrum: fft_real(&convolve(samples, key.taps())),
    }
}

/// Convolve with the key taps, then take the DFT.
pub fn encrypt_segment(beat: &BeatSegment, key: &MaceKey) -> EncryptedSegment {
    encrypt_samples(&beat.samples, key)
}

/// Element-wise mean of the encryptions of each beat.
pub fn mean_encrypted(beats: &[BeatSegment], key: &MaceKey) -> Result<EncryptedSegment> {
    let first = beats.first().ok_or(Error::EmptyInput("no beats to encrypt"))?;
    let l = first.len();
    let mut acc = vec![Complex64::new(0.0, 0.0); l + key.taps().len() - 1];
    for beat in beats {
        if beat.len() != l {
            return Err(Error::LengthMismatch {
                expected: l,
                found: beat.len(),
            });
        }
        for (a, m) in acc.iter_mut().zip(encrypt_segment(beat, key).spectrum) {
            *a += m;
        }
    }
    let n = beats.len() as f64;
    Ok(EncryptedSegment {
        spectrum: acc.into_iter().map(|a| a / n).collect(),
    })
}

pub fn build_mace_filter(encrypted: &[EncryptedSegment]) -> Result<MaceFilter> {
    build_mace_filter_with(encrypted, Weighting::default())
}

/// `h = D^-1 M (M^H D^-1 M)^-1 u` with `u` all ones.
///
/// `D` is floored at `D_FLOOR` times its largest entry. The `N x N` system
/// is solved by Cholesky factorization with one step of iterative
/// refinement; it is rejected when its condition estimate exceeds
/// `MAX_CONDITION` or when the synthesized filter misses any constraint by
/// more than `CONSTRAINT_TOL`.
pub fn build_mace_filter_with(encrypted: &[EncryptedSegment], weighting: Weighting) -> Result<MaceFilter> {
    let first = encrypted.first().ok_or(Error::EmptyInput("no encrypted segments"))?;
    let len = first.len();
    if let Some(bad) = encrypted.iter().find(|m| m.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            found: bad.len(),
        });
    }
    let n = encrypted.len();
    let inv_n = 1.0 / n as f64;

    let mut weights: Vec<f64> = (0..len)
        .map(|j| match weighting {
            Weighting::MeanSpectrum => {
                let mean: Complex64 = encrypted.iter().map(|m| m.spectrum[j]).sum::<Complex64>() * inv_n;
                mean.norm_sqr()
            }
            Weighting::AveragePower => encrypted.iter().map(|m| m.spectrum[j].norm_sqr()).sum::<f64>() * inv_n,
        })
        .collect();
    let peak = weights.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    let floor = D_FLOOR * peak;
    for w in weights.iter_mut() {
        *w = w.max(floor);
    }

    // Y = D^-1 M, G = M^H Y.
    let y: Vec<Vec<Complex64>> = encrypted
        .iter()
        .map(|m| m.spectrum.iter().zip(&weights).map(|(v, w)| v / w).collect())
        .collect();
    let gram = DMatrix::from_fn(n, n, |a, b| {
        encrypted[a]
            .spectrum
            .iter()
            .zip(&y[b])
            .map(|(ma, yb)| ma.conj() * yb)
            .sum::<Complex64>()
    });

    let eig = gram.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let chol = gram.clone().cholesky().ok_or(Error::IllConditioned { condition })?;
    let u = DVector::from_element(n, Complex64::new(1.0, 0.0));
    let mut alpha = chol.solve(&u);
    let residual = &u - &gram * &alpha;
    alpha += chol.solve(&residual);

    let mut coefficients = vec![Complex64::new(0.0, 0.0); len];
    for (yb, a) in y.iter().zip(alpha.iter()) {
        for (c, v) in coefficients.iter_mut().zip(yb) {
            *c += v * a;
        }
    }
    let filter = MaceFilter { coefficients };
    if constraint_error(&filter, encrypted) > CONSTRAINT_TOL {
        return Err(Error::IllConditioned { condition });
    }
    Ok(filter)
}

/// `max_i |m_i^H h - 1|`
pub fn constraint_error(h: &MaceFilter, encrypted: &[EncryptedSegment]) -> f64 {
    encrypted.iter().map(|m| (m.inner(h) - 1.0).norm()).fold(0.0, f64::max)
}

/// `|IDFT(m .* conj(h))|`
pub fn correlation_spectrum(h: &MaceFilter, m: &EncryptedSegment) -> Result<CorrelationSpectrum> {
    if h.len() != m.len() {
        return Err(Error::LengthMismatch {
            expected: h.len(),
            found: m.len(),
        });
    }
    let mut plane: Vec<Complex64> = m
        .spectrum
        .iter()
        .zip(&h.coefficients)
        .map(|(m, h)| m * h.conj())
        .collect();
    ifft_in_place(&mut plane);
    Ok(CorrelationSpectrum {
        values: plane.iter().map(|c| c.norm()).collect(),
    })
}
