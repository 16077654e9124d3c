//! Artifact removal, beat segmentation and anti-aliased decimation.

mod chebyshev;
mod median;
mod notch;

pub use chebyshev::cheby1_lowpass;
pub use median::median_filter;
pub use notch::design_notch;

use crate::dsp::Sos;
use crate::error::{Error, Result};
use crate::ingest::{detect_r_peaks, EcgRecord};

/// Order of the anti-aliasing low-pass used before decimation.
pub const ANTI_ALIAS_ORDER: usize = 8;
/// Passband ripple of the anti-aliasing low-pass, in dB.
pub const ANTI_ALIAS_RIPPLE_DB: f64 = 0.05;

/// A fixed-length window centered on one R peak.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSegment {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub duration_s: f64,
}

impl BeatSegment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaled(&self, c: f64) -> BeatSegment {
        BeatSegment {
            samples: self.samples.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// Number of samples in a beat window: `round(duration_s * fs)`.
pub fn segment_length(duration_s: f64, fs: f64) -> usize {
    (duration_s * fs).round() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub median_win1_ms: f64,
    pub median_win2_ms: f64,
    pub notch_freq_hz: f64,
    pub notch_bandwidth_hz: f64,
    pub segment_duration_s: f64,
    pub downsample_factor: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            median_win1_ms: 200.0,
            median_win2_ms: 600.0,
            notch_freq_hz: 50.0,
            notch_bandwidth_hz: 1.0,
            segment_duration_s: 0.8,
            downsample_factor: 1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if !(self.median_win1_ms > 0.0 && self.median_win2_ms > self.median_win1_ms) {
            return Err(Error::InvalidParameter(
                "median windows must be positive with win2 > win1".into(),
            ));
        }
        if self.downsample_factor == 0 {
            return Err(Error::InvalidParameter("downsample factor must be at least 1".into()));
        }
        let nyquist = fs / self.downsample_factor as f64 / 2.0;
        if !(self.notch_freq_hz > 0.0 && self.notch_freq_hz < nyquist) {
            return Err(Error::InvalidParameter(format!(
                "notch frequency {} Hz must stay below the decimated Nyquist {nyquist} Hz",
                self.notch_freq_hz
            )));
        }
        if !(self.segment_duration_s > 0.0) {
            return Err(Error::InvalidParameter("segment duration must be positive".into()));
        }
        Ok(())
    }
}

fn window_half(ms: f64, fs: f64) -> usize {
    ((ms / 1000.0 * fs).round() as usize) / 2
}

/// Baseline removal with the default 200 ms / 600 ms median cascade.
pub fn remove_baseline(signal: &[f64], fs: f64) -> Result<Vec<f64>> {
    remove_baseline_with(signal, fs, 200.0, 600.0)
}

/// Subtract the baseline estimated by a median filter of `win1_ms`
/// followed by a median filter of `win2_ms` applied to the first output.
pub fn remove_baseline_with(signal: &[f64], fs: f64, win1_ms: f64, win2_ms: f64) -> Result<Vec<f64>> {
    let long = (win2_ms / 1000.0 * fs).round() as usize;
    if signal.len() <= long {
        return Err(Error::SignalTooShort {
            needed: long + 1,
            available: signal.len(),
        });
    }
    let first = median_filter(signal, window_half(win1_ms, fs));
    let baseline = median_filter(&first, window_half(win2_ms, fs));
    Ok(signal.iter().zip(&baseline).map(|(x, b)| x - b).collect())
}

/// Causal second-order IIR notch at `f0` Hz.
pub fn notch_filter(signal: &[f64], fs: f64, f0: f64, bandwidth: f64) -> Result<Vec<f64>> {
    let section = design_notch(fs, f0, bandwidth)?;
    Ok(Sos {
        sections: vec![section],
    }
    .filter(signal))
}

/// Anti-aliasing low-pass for decimation by `r`: order-8 Chebyshev Type-I,
/// 0.05 dB ripple, edge at `0.8*pi/r` rad/sample.
pub fn anti_alias_filter(r: usize) -> Result<Sos> {
    cheby1_lowpass(ANTI_ALIAS_ORDER, ANTI_ALIAS_RIPPLE_DB, 0.8 / r as f64)
}

/// Zero-phase anti-aliased decimation keeping samples `0, r, 2r, ...`.
/// Returns the decimated signal and the new sample rate.
pub fn downsample(signal: &[f64], fs: f64, r: usize) -> Result<(Vec<f64>, f64)> {
    if r == 0 {
        return Err(Error::InvalidParameter("downsample factor must be at least 1".into()));
    }
    if r == 1 {
        return Ok((signal.to_vec(), fs));
    }
    let filtered = anti_alias_filter(r)?.filtfilt(signal);
    let out = filtered.into_iter().step_by(r).collect();
    Ok((out, fs / r as f64))
}

/// Decimate a record and map its R peaks to `round(p / r)`.
pub fn downsample_record(record: &EcgRecord, r: usize) -> Result<EcgRecord> {
    let (samples, fs) = downsample(&record.samples, record.sample_rate_hz, r)?;
    let n = samples.len();
    let mut out = EcgRecord::new(samples, fs, record.subject_id.clone())?;
    if let Some(peaks) = &record.r_peaks {
        let mut scaled: Vec<usize> = peaks
            .iter()
            .map(|&p| ((p as f64 / r as f64).round() as usize).min(n - 1))
            .collect();
        scaled.dedup();
        out = out.with_r_peaks(scaled)?;
    }
    Ok(out)
}

/// Cut one window of `round(duration_s * fs)` samples per R peak, placing
/// `l/2` samples before the peak. Peaks whose window would cross either end
/// of the record are skipped.
pub fn segment_beats(record: &EcgRecord, duration_s: f64) -> Result<Vec<BeatSegment>> {
    let peaks = match &record.r_peaks {
        Some(p) if !p.is_empty() => p,
        _ => return Err(Error::EmptyInput("record has no R-peak annotations")),
    };
    let l = segment_length(duration_s, record.sample_rate_hz);
    if l == 0 {
        return Err(Error::InvalidParameter("segment length rounds to zero samples".into()));
    }
    let before = l / 2;
    let n = record.samples.len();
    let beats: Vec<BeatSegment> = peaks
        .iter()
        .filter(|&&p| p >= before && p - before + l <= n)
        .map(|&p| BeatSegment {
            samples: record.samples[p - before..p - before + l].to_vec(),
            fs: record.sample_rate_hz,
            duration_s,
        })
        .collect();
    if beats.is_empty() {
        return Err(Error::NoValidBeats { skipped: peaks.len() });
    }
    Ok(beats)
}

/// Baseline removal then power-line notch at the record's native rate. R
/// peaks are carried over, or detected on the cleaned signal when absent.
pub fn clean_record(record: &EcgRecord, config: &PreprocessConfig) -> Result<EcgRecord> {
    let fs = record.sample_rate_hz;
    config.validate(fs)?;
    let debased = remove_baseline_with(&record.samples, fs, config.median_win1_ms, config.median_win2_ms)?;
    let clean = notch_filter(&debased, fs, config.notch_freq_hz, config.notch_bandwidth_hz)?;
    let mut out = EcgRecord::new(clean, fs, record.subject_id.clone())?;
    let peaks = match &record.r_peaks {
        Some(p) => p.clone(),
        None => detect_r_peaks(&out)?,
    };
    out = out.with_r_peaks(peaks)?;
    Ok(out)
}

/// Full pipeline from a raw record to beat segments: clean, decimate by
/// `config.downsample_factor` with peak rescaling, then segment.
pub fn prepare_beats(record: &EcgRecord, config: &PreprocessConfig) -> Result<Vec<BeatSegment>> {
    let clean = clean_record(record, config)?;
    let decimated = downsample_record(&clean, config.downsample_factor)?;
    segment_beats(&decimated, config.segment_duration_s)
}
