//! Signal I/O, the synthetic ECG corpus generator and a fallback R-peak
//! detector.
//!
//! Signal files are UTF-8 text with one real value per line and no header.
//! R-peak annotations live next to the signal with the `.rpk` extension, one
//! integer sample index per line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Single-lead ECG recording.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub r_peaks: Option<Vec<usize>>,
    pub subject_id: String,
}

impl EcgRecord {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, subject_id: impl Into<String>) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            r_peaks: None,
            subject_id: subject_id.into(),
        })
    }

    /// Attach R-peak annotations, checking range and strict ordering.
    pub fn with_r_peaks(mut self, peaks: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = peaks.iter().find(|&&p| p >= self.samples.len()) {
            return Err(Error::InvalidParameter(format!(
                "r-peak index {bad} outside record of {} samples",
                self.samples.len()
            )));
        }
        if peaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("r-peaks must be strictly increasing".into()));
        }
        self.r_peaks = Some(peaks);
        Ok(self)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// Annotation path for a signal file: same basename, `.rpk` extension.
pub fn annotation_path(signal: &Path) -> PathBuf {
    signal.with_extension("rpk")
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Load a plain-text signal. `r_peaks` is left unset.
pub fn load_record(path: impl AsRef<Path>, sample_rate_hz: f64, subject_id: &str) -> Result<EcgRecord> {
    let path = path.as_ref();
    let text = read_lines(path)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let token = line.trim();
        let value: f64 = token.parse().map_err(|_| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: format!("not a number: '{token}'"),
        })?;
        samples.push(value);
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 0,
            message: "file contains no samples".into(),
        });
    }
    EcgRecord::new(samples, sample_rate_hz, subject_id)
}

/// Load a signal together with its `.rpk` annotations when that file exists.
pub fn load_record_with_annotations(
    path: impl AsRef<Path>,
    sample_rate_hz: f64,
    subject_id: &str,
) -> Result<EcgRecord> {
    let path = path.as_ref();
    let record = load_record(path, sample_rate_hz, subject_id)?;
    let rpk = annotation_path(path);
    if rpk.exists() {
        let peaks = load_annotations(&rpk)?;
        record.with_r_peaks(peaks)
    } else {
        Ok(record)
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = read_lines(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.trim().parse().map_err(|_| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("not a sample index: '{}'", line.trim()),
            })
        })
        .collect()
}

/// Samples formatted at 17 significant digits, so a save/load/save cycle is
/// byte-identical.
pub fn format_signal(samples: &[f64]) -> String {
    let mut out = String::with_capacity(samples.len() * 24);
    for v in samples {
        writeln!(out, "{v:.16e}").unwrap();
    }
    out
}

pub fn save_record(path: impl AsRef<Path>, record: &EcgRecord) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_signal(&record.samples)).map_err(|e| Error::io(path, e))
}

pub fn save_annotations(path: impl AsRef<Path>, peaks: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in peaks {
        writeln!(out, "{p}").unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Three-Gaussian beat model plus rhythm and noise settings for one subject.
///
/// Index 0 is the P wave, 1 the QRS complex, 2 the T wave. Centers are in
/// seconds relative to the R peak; widths are Gaussian standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubjectParams {
    pub wave_amplitudes: [f64; 3],
    pub wave_widths: [f64; 3],
    pub wave_centers: [f64; 3],
    pub mean_rr_s: f64,
    pub rr_jitter_frac: f64,
    pub noise_std_mv: f64,
}

impl SynthSubjectParams {
    /// Draw a plausible, distinct morphology. The QRS amplitude always
    /// dominates so the R peak is the global extremum of each beat.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, rr_jitter_frac: f64, noise_std_mv: f64) -> Self {
        Self {
            wave_amplitudes: [
                rng.random_range(0.08..0.25),
                rng.random_range(0.8..1.6),
                rng.random_range(0.15..0.45),
            ],
            wave_widths: [
                rng.random_range(0.012..0.03),
                rng.random_range(0.007..0.015),
                rng.random_range(0.03..0.07),
            ],
            wave_centers: [rng.random_range(-0.24..-0.14), 0.0, rng.random_range(0.2..0.32)],
            mean_rr_s: rng.random_range(0.75..1.1),
            rr_jitter_frac,
            noise_std_mv,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.wave_widths.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParameter("wave widths must be positive".into()));
        }
        if !(self.mean_rr_s > 0.0) {
            return Err(Error::InvalidParameter("mean RR interval must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.rr_jitter_frac) {
            return Err(Error::InvalidParameter("rr_jitter_frac must lie in [0, 0.5)".into()));
        }
        if !(self.noise_std_mv >= 0.0) {
            return Err(Error::InvalidParameter("noise std must be nonnegative".into()));
        }
        Ok(())
    }

    /// Noise-free beat value at `t` seconds from the R peak.
    pub fn beat_value(&self, t: f64) -> f64 {
        (0..3)
            .map(|j| {
                let d = (t - self.wave_centers[j]) / self.wave_widths[j];
                self.wave_amplitudes[j] * (-0.5 * d * d).exp()
            })
            .sum()
    }

    /// Half-width in seconds outside which every wave is below 1e-14 of its
    /// amplitude.
    fn support_s(&self) -> f64 {
        (0..3)
            .map(|j| self.wave_centers[j].abs() + 8.0 * self.wave_widths[j])
            .fold(0.0, f64::max)
    }
}

/// Generate `n_beats` Gaussian-bump beats with jittered RR intervals and
/// additive white noise. `r_peaks` holds the true beat centers.
pub fn synth_subject(
    params: &SynthSubjectParams,
    n_beats: usize,
    fs: f64,
    seed: u64,
    subject_id: &str,
) -> Result<EcgRecord> {
    params.validate()?;
    if n_beats == 0 {
        return Err(Error::InvalidParameter("n_beats must be at least 1".into()));
    }
    if !(fs > 0.0) {
        return Err(Error::InvalidParameter("sample rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Beat centers in (fractional) sample units; the first sits on an
    // integer sample one mean RR interval in.
    let rr_samples = params.mean_rr_s * fs;
    let mut centers = Vec::with_capacity(n_beats);
    let mut c = rr_samples.round();
    for i in 0..n_beats {
        if i > 0 {
            let jitter = if params.rr_jitter_frac > 0.0 {
                rng.random_range(-params.rr_jitter_frac..=params.rr_jitter_frac)
            } else {
                0.0
            };
            c += rr_samples * (1.0 + jitter);
        }
        centers.push(c);
    }
    let len = (centers[n_beats - 1] + rr_samples).ceil() as usize + 1;
    let mut samples = vec![0.0; len];

    let support = (params.support_s() * fs).ceil() as isize;
    for &center in &centers {
        let mid = center.round() as isize;
        let lo = (mid - support).max(0) as usize;
        let hi = ((mid + support) as usize).min(len - 1);
        for (n, v) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *v += params.beat_value((n as f64 - center) / fs);
        }
    }

    if params.noise_std_mv > 0.0 {
        let normal = Normal::new(0.0, params.noise_std_mv).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in samples.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    let peaks: Vec<usize> = centers.iter().map(|c| c.round() as usize).collect();
    EcgRecord::new(samples, fs, subject_id)?.with_r_peaks(peaks)
}

/// Deterministic multi-subject corpus; subject `i` is labelled `S{i:03}`.
pub fn synth_corpus(
    n_subjects: usize,
    n_beats: usize,
    fs: f64,
    seed: u64,
    rr_jitter_frac: f64,
    noise_std_mv: f64,
) -> Result<Vec<EcgRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_subjects)
        .map(|i| {
            let params = SynthSubjectParams::random(&mut rng, rr_jitter_frac, noise_std_mv);
            let subject_seed: u64 = rng.random();
            synth_subject(&params, n_beats, fs, subject_seed, &format!("S{i:03}"))
        })
        .collect()
}

/// Derivative-square-integrate R-peak detector with a 200 ms refractory
/// period.
///
/// The squared five-point derivative is smoothed by a centered 150 ms moving
/// window; every run above 30% of the envelope maximum yields one candidate
/// located at the signal maximum inside the run. Candidates closer than the
/// refractory period keep the taller one.
pub fn detect_r_peaks(record: &EcgRecord) -> Result<Vec<usize>> {
    let fs = record.sample_rate_hz;
    let x = &record.samples;
    let window = fs.round() as usize;
    if x.len() < window {
        return Err(Error::SignalTooShort {
            needed: window,
            available: x.len(),
        });
    }
    let n = x.len();

    let mut deriv2 = vec![0.0; n];
    for i in 2..n.saturating_sub(2) {
        let d = (2.0 * x[i + 2] + x[i + 1] - x[i - 1] - 2.0 * x[i - 2]) / 8.0;
        deriv2[i] = d * d;
    }

    let half = ((0.075 * fs).round() as usize).max(1);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + deriv2[i];
    }
    let envelope: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();

    let peak_env = envelope.iter().cloned().fold(0.0, f64::max);
    if !(peak_env > 1e-12) {
        return Ok(Vec::new());
    }
    let threshold = 0.3 * peak_env;

    let refractory = (0.2 * fs).round() as usize;
    let mut peaks: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < n {
        if envelope[i] <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && envelope[i] > threshold {
            i += 1;
        }
        let candidate = (start..i)
            .max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a)))
            .unwrap();
        match peaks.last_mut() {
            Some(last) if candidate - *last < refractory => {
                if x[candidate] > x[*last] {
                    *last = candidate;
                }
            }
            _ => peaks.push(candidate),
        }
    }
    Ok(peaks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_params() -> SynthSubjectParams {
        SynthSubjectParams {
            wave_amplitudes: [0.2, 1.0, 0.2],
            wave_widths: [0.02, 0.01, 0.04],
            wave_centers: [-0.2, 0.0, 0.25],
            mean_rr_s: 0.8,
            rr_jitter_frac: 0.0,
            noise_std_mv: 0.0,
        }
    }

    #[test]
    fn load_reads_values_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sig.txt");
        fs::write(&p, "0.0\n1.0\n0.0").unwrap();
        let r = load_record(&p, 1000.0, "a").unwrap();
        assert_eq!(r.samples, vec![0.0, 1.0, 0.0]);
        assert!(r.r_peaks.is_none());
    }

    #[test]
    fn load_reports_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sig.txt");
        fs::write(&p, "abc\n").unwrap();
        match load_record(&p, 1000.0, "a") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "1.0\n2e-3\nx\n").unwrap();
        assert!(matches!(
            load_record(&p, 1000.0, "a"),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn load_rejects_empty_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.txt");
        fs::write(&p, "").unwrap();
        assert!(load_record(&p, 1000.0, "a").is_err());
        assert!(matches!(
            load_record(dir.path().join("nope.txt"), 1000.0, "a"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let rec = synth_subject(
            &SynthSubjectParams {
                noise_std_mv: 0.03,
                ..simple_params()
            },
            5,
            1000.0,
            7,
            "x",
        )
        .unwrap();
        let p1 = dir.path().join("a.txt");
        let p2 = dir.path().join("b.txt");
        save_record(&p1, &rec).unwrap();
        let back = load_record(&p1, 1000.0, "x").unwrap();
        assert_eq!(back.samples.len(), rec.samples.len());
        assert_eq!(back.samples, rec.samples);
        save_record(&p2, &back).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn annotations_load_alongside_signal() {
        let dir = tempfile::tempdir().unwrap();
        let rec = synth_subject(&simple_params(), 4, 500.0, 1, "x").unwrap();
        let p = dir.path().join("s.txt");
        save_record(&p, &rec).unwrap();
        save_annotations(annotation_path(&p), rec.r_peaks.as_ref().unwrap()).unwrap();
        let back = load_record_with_annotations(&p, 500.0, "x").unwrap();
        assert_eq!(back.r_peaks, rec.r_peaks);
    }

    #[test]
    fn record_invariants_enforced() {
        assert!(EcgRecord::new(vec![0.0], 0.0, "a").is_err());
        let r = EcgRecord::new(vec![0.0; 10], 100.0, "a").unwrap();
        assert!(r.clone().with_r_peaks(vec![3, 3]).is_err());
        assert!(r.clone().with_r_peaks(vec![10]).is_err());
        assert!(r.with_r_peaks(vec![1, 9]).is_ok());
    }

    #[test]
    fn jitter_free_beats_repeat_exactly_one_rr_apart() {
        let params = SynthSubjectParams {
            mean_rr_s: 1.5,
            ..simple_params()
        };
        let rec = synth_subject(&params, 2, 1000.0, 3, "x").unwrap();
        let peaks = rec.r_peaks.clone().unwrap();
        assert_eq!(peaks[1] - peaks[0], 1500);
        for off in 0..400 {
            let a = rec.samples[peaks[0] - 400 + off];
            let b = rec.samples[peaks[1] - 400 + off];
            assert!((a - b).abs() < 1e-12, "offset {off}: {a} vs {b}");
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let params = SynthSubjectParams {
            rr_jitter_frac: 0.05,
            noise_std_mv: 0.02,
            ..simple_params()
        };
        let a = synth_subject(&params, 10, 1000.0, 99, "x").unwrap();
        let b = synth_subject(&params, 10, 1000.0, 99, "x").unwrap();
        assert_eq!(a, b);
        let c = synth_subject(&params, 10, 1000.0, 100, "x").unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn beat_maximum_sits_on_annotation() {
        let params = SynthSubjectParams {
            rr_jitter_frac: 0.1,
            ..simple_params()
        };
        let rec = synth_subject(&params, 12, 1000.0, 5, "x").unwrap();
        for &p in rec.r_peaks.as_ref().unwrap() {
            let lo = p - 300;
            let hi = p + 300;
            let argmax = (lo..hi)
                .max_by(|&a, &b| rec.samples[a].total_cmp(&rec.samples[b]))
                .unwrap();
            assert!(argmax.abs_diff(p) <= 1);
        }
    }

    #[test]
    fn degenerate_width_is_rejected() {
        let mut params = simple_params();
        params.wave_widths[1] = 0.0;
        assert!(synth_subject(&params, 3, 1000.0, 1, "x").is_err());
        assert!(synth_subject(&simple_params(), 0, 1000.0, 1, "x").is_err());
    }

    #[test]
    fn detector_recovers_synthetic_peaks() {
        let params = SynthSubjectParams {
            rr_jitter_frac: 0.08,
            ..simple_params()
        };
        let rec = synth_subject(&params, 30, 1000.0, 11, "x").unwrap();
        let truth = rec.r_peaks.clone().unwrap();
        let found = detect_r_peaks(&rec).unwrap();
        let tol = 10;
        let hits = truth
            .iter()
            .filter(|&&t| found.iter().any(|&f| f.abs_diff(t) <= tol))
            .count();
        assert!(hits as f64 >= 0.95 * truth.len() as f64);
        assert!(found.windows(2).all(|w| w[1] - w[0] >= 200));
    }

    #[test]
    fn detector_on_flat_signal_finds_nothing() {
        let rec = EcgRecord::new(vec![0.0; 3000], 1000.0, "z").unwrap();
        assert!(detect_r_peaks(&rec).unwrap().is_empty());
    }

    #[test]
    fn detector_enforces_refractory_period() {
        let mut samples = vec![0.0; 3000];
        samples[1000] = 1.0;
        samples[1100] = 0.9;
        let rec = EcgRecord::new(samples, 1000.0, "z").unwrap();
        let peaks = detect_r_peaks(&rec).unwrap();
        assert_eq!(peaks, vec![1000]);
    }

    #[test]
    fn detector_rejects_short_record() {
        let rec = EcgRecord::new(vec![0.0; 999], 1000.0, "z").unwrap();
        assert!(detect_r_peaks(&rec).is_err());
    }
}
