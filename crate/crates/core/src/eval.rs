//! Leave-one-out verification experiments: FPR/FNR over a `k_iqr` sweep,
//! the equal-error operating point, and grids over decimation factor and
//! probe size.
//!
//! Each registered subject is enrolled on `n_en` beats drawn without
//! replacement; genuine probes come from that subject's held-out beats and
//! impostor probes from every other subject's pool. All randomness is
//! derived from `(rng_seed, subject, role, trial)`, so the subject loop runs
//! in parallel and still reproduces serial results exactly.

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::decision::{score_probe, ThresholdModel};
use crate::error::{Error, Result};
use crate::ingest::EcgRecord;
use crate::keys::{gen_bio_key, gen_mace_key, Key};
use crate::mace::Weighting;
use crate::preprocess::{downsample_record, segment_beats, segment_length, BeatSegment};
use crate::store::build_entry_with;
use crate::Scheme;

/// What an impostor presents alongside their own beats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttackModel {
    /// The impostor holds the registered subject's key.
    #[default]
    GenuineKey,
    /// The impostor presents a fresh random key each trial.
    RandomKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub n_trials_per_subject: usize,
    pub n_en: usize,
    pub n_v: usize,
    pub k_iqr_grid: Vec<f64>,
    pub rng_seed: u64,
    pub attack: AttackModel,
    pub bio_k: usize,
    pub mace_k: usize,
    pub weighting: Weighting,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Bioconvolving,
            n_trials_per_subject: 10,
            n_en: 15,
            n_v: 1,
            k_iqr_grid: linear_grid(10.0, 0.1),
            rng_seed: 0,
            attack: AttackModel::GenuineKey,
            bio_k: 4,
            mace_k: 16,
            weighting: Weighting::MeanSpectrum,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_en < 2 {
            return Err(Error::InvalidParameter("n_en must be at least 2".into()));
        }
        if self.n_v == 0 || self.n_v > self.n_en {
            return Err(Error::InvalidParameter(format!(
                "n_v = {} must lie in [1, n_en = {}]",
                self.n_v, self.n_en
            )));
        }
        if self.n_trials_per_subject == 0 {
            return Err(Error::InvalidParameter("need at least one trial per subject".into()));
        }
        check_grid(&self.k_iqr_grid)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("k_iqr grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("k_iqr grid must be strictly ascending".into()));
    }
    Ok(())
}

/// `0, step, 2*step, ..., max` computed as `i * max / n` so grid points
/// print cleanly.
pub fn linear_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|i| i as f64 * max / n as f64).collect()
}

/// Beats available for one subject.
#[derive(Debug, Clone)]
pub struct SubjectPool {
    pub subject_id: String,
    pub beats: Vec<BeatSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpostorTrial {
    /// Index of the impostor in the pool list.
    pub impostor: usize,
    pub trial: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectScores {
    pub subject_id: String,
    /// Fence model from enrollment; re-evaluated at each `k_iqr`.
    pub threshold: ThresholdModel,
    pub genuine: Vec<f64>,
    pub impostor: Vec<ImpostorTrial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialScores {
    pub subjects: Vec<SubjectScores>,
}

impl TrialScores {
    pub fn genuine_count(&self) -> usize {
        self.subjects.iter().map(|s| s.genuine.len()).sum()
    }

    pub fn impostor_count(&self) -> usize {
        self.subjects.iter().map(|s| s.impostor.len()).sum()
    }

    /// Dump as `subject_id,trial,role,score`. Impostor trials are numbered
    /// `impostor_index * n_trials + trial`.
    pub fn write_csv<W: Write>(&self, out: W, n_trials: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subject_id", "trial", "role", "score"])?;
        for s in &self.subjects {
            for (t, g) in s.genuine.iter().enumerate() {
                w.write_record([s.subject_id.as_str(), &t.to_string(), "genuine", &g.to_string()])?;
            }
            for imp in &s.impostor {
                let idx = imp.impostor * n_trials + imp.trial;
                w.write_record([
                    s.subject_id.as_str(),
                    &idx.to_string(),
                    "impostor",
                    &imp.score.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<scores>", e))?;
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent RNG stream for one unit of work.
fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mixed = parts.iter().fold(splitmix(seed), |h, &p| splitmix(h ^ splitmix(p)));
    ChaCha8Rng::seed_from_u64(mixed)
}

const ROLE_ENROLL: u64 = 0;
const ROLE_KEY: u64 = 1;
const ROLE_GENUINE: u64 = 2;
const ROLE_IMPOSTOR: u64 = 3;
const ROLE_ATTACK_KEY: u64 = 4;

pub fn make_key(scheme: Scheme, segment_len: usize, config: &ExperimentConfig, seed: u64) -> Result<Key> {
    Ok(match scheme {
        Scheme::Bioconvolving => Key::Bio(gen_bio_key(segment_len, config.bio_k, seed)?),
        Scheme::Mace => Key::Mace(gen_mace_key(config.mace_k, seed)?),
    })
}

fn draw(pool: &[BeatSegment], indices: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<BeatSegment> {
    sample(rng, indices.len(), n)
        .into_iter()
        .map(|i| pool[indices[i]].clone())
        .collect()
}

/// Score every genuine and impostor trial for every registered subject.
pub fn run_trials(pools: &[SubjectPool], config: &ExperimentConfig) -> Result<TrialScores> {
    config.validate()?;
    if pools.len() < 2 {
        return Err(Error::InvalidParameter("need at least two subjects".into()));
    }
    let needed = config.n_en + config.n_v;
    for p in pools {
        if p.beats.len() < needed {
            return Err(Error::InsufficientBeats {
                subject_id: p.subject_id.clone(),
                needed,
                available: p.beats.len(),
            });
        }
    }
    let l = pools[0].beats[0].len();
    if let Some(bad) = pools.iter().flat_map(|p| &p.beats).find(|b| b.len() != l) {
        return Err(Error::LengthMismatch {
            expected: l,
            found: bad.len(),
        });
    }

    let subjects = (0..pools.len())
        .into_par_iter()
        .map(|s| score_subject(pools, s, l, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialScores { subjects })
}

fn score_subject(pools: &[SubjectPool], s: usize, l: usize, config: &ExperimentConfig) -> Result<SubjectScores> {
    let seed = config.rng_seed;
    let pool = &pools[s];
    let all: Vec<usize> = (0..pool.beats.len()).collect();

    let mut rng = stream(seed, &[s as u64, ROLE_ENROLL]);
    let mut order = all.clone();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let (enroll_idx, held_out) = order.split_at(config.n_en);
    let enroll: Vec<BeatSegment> = enroll_idx.iter().map(|&i| pool.beats[i].clone()).collect();

    let key_seed: u64 = stream(seed, &[s as u64, ROLE_KEY]).random();
    let key = make_key(config.scheme, l, config, key_seed)?;
    let entry = build_entry_with(&pool.subject_id, &enroll, &key, 0.0, config.weighting)?;

    let genuine = (0..config.n_trials_per_subject)
        .map(|t| {
            let mut rng = stream(seed, &[s as u64, ROLE_GENUINE, t as u64]);
            let probe = draw(&pool.beats, held_out, config.n_v, &mut rng);
            score_probe(&probe, &key, &entry.credential).map(|m| m.value())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut impostor = Vec::with_capacity((pools.len() - 1) * config.n_trials_per_subject);
    for (i, other) in pools.iter().enumerate() {
        if i == s {
            continue;
        }
        let other_idx: Vec<usize> = (0..other.beats.len()).collect();
        for t in 0..config.n_trials_per_subject {
            let mut rng = stream(seed, &[s as u64, ROLE_IMPOSTOR, i as u64, t as u64]);
            let probe = draw(&other.beats, &other_idx, config.n_v, &mut rng);
            let presented = match config.attack {
                AttackModel::GenuineKey => key.clone(),
                AttackModel::RandomKey => {
                    let k: u64 = stream(seed, &[s as u64, ROLE_ATTACK_KEY, i as u64, t as u64]).random();
                    make_key(config.scheme, l, config, k)?
                }
            };
            let score = score_probe(&probe, &presented, &entry.credential)?.value();
            impostor.push(ImpostorTrial {
                impostor: i,
                trial: t,
                score,
            });
        }
    }

    Ok(SubjectScores {
        subject_id: pool.subject_id.clone(),
        threshold: entry.threshold,
        genuine,
        impostor,
    })
}

/// Error rates at one fence parameter, with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub k_iqr: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub false_accepts: usize,
    pub impostor_trials: usize,
    pub false_rejects: usize,
    pub genuine_trials: usize,
}

/// FPR and FNR with every subject's fence recomputed at `k_iqr`. A trial
/// is accepted iff its score is strictly below the subject's threshold.
pub fn rates_at(scores: &TrialScores, k_iqr: f64) -> RatePoint {
    let (mut fa, mut ni, mut fr, mut ng) = (0, 0, 0, 0);
    for s in &scores.subjects {
        let t = s.threshold.threshold_at(k_iqr);
        fr += s.genuine.iter().filter(|&&g| !(g < t)).count();
        ng += s.genuine.len();
        fa += s.impostor.iter().filter(|imp| imp.score < t).count();
        ni += s.impostor.len();
    }
    RatePoint {
        k_iqr,
        fpr: ratio(fa, ni),
        fnr: ratio(fr, ng),
        false_accepts: fa,
        impostor_trials: ni,
        false_rejects: fr,
        genuine_trials: ng,
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn rate_curve(scores: &TrialScores, grid: &[f64]) -> Vec<RatePoint> {
    grid.iter().map(|&k| rates_at(scores, k)).collect()
}

/// Equal-error operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerPoint {
    pub eer: f64,
    pub k_iqr: f64,
}

pub fn find_eer(scores: &TrialScores, grid: &[f64]) -> Result<EerPoint> {
    check_grid(grid)?;
    eer_from_curve(&rate_curve(scores, grid))
}

/// First grid point with `fpr == fnr`, or the linear crossing between the
/// first adjacent pair where `fpr - fnr` changes sign.
pub fn eer_from_curve(curve: &[RatePoint]) -> Result<EerPoint> {
    let max_k = curve.last().map_or(0.0, |p| p.k_iqr);
    for (i, p) in curve.iter().enumerate() {
        let d0 = p.fpr - p.fnr;
        if d0 == 0.0 {
            return Ok(EerPoint {
                eer: p.fpr,
                k_iqr: p.k_iqr,
            });
        }
        if let Some(q) = curve.get(i + 1) {
            let d1 = q.fpr - q.fnr;
            if d1 != 0.0 && (d0 < 0.0) != (d1 < 0.0) {
                let t = d0 / (d0 - d1);
                return Ok(EerPoint {
                    eer: p.fpr + t * (q.fpr - p.fpr),
                    k_iqr: p.k_iqr + t * (q.k_iqr - p.k_iqr),
                });
            }
        }
    }
    Err(Error::NoEerCrossing { max_k })
}

/// True when FPR never decreases and FNR never increases along the curve.
pub fn is_monotone(curve: &[RatePoint]) -> bool {
    curve.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].fnr <= w[0].fnr)
}

/// Cross-product experiment over schemes, decimation factors and probe
/// sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub schemes: Vec<Scheme>,
    pub downsample_factors: Vec<usize>,
    pub n_v_values: Vec<usize>,
    pub segment_duration_s: f64,
    /// Shared settings; `scheme` and `n_v` are overridden per cell.
    pub base: ExperimentConfig,
    /// How many times the grid may be doubled in extent when no crossing is
    /// found.
    pub max_grid_doublings: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::Bioconvolving, Scheme::Mace],
            downsample_factors: vec![1, 2, 4, 8],
            n_v_values: vec![1, 3, 5, 10],
            segment_duration_s: 0.8,
            base: ExperimentConfig::default(),
            max_grid_doublings: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub scheme: Scheme,
    pub downsample_factor: usize,
    pub fs_hz: f64,
    pub n_en: usize,
    pub n_v: usize,
    pub curve: Vec<RatePoint>,
    pub eer: Option<EerPoint>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cells: Vec<CellResult>,
}

impl EvalReport {
    pub fn cell(&self, scheme: Scheme, fs_hz: f64, n_v: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.scheme == scheme && c.fs_hz == fs_hz && c.n_v == n_v)
    }

    /// `scheme,fs_hz,n_en,n_v,k_iqr,fpr,fnr`, one row per grid point.
    pub fn write_rates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scheme", "fs_hz", "n_en", "n_v", "k_iqr", "fpr", "fnr"])?;
        for c in &self.cells {
            for p in &c.curve {
                w.write_record([
                    c.scheme.short_name().to_string(),
                    c.fs_hz.to_string(),
                    c.n_en.to_string(),
                    c.n_v.to_string(),
                    p.k_iqr.to_string(),
                    p.fpr.to_string(),
                    p.fnr.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }

    /// `scheme,fs_hz,n_en,n_v,eer,k_iqr_star`; failed cells report `NaN`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scheme", "fs_hz", "n_en", "n_v", "eer", "k_iqr_star"])?;
        for c in &self.cells {
            let (eer, k) = c.eer.map_or(("NaN".to_string(), "NaN".to_string()), |e| {
                (e.eer.to_string(), e.k_iqr.to_string())
            });
            w.write_record([
                c.scheme.short_name().to_string(),
                c.fs_hz.to_string(),
                c.n_en.to_string(),
                c.n_v.to_string(),
                eer,
                k,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<summary>", e))?;
        Ok(())
    }
}

/// Segment every cleaned record after decimation by `r`.
pub fn pools_at(records: &[EcgRecord], r: usize, duration_s: f64) -> Result<Vec<SubjectPool>> {
    records
        .iter()
        .map(|rec| {
            let d = downsample_record(rec, r)?;
            Ok(SubjectPool {
                subject_id: rec.subject_id.clone(),
                beats: segment_beats(&d, duration_s)?,
            })
        })
        .collect()
}

/// Trials and EER for one cell. When the grid holds no crossing it is
/// doubled in extent toward the side where the rates still differ: upward
/// while FNR exceeds FPR at the largest `k_iqr`, downward (negative fences)
/// while FPR exceeds FNR at the smallest.
pub fn evaluate_cell(
    pools: &[SubjectPool],
    config: &ExperimentConfig,
    max_doublings: usize,
) -> Result<(Vec<RatePoint>, EerPoint)> {
    let scores = run_trials(pools, config)?;
    let mut grid = config.k_iqr_grid.clone();
    let mut attempt = 0;
    loop {
        let curve = rate_curve(&scores, &grid);
        if !is_monotone(&curve) {
            return Err(Error::InvalidParameter("rate curve is not monotone in k_iqr".into()));
        }
        match eer_from_curve(&curve) {
            Ok(eer) => return Ok((curve, eer)),
            Err(e) if attempt == max_doublings => return Err(e),
            Err(_) => {
                let first = curve[0];
                grid = extended(&grid, !(first.fpr > first.fnr));
                attempt += 1;
            }
        }
    }
}

/// Twice the extent at the same spacing. Points are computed as
/// `(lo * n + i * (hi - lo)) / n` so decimal grids stay clean.
fn extended(grid: &[f64], upward: bool) -> Vec<f64> {
    let (first, last) = (grid[0], *grid.last().unwrap());
    let span = (last - first).max(1.0);
    let (lo, hi) = if upward {
        (first, first + 2.0 * span)
    } else {
        (last - 2.0 * span, last)
    };
    let n = (2 * (grid.len() - 1)).max(1);
    (0..=n)
        .map(|i| (lo * n as f64 + i as f64 * (hi - lo)) / n as f64)
        .collect()
}

/// Run every cell of the grid. `records` must already be cleaned (baseline
/// and notch) and carry R peaks. Cell failures are recorded in the report
/// rather than aborting the run.
pub fn run_grid(records: &[EcgRecord], config: &GridConfig) -> Result<EvalReport> {
    config.base.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to evaluate"));
    }
    let fs = records[0].sample_rate_hz;
    if records.iter().any(|r| r.sample_rate_hz != fs) {
        return Err(Error::InvalidParameter("all records must share a sample rate".into()));
    }
    let mut per_factor = Vec::with_capacity(config.downsample_factors.len());
    for &r in &config.downsample_factors {
        per_factor.push((r, pools_at(records, r, config.segment_duration_s)));
    }

    let mut cells = Vec::new();
    for &scheme in &config.schemes {
        for (r, pools) in &per_factor {
            let fs_hz = fs / *r as f64;
            for &n_v in &config.n_v_values {
                let cfg = ExperimentConfig {
                    scheme,
                    n_v,
                    ..config.base.clone()
                };
                let outcome = pools
                    .as_ref()
                    .map_err(|e| Error::InvalidParameter(e.to_string()))
                    .and_then(|p| evaluate_cell(p, &cfg, config.max_grid_doublings));
                let (curve, eer, error) = match outcome {
                    Ok((curve, eer)) => (curve, Some(eer), None),
                    Err(e) => (Vec::new(), None, Some(e.to_string())),
                };
                cells.push(CellResult {
                    scheme,
                    downsample_factor: *r,
                    fs_hz,
                    n_en: cfg.n_en,
                    n_v,
                    curve,
                    eer,
                    error,
                });
            }
        }
    }
    Ok(EvalReport { cells })
}

/// Segment length for a decimated rate, exposed for callers that size keys.
pub fn decimated_segment_length(duration_s: f64, fs: f64, r: usize) -> usize {
    segment_length(duration_s, fs / r as f64)
}
