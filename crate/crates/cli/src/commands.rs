use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cancelauth::decision::verify as verify_probe;
use cancelauth::eval::{pools_at, run_grid, run_trials, AttackModel, ExperimentConfig, GridConfig};
use cancelauth::ingest::{annotation_path, load_record_with_annotations, save_annotations, save_record, synth_corpus};
use cancelauth::keys::{gen_bio_key, gen_mace_key, parse_key, serialize_key};
use cancelauth::mace::Weighting;
use cancelauth::preprocess::{clean_record, downsample_record, prepare_beats};
use cancelauth::store::build_entry;
use cancelauth::{BeatSegment, Key, PreprocessConfig, RejectReason, Scheme, Store, Verdict};

use crate::{
    AttackArg, EnrollArgs, EvalSchemeArg, EvaluateArgs, Outcome, PreprocessArgs, PreprocessFlags, RevokeArgs,
    SessionArgs, SynthArgs, VerifyArgs, WeightingArg,
};

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn preprocess_config(flags: &PreprocessFlags, downsample: usize) -> PreprocessConfig {
    PreprocessConfig {
        median_win1_ms: flags.median1_ms,
        median_win2_ms: flags.median2_ms,
        notch_freq_hz: flags.notch_hz,
        notch_bandwidth_hz: flags.notch_bw_hz,
        segment_duration_s: flags.segment_s,
        downsample_factor: downsample,
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "subject".into(), |s| s.to_string_lossy().into_owned())
}

/// `n` consecutive beats of the session starting at `--offset-beats`.
fn session_beats(session: &SessionArgs, id: &str, n: usize) -> Result<Vec<BeatSegment>> {
    let record = load_record_with_annotations(&session.signal, session.pre.fs, id)?;
    let beats = prepare_beats(&record, &preprocess_config(&session.pre, session.downsample))
        .with_context(|| format!("preparing beats from {}", session.signal.display()))?;
    let end = session.offset_beats + n;
    if beats.len() < end {
        bail!(
            "{} yields {} beats; {n} are needed after skipping {}",
            session.signal.display(),
            beats.len(),
            session.offset_beats
        );
    }
    Ok(beats[session.offset_beats..end].to_vec())
}

fn new_key(args: &EnrollArgs, segment_len: usize) -> Result<Key> {
    let seed = resolve_seed(args.seed);
    Ok(match Scheme::from(args.scheme) {
        Scheme::Bioconvolving => Key::Bio(gen_bio_key(segment_len, args.bio_k, seed)?),
        Scheme::Mace => Key::Mace(gen_mace_key(args.mace_k, seed)?),
    })
}

fn write_key(path: &Path, key: &Key) -> Result<()> {
    fs::write(path, format!("{}\n", serialize_key(key))).with_context(|| format!("writing key to {}", path.display()))
}

pub fn synth(args: &SynthArgs) -> Result<Outcome> {
    let seed = resolve_seed(args.seed);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let records = synth_corpus(args.subjects, args.beats, args.fs, seed, args.jitter, args.noise_mv)?;
    for (i, record) in records.iter().enumerate() {
        let path = args.out.join(format!("subject_{i:03}.txt"));
        save_record(&path, record)?;
        save_annotations(annotation_path(&path), record.r_peaks.as_deref().unwrap_or_default())?;
    }
    println!("wrote {} subjects to {}", records.len(), args.out.display());
    Ok(Outcome::Success)
}

pub fn preprocess(args: &PreprocessArgs) -> Result<Outcome> {
    let record = load_record_with_annotations(&args.signal, args.pre.fs, &stem(&args.signal))?;
    let cfg = preprocess_config(&args.pre, args.downsample);
    let clean = downsample_record(&clean_record(&record, &cfg)?, args.downsample)?;
    save_record(&args.out, &clean)?;
    let peaks = clean.r_peaks.as_deref().unwrap_or_default();
    save_annotations(annotation_path(&args.out), peaks)?;
    println!(
        "wrote {} ({} samples at {} Hz, {} R peaks)",
        args.out.display(),
        clean.samples.len(),
        clean.sample_rate_hz,
        peaks.len()
    );
    Ok(Outcome::Success)
}

pub fn enroll(args: &EnrollArgs) -> Result<Outcome> {
    let scheme = Scheme::from(args.scheme);
    let mut store = Store::open(&args.store)?;
    if store.get_entry(&args.id, scheme).is_ok() {
        bail!("{} is already enrolled under {scheme}; use revoke to re-key", args.id);
    }
    let beats = session_beats(&args.session, &args.id, args.n_en)?;
    let key = new_key(args, beats[0].len())?;
    let entry = build_entry(&args.id, &beats, &key, args.kiqr)?;
    write_key(&args.key_out, &key)?;
    if let Err(e) = store.insert(entry) {
        let _ = fs::remove_file(&args.key_out);
        return Err(e.into());
    }
    let entry = store.get_entry(&args.id, scheme)?;
    println!(
        "enrolled {} ({scheme}) t_mse={:.10e} key={}",
        args.id,
        entry.threshold.t_mse,
        args.key_out.display()
    );
    Ok(Outcome::Success)
}

pub fn revoke(args: &RevokeArgs) -> Result<Outcome> {
    let scheme = Scheme::from(args.scheme);
    let mut store = Store::open(&args.store)?;
    store.get_entry(&args.id, scheme)?;
    let beats = session_beats(&args.session, &args.id, args.n_en)?;
    let key = new_key(args, beats[0].len())?;
    // Validate the new credential before touching the key file.
    build_entry(&args.id, &beats, &key, args.kiqr)?;
    write_key(&args.key_out, &key)?;
    if let Err(e) = store.revoke_and_reenroll(&args.id, &beats, &key, args.kiqr) {
        let _ = fs::remove_file(&args.key_out);
        return Err(e.into());
    }
    println!(
        "revoked and re-enrolled {} ({scheme}) key={}",
        args.id,
        args.key_out.display()
    );
    Ok(Outcome::Success)
}

pub fn verify(args: &VerifyArgs) -> Result<Outcome> {
    let scheme = Scheme::from(args.scheme);
    let store = Store::open(&args.store)?;
    let entry = store.get_entry(&args.id, scheme)?;
    let key = match fs::read_to_string(&args.key)
        .map_err(anyhow::Error::from)
        .and_then(|text| parse_key(text.trim()).map_err(anyhow::Error::from))
    {
        Ok(key) => key,
        Err(e) => {
            eprintln!("key {}: {e:#}", args.key.display());
            println!("{}", Verdict::reject(RejectReason::InvalidKey, None));
            return Ok(Outcome::Reject);
        }
    };
    if args.n_v == 0 {
        bail!("--n-v must be at least 1");
    }
    let probe = session_beats(&args.session, &args.id, args.n_v)?;
    let verdict = verify_probe(&probe, &key, entry);
    println!("{verdict}");
    Ok(if verdict.accepted() {
        Outcome::Success
    } else {
        Outcome::Reject
    })
}

fn signal_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "txt"));
    files.sort();
    if files.is_empty() {
        bail!("no .txt signals in {}", dir.display());
    }
    Ok(files)
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.with_file_name(format!("{}_summary.csv", stem(out)))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<Outcome> {
    let seed = resolve_seed(args.seed);
    if !(args.kiqr_step > 0.0 && args.kiqr_max > 0.0) {
        bail!("--kiqr-max and --kiqr-step must be positive");
    }
    let cfg = preprocess_config(&args.pre, 1);
    let mut records = Vec::new();
    for path in signal_files(&args.data)? {
        let raw = load_record_with_annotations(&path, args.pre.fs, &stem(&path))?;
        records.push(clean_record(&raw, &cfg).with_context(|| format!("cleaning {}", path.display()))?);
    }
    let schemes = match args.scheme {
        EvalSchemeArg::Bio => vec![Scheme::Bioconvolving],
        EvalSchemeArg::Mace => vec![Scheme::Mace],
        EvalSchemeArg::Both => vec![Scheme::Bioconvolving, Scheme::Mace],
    };
    let base = ExperimentConfig {
        scheme: schemes[0],
        n_trials_per_subject: args.trials,
        n_en: args.n_en,
        n_v: 1,
        k_iqr_grid: cancelauth::eval::linear_grid(args.kiqr_max, args.kiqr_step),
        rng_seed: seed,
        attack: match args.attack {
            AttackArg::GenuineKey => AttackModel::GenuineKey,
            AttackArg::RandomKey => AttackModel::RandomKey,
        },
        bio_k: args.bio_k,
        mace_k: args.mace_k,
        weighting: match args.weighting {
            WeightingArg::MeanSpectrum => Weighting::MeanSpectrum,
            WeightingArg::AveragePower => Weighting::AveragePower,
        },
    };
    for &n_v in &args.n_v_list {
        ExperimentConfig { n_v, ..base.clone() }.validate()?;
    }
    let grid = GridConfig {
        schemes,
        downsample_factors: args.downsample_list.clone(),
        n_v_values: args.n_v_list.clone(),
        segment_duration_s: args.pre.segment_s,
        base,
        max_grid_doublings: GridConfig::default().max_grid_doublings,
    };
    let report = run_grid(&records, &grid)?;

    report.write_rates_csv(BufWriter::new(create(&args.out)?))?;
    let summary = summary_path(&args.out);
    report.write_summary_csv(BufWriter::new(create(&summary)?))?;

    if let Some(dir) = &args.scores_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for &r in &grid.downsample_factors {
            let Ok(pools) = pools_at(&records, r, grid.segment_duration_s) else {
                continue;
            };
            for cell in report
                .cells
                .iter()
                .filter(|c| c.downsample_factor == r && c.error.is_none())
            {
                let cfg = ExperimentConfig {
                    scheme: cell.scheme,
                    n_v: cell.n_v,
                    ..grid.base.clone()
                };
                let scores = run_trials(&pools, &cfg)?;
                let name = format!("scores_{}_{}_{}.csv", cell.scheme.short_name(), cell.fs_hz, cell.n_v);
                scores.write_csv(BufWriter::new(create(&dir.join(name))?), cfg.n_trials_per_subject)?;
            }
        }
    }

    let mut failed = Vec::new();
    for cell in &report.cells {
        match (&cell.eer, &cell.error) {
            (Some(e), _) => println!(
                "{} fs={} n_v={} eer={:.4} k_iqr*={:.3}",
                cell.scheme.short_name(),
                cell.fs_hz,
                cell.n_v,
                e.eer,
                e.k_iqr
            ),
            (None, Some(err)) => {
                eprintln!("{} fs={} n_v={}: {err}", cell.scheme.short_name(), cell.fs_hz, cell.n_v);
                failed.push(err.clone());
            }
            (None, None) => {}
        }
    }
    println!("wrote {} and {}", args.out.display(), summary.display());
    if let Some(first) = failed.first() {
        bail!(
            "{} of {} cells failed; first: {first}",
            failed.len(),
            report.cells.len()
        );
    }
    Ok(Outcome::Success)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}
