use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cancelauth::ingest::load_record_with_annotations;
use cancelauth::Store;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cancelauth"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cancelauth")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, subjects: usize, beats: usize, seed: u64) {
    let out = run(&[
        "synth",
        "--subjects",
        &subjects.to_string(),
        "--beats",
        &beats.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        p(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

struct Fixture {
    _tmp: TempDir,
    root: PathBuf,
    data: PathBuf,
    store: PathBuf,
}

impl Fixture {
    fn new(subjects: usize) -> Self {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_path_buf();
        let data = root.join("data");
        synth(&data, subjects, 40, 5);
        Fixture {
            store: root.join("vault.store"),
            _tmp: tmp,
            root,
            data,
        }
    }

    fn signal(&self, i: usize) -> PathBuf {
        self.data.join(format!("subject_{i:03}.txt"))
    }

    fn enroll(&self, id: &str, scheme: &str, subject: usize, key: &Path) -> Output {
        run(&[
            "enroll",
            "--store",
            p(&self.store),
            "--id",
            id,
            "--scheme",
            scheme,
            "--signal",
            p(&self.signal(subject)),
            "--key-out",
            p(key),
            "--fs",
            "1000",
            "--seed",
            "7",
        ])
    }

    fn verify(&self, id: &str, scheme: &str, subject: usize, key: &Path, n_v: usize) -> Output {
        run(&[
            "verify",
            "--store",
            p(&self.store),
            "--id",
            id,
            "--scheme",
            scheme,
            "--signal",
            p(&self.signal(subject)),
            "--key",
            p(key),
            "--n-v",
            &n_v.to_string(),
            "--offset-beats",
            "20",
            "--fs",
            "1000",
        ])
    }
}

#[test]
fn synth_writes_signal_and_annotation_per_subject() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth(&a, 30, 40, 9);
    synth(&b, 30, 40, 9);
    let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 60);
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    let rec = load_record_with_annotations(a.join("subject_000.txt"), 1000.0, "S").unwrap();
    assert_eq!(rec.r_peaks.unwrap().len(), 40);
}

#[test]
fn missing_seed_is_chosen_and_printed() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["synth", "--subjects", "1", "--beats", "3", "--out", p(tmp.path())]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed: "));
}

#[test]
fn enroll_then_verify_end_to_end() {
    let fx = Fixture::new(3);
    let key = fx.root.join("s0.key");
    let out = fx.enroll("alice", "bio", 0, &key);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&key).unwrap().starts_with("BIO:800:4:"));
    assert_eq!(Store::open(&fx.store).unwrap().entries().len(), 1);

    let genuine = fx.verify("alice", "bio", 0, &key, 5);
    assert_eq!(code(&genuine), 0);
    assert!(stdout(&genuine).starts_with("ACCEPT "));

    let impostor = fx.verify("alice", "bio", 1, &key, 5);
    assert_eq!(code(&impostor), 1);
    assert!(stdout(&impostor).starts_with("REJECT "));
    assert!(stdout(&impostor).trim_end().ends_with("above-threshold"));

    let dup = fx.enroll("alice", "bio", 0, &key);
    assert_eq!(code(&dup), 2);
    assert_eq!(Store::open(&fx.store).unwrap().entries().len(), 1);
}

#[test]
fn wrong_or_missing_key_fails_closed() {
    let fx = Fixture::new(2);
    let key = fx.root.join("k");
    assert_eq!(code(&fx.enroll("bob", "mace", 0, &key)), 0);

    let other = fx.root.join("other.key");
    fs::write(&other, "MACE:4:0.5,0.5,0.5,0.5\n").unwrap();
    let out = fx.verify("bob", "mace", 0, &other, 5);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).starts_with("REJECT"));

    let out = fx.verify("bob", "mace", 0, &fx.root.join("absent.key"), 5);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout(&out).trim(), "REJECT NaN invalid-key");

    fs::write(&other, "garbage\n").unwrap();
    assert_eq!(code(&fx.verify("bob", "mace", 0, &other, 5)), 1);
}

#[test]
fn operational_errors_exit_two() {
    let fx = Fixture::new(1);
    let key = fx.root.join("k");
    fs::write(&fx.store, "not a store\n").unwrap();
    assert_eq!(code(&fx.enroll("x", "bio", 0, &key)), 2);
    assert!(!key.exists());

    fs::remove_file(&fx.store).unwrap();
    assert_eq!(code(&fx.enroll("x", "bio", 0, &key)), 0);
    let before = fs::read(&fx.store).unwrap();
    assert_eq!(code(&fx.verify("nobody", "bio", 0, &key, 5)), 2);
    assert_eq!(fs::read(&fx.store).unwrap(), before);

    assert_eq!(code(&run(&["verify", "--store", p(&fx.store)])), 2);
    assert_eq!(code(&run(&["enroll", "--scheme", "rot13"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn revoke_rekeys_credential() {
    let fx = Fixture::new(1);
    let old = fx.root.join("old.key");
    let new = fx.root.join("new.key");
    assert_eq!(code(&fx.enroll("carol", "bio", 0, &old)), 0);
    let out = run(&[
        "revoke",
        "--store",
        p(&fx.store),
        "--id",
        "carol",
        "--scheme",
        "bio",
        "--signal",
        p(&fx.signal(0)),
        "--key-out",
        p(&new),
        "--fs",
        "1000",
        "--seed",
        "8",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_ne!(fs::read(&old).unwrap(), fs::read(&new).unwrap());
    assert_eq!(Store::open(&fx.store).unwrap().entries().len(), 1);

    let stale = fx.verify("carol", "bio", 0, &old, 5);
    assert_eq!(code(&stale), 1);
    assert!(stdout(&stale).contains("key-mismatch"));
    assert_eq!(code(&fx.verify("carol", "bio", 0, &new, 5)), 0);
}

#[test]
fn revoke_of_unknown_subject_is_an_error() {
    let fx = Fixture::new(1);
    let key = fx.root.join("k");
    let out = run(&[
        "revoke",
        "--store",
        p(&fx.store),
        "--id",
        "ghost",
        "--scheme",
        "mace",
        "--signal",
        p(&fx.signal(0)),
        "--key-out",
        p(&key),
        "--fs",
        "1000",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(!key.exists());
}

#[test]
fn preprocess_writes_cleaned_decimated_signal() {
    let fx = Fixture::new(1);
    let out_path = fx.root.join("clean.txt");
    let out = run(&[
        "preprocess",
        "--signal",
        p(&fx.signal(0)),
        "--out",
        p(&out_path),
        "--fs",
        "1000",
        "--downsample",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let raw = load_record_with_annotations(fx.signal(0), 1000.0, "a").unwrap();
    let clean = load_record_with_annotations(&out_path, 250.0, "a").unwrap();
    assert_eq!(clean.samples.len(), raw.samples.len().div_ceil(4));
    assert_eq!(clean.r_peaks.unwrap().len(), raw.r_peaks.unwrap().len());
}

fn evaluate(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "evaluate",
        "--data",
        p(data),
        "--fs",
        "1000",
        "--trials",
        "2",
        "--seed",
        "42",
        "--downsample-list",
        "1,2,4",
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn evaluate_is_deterministic_and_counts_cells() {
    let fx = Fixture::new(4);
    let a = fx.root.join("a.csv");
    let b = fx.root.join("b.csv");
    let out = evaluate(&fx.data, &a, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&evaluate(&fx.data, &b, &[])), 0);

    let summary_a = fs::read_to_string(fx.root.join("a_summary.csv")).unwrap();
    let summary_b = fs::read_to_string(fx.root.join("b_summary.csv")).unwrap();
    assert_eq!(summary_a, summary_b);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let mut lines = summary_a.lines();
    assert_eq!(lines.next(), Some("scheme,fs_hz,n_en,n_v,eer,k_iqr_star"));
    assert_eq!(lines.count(), 24);
    let report = fs::read_to_string(&a).unwrap();
    assert_eq!(report.lines().next(), Some("scheme,fs_hz,n_en,n_v,k_iqr,fpr,fnr"));
}

#[test]
fn evaluate_names_subject_with_too_few_beats() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3, 40, 1);
    let short = tmp.path().join("short");
    synth(&short, 1, 12, 2);
    fs::rename(short.join("subject_000.txt"), data.join("subject_zzz.txt")).unwrap();
    fs::rename(short.join("subject_000.rpk"), data.join("subject_zzz.rpk")).unwrap();
    let out = evaluate(
        &data,
        &tmp.path().join("r.csv"),
        &["--scheme", "bio", "--n-v-list", "1"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("subject_zzz"));
}
