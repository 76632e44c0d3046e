use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cotopic::TopicModel;

fn cotopic(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cotopic"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cotopic(dir, args);
    assert!(
        out.status.success(),
        "cotopic {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const RECORDS: &str = "patient_id,code,count
p1,Hypertension,3
p1,Diabetes,2
p1,Obesity,1
p2,Hypertension,2
p2,Diabetes,1
p3,Asthma,4
p3,Cough,2
p4,Asthma,2
p4,Cough,3
p4,Hypertension,1
p5,Rash,1
";

fn fitted(dir: &Path) {
    fs::write(dir.join("records.csv"), RECORDS).unwrap();
    ok(
        dir,
        &[
            "ingest",
            "--records",
            "records.csv",
            "--out-dir",
            "corpus",
            "--cutoff",
            "0.9",
        ],
    );
    ok(
        dir,
        &[
            "fit",
            "--matrix",
            "corpus/matrix.tsv",
            "--vocab",
            "corpus/vocab.tsv",
            "-k",
            "2",
            "--seed",
            "5",
            "--burn-in",
            "50",
            "--out",
            "model.json",
        ],
    );
}

#[test]
fn ingest_writes_truncated_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("records.csv"), RECORDS).unwrap();
    ok(
        d,
        &[
            "ingest",
            "--records",
            "records.csv",
            "--out-dir",
            "out",
            "--tfidf",
        ],
    );
    for f in [
        "vocab.tsv",
        "matrix.tsv",
        "patients.tsv",
        "stats.tsv",
        "tfidf.tsv",
    ] {
        assert!(d.join("out").join(f).exists(), "{f} missing");
    }
    // Totals: Hypertension 6, Asthma 6, Cough 5, Diabetes 3, Obesity 1, Rash 1 (of 22).
    // 0.8 · 22 = 17.6 needs the top four codes (20/22).
    let vocab = fs::read_to_string(d.join("out/vocab.tsv")).unwrap();
    let codes: Vec<&str> = vocab
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("rank"))
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(codes, ["Asthma", "Hypertension", "Cough", "Diabetes"]);
    // p5 only has Rash, which was truncated away.
    let patients = fs::read_to_string(d.join("out/patients.tsv")).unwrap();
    assert!(!patients.contains("p5"));
}

#[test]
fn fit_report_recommend() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fitted(d);
    let model = TopicModel::read_json(fs::File::open(d.join("model.json")).unwrap()).unwrap();
    assert_eq!(model.n_topics(), 2);
    assert_eq!(model.sweeps, 51);
    assert_eq!(model.seed, 5);

    ok(d, &["report", "--model", "model.json", "--out-dir", "rep"]);
    for f in [
        "topic_0.tsv",
        "topic_1.tsv",
        "phi_topic_0.tsv",
        "split_topic_1.tsv",
        "entropy.tsv",
        "jsd_matrix.tsv",
        "jsd_summary.tsv",
    ] {
        assert!(d.join("rep").join(f).exists(), "{f} missing");
    }

    let json = ok(
        d,
        &["recommend", "--model", "model.json", "--code", "Asthma"],
    );
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["query"], "Asthma");
    assert_eq!(v["topics"].as_array().unwrap().len(), 2);
    assert!(v["suggestions"]
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s["code"] != "Asthma"));
}

#[test]
fn unknown_code_suggests_neighbours() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fitted(d);
    let out = cotopic(
        d,
        &["recommend", "--model", "model.json", "--code", "Asthmaa"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Asthma"));
}

#[test]
fn sweep_selects_from_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fitted(d);
    let stdout = ok(
        d,
        &[
            "sweep-k",
            "--matrix",
            "corpus/matrix.tsv",
            "--vocab",
            "corpus/vocab.tsv",
            "--grid",
            "2,3",
            "--chains",
            "2",
            "--burn-in",
            "20",
            "--seed",
            "1",
            "--out",
            "sweep.tsv",
        ],
    );
    assert!(stdout.starts_with("selected K = "));
    let tsv = fs::read_to_string(d.join("sweep.tsv")).unwrap();
    let chain_lines = tsv
        .lines()
        .filter(|l| l.starts_with("2\t") || l.starts_with("3\t"))
        .count();
    // 4 chain lines plus 2 summary lines.
    assert_eq!(chain_lines, 6);
    assert!(tsv.contains("#selected_K"));
}

#[test]
fn synth_writes_records_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "--records",
            "r.csv",
            "--truth",
            "t.json",
            "--seed",
            "4",
            "--k-true",
            "2",
            "--codes",
            "10",
            "--patients",
            "20",
        ],
    );
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    assert_eq!(truth["phi"].as_array().unwrap().len(), 2);
    let records = cotopic::parse_records(fs::read(d.join("r.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(records.n_patients(), 20);
}

#[test]
fn oracle_check_passes_at_default_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["oracle-check", "--sweeps", "50000"]);
    let dev: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max_abs_marginal_deviation "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(dev <= 0.02, "{dev}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cotopic(d, &["--help"]).status.code(), Some(0));
    assert_eq!(cotopic(d, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(cotopic(d, &["fit", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(
        cotopic(d, &["ingest", "--records", "missing.csv", "--out-dir", "x"])
            .status
            .code(),
        Some(1)
    );
    fs::write(
        d.join("bad.csv"),
        "patient_id,code,count\np1,A,notanumber\n",
    )
    .unwrap();
    let out = cotopic(d, &["ingest", "--records", "bad.csv", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    fs::write(d.join("ok.csv"), RECORDS).unwrap();
    let out = cotopic(
        d,
        &[
            "ingest",
            "--records",
            "ok.csv",
            "--out-dir",
            "x",
            "--cutoff",
            "1.5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_rejects_single_topic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fitted(d);
    let out = cotopic(
        d,
        &[
            "fit",
            "--matrix",
            "corpus/matrix.tsv",
            "--vocab",
            "corpus/vocab.tsv",
            "-k",
            "1",
            "--seed",
            "1",
            "--out",
            "m1.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
