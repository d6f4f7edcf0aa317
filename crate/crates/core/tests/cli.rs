use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use molcvt::chem::tokenize;
use molcvt::cli::{cmd_eval, cmd_generate, cmd_train, cmd_validate, ingest, Split};
use molcvt::cvae::ConditionSet;
use proptest::prelude::*;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "d_model = 8\nheads = 2\nblocks = 1\nd_ff = 16\nlatent_dim = 4\nmax_len = 80\ndropout = 0.1\n\
         epochs = 2\nbatch_size = 16\nseed = 9\n\
         train_path = {}\ncheckpoint_path = tiny.gctc\nlog_path = tiny_log.csv\n{extra}",
        data("train.csv").display()
    );
    write(dir, "tiny.cfg", &text)
}

fn trained() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let summary = cmd_train(&cfg, &mut Vec::new()).unwrap();
    (dir, summary.checkpoint)
}

fn molcvt(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_molcvt")).args(args).output().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ingest_accounts_for_every_row(kinds in proptest::collection::vec(0usize..4, 0..30)) {
        let dir = tempfile::tempdir().unwrap();
        let long = "C".repeat(81);
        let samples = ["CCO", "c1ccccc1", "CC%", long.as_str()];
        let mut text = String::from("smiles,prop1,prop2,prop3\n");
        for (i, &k) in kinds.iter().enumerate() {
            text.push_str(&format!("{},{i},0.5,-1e-3\n", samples[k]));
        }
        let p = write(dir.path(), "d.csv", &text);
        let got = ingest(&p, Split::Test).unwrap();
        prop_assert_eq!(got.rows.len() + got.rejected.len(), kinds.len());
        prop_assert_eq!(got.rows.len(), kinds.iter().filter(|&&k| k < 2).count());
        for r in &got.rows {
            prop_assert!(tokenize(&r.smiles).is_ok());
        }
    }
}

#[test]
fn ingest_reports_structural_problems() {
    let dir = tempfile::tempdir().unwrap();
    let header = write(dir.path(), "h.csv", "smiles,a,b,c\nCCO,1,2,3\n");
    assert_eq!(ingest(&header, Split::Train).unwrap_err().category(), "header-mismatch");
    let number = write(dir.path(), "n.csv", "smiles,prop1,prop2,prop3\nCCO,1,x,3\n");
    assert_eq!(ingest(&number, Split::Train).unwrap_err().category(), "malformed-row");
    let short = write(dir.path(), "s.csv", "smiles,prop1,prop2,prop3\nCCO,1,2\n");
    assert_eq!(ingest(&short, Split::Train).unwrap_err().category(), "malformed-row");
    assert_eq!(
        ingest(&dir.path().join("missing.csv"), Split::Train)
            .unwrap_err()
            .category(),
        "io-failure"
    );
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (dir_a, ck_a) = trained();
    let (_dir_b, ck_b) = trained();
    assert_eq!(fs::read(&ck_a).unwrap(), fs::read(&ck_b).unwrap());

    let cfg = tiny_config(dir_a.path(), &format!("resume_from = {}\nepochs = 1\n", ck_a.display()));
    let summary = cmd_train(&cfg, &mut Vec::new()).unwrap();
    assert_eq!((summary.epochs_run, summary.final_epoch), (1, 3));
    let log = fs::read_to_string(dir_a.path().join("tiny_log.csv")).unwrap();
    let epochs: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["1", "2", "3"]);
}

#[test]
fn generation_is_reproducible_and_cycles_conditions() {
    let (dir, ck) = trained();
    let csv_of = |seed| {
        let mut out = Vec::new();
        cmd_generate(&ck, 6, seed, 2, None, &mut Vec::new())
            .unwrap()
            .write_csv(&mut out)
            .unwrap();
        out
    };
    assert_eq!(csv_of(5), csv_of(5));

    let conds = write(dir.path(), "c.csv", "prop1,prop2,prop3\n0.1,20,0.5\n0.9,40,-0.5\n");
    let report = cmd_generate(&ck, 5, 1, 1, Some(&conds), &mut Vec::new()).unwrap();
    let got: Vec<ConditionSet> = report.molecules.iter().map(|m| m.conditions).collect();
    let (a, b) = (ConditionSet([0.1, 20.0, 0.5]), ConditionSet([0.9, 40.0, -0.5]));
    assert_eq!(got, [a, b, a, b, a]);
}

#[test]
fn eval_of_a_reference_against_itself() {
    let test = data("test.csv");
    let report = cmd_eval(&test, Some(&data("train.csv")), Some(&test), None).unwrap();
    let get = |name: &str| report.get(name).unwrap().clone().unwrap();
    assert_eq!(get("validity"), 1.0);
    assert_eq!(get("novelty"), 1.0);
    assert!((get("SNN/Test") - 1.0).abs() < 1e-12);
    assert!((get("Frag/Test (proxy)") - 1.0).abs() < 1e-12);
    assert!(get("FCD/Test (proxy)").abs() < 1e-9);
}

#[test]
fn validate_reports_each_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "v.csv", "smiles\nCCO\nC1CC\nc1ccccc1\n");
    let lines = cmd_validate(&p).unwrap();
    let verdicts: Vec<(u64, bool)> = lines.iter().map(|l| (l.line, l.verdict.is_valid())).collect();
    assert_eq!(verdicts, [(2, true), (3, false), (4, true)]);
}

#[test]
fn binary_round_trip() {
    let (dir, ck) = trained();
    let gen = dir.path().join("gen.csv");
    let out = molcvt(&[
        "generate",
        ck.to_str().unwrap(),
        "--n",
        "4",
        "--seed",
        "3",
        "--out",
        gen.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&gen).unwrap().lines().count(), 5);

    let out = molcvt(&[
        "eval",
        gen.to_str().unwrap(),
        "--train",
        data("train.csv").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("novelty"));

    let out = molcvt(&["attend", ck.to_str().unwrap(), "CCO", "--layer", "0", "--head", "1"]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["labels"].as_array().unwrap().len(), 6);

    let out = molcvt(&["validate", data("test.csv").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).trim_end().ends_with("50/50 valid"));
}

#[test]
fn binary_reports_error_category() {
    let out = molcvt(&["validate", "/nonexistent/file.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io-failure]"));

    let (_dir, ck) = trained();
    let out = molcvt(&["attend", ck.to_str().unwrap(), "CCO", "--layer", "7"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[out-of-range]"));
}
