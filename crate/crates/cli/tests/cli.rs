use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/antihypertensive.csv")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nma-influence"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_on(input: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_and_version() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--input", "x.csv", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--input", "x.csv", "--method", "mom"]).status.code(), Some(1));
    assert_eq!(run(&["--input", "x.csv", "--bootstrap", "-3"]).status.code(), Some(1));
    assert_eq!(run(&["--input", "x.csv", "--format", "xml"]).status.code(), Some(1));
    assert_eq!(run(&["--input", "x.csv", "--threads", "0"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.csv");
    let o = run_on(&missing, &out, &["--bootstrap", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let o = run_on(&data(), &out, &["--bootstrap", "0", "--exclude", "99"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run_on(&data(), &out, &["--bootstrap", "0", "--reference", "Nothing"]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "study,year,treatment,events,size\na,2000,Placebo,9,5\na,2000,X,1,5\n").unwrap();
    assert_eq!(run_on(&bad, &out, &["--bootstrap", "0"]).status.code(), Some(2));

    let split = dir.path().join("split.csv");
    fs::write(
        &split,
        "study,year,treatment,events,size\na,2000,Placebo,5,100\na,2000,X,7,100\nb,2000,Y,5,100\nb,2000,Z,9,100\n",
    )
    .unwrap();
    let o = run_on(&split, &out, &["--bootstrap", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("disconnected"));
}

#[test]
fn analysis_without_bootstrap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_on(&data(), &out, &["--bootstrap", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("26 trials, 8 treatments"), "{text}");
    assert!(text.contains("flagged: Jikei Heart Study, HYVET, TRANSCEND"), "{text}");
    for f in ["summary.tsv", "league.tsv", "residuals.tsv", "lrt.tsv", "flags.tsv", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(out.join("sensitivity_league.tsv").exists());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["summary"]["trials"], 26);
    assert_eq!(json["flagged"].as_array().unwrap().len(), 3);
}

#[test]
fn exclusions_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_on(
        &data(),
        &out,
        &["--bootstrap", "0", "--exclude", "23,24,26", "--format", "json", "--method", "ml"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("23 trials"));
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["report.json"]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["summary"]["method"], "ML");
    assert_eq!(json["summary"]["excluded"], serde_json::json!([23, 24, 26]));
}

#[test]
fn bootstrap_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--bootstrap", "6", "--seed", "3", "--format", "tsv,json"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run_on(&data(), &a, &args).status.code(), Some(0));
    let mut threaded = args.to_vec();
    threaded.extend(["--threads", "2"]);
    assert_eq!(run_on(&data(), &b, &threaded).status.code(), Some(0));
    for f in ["report.json", "residuals.tsv", "lrt.tsv", "psiratio.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(a.join("summary.tsv")).unwrap();
    assert!(summary.contains("bootstrap_replicates\t6"));
    assert!(summary.contains("bootstrap_seed\t3"));
}
