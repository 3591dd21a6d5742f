mod common;

use common::{dataset, tid};
use nma_core::ingest::{self, parse_trials, TreatmentId};
use nma_core::{Error, ParseConfig, PrepConfig};

fn parse(csv: &str) -> nma_core::Result<nma_core::Dataset> {
    parse_trials(csv.as_bytes(), &ParseConfig::default())
}

const HEADER: &str = "study,year,treatment,events,size\n";

#[test]
fn disconnected_network_names_components() {
    let csv = format!("{HEADER}a,2000,Placebo,5,100\na,2000,X,7,100\nb,2001,Y,3,90\nb,2001,Z,4,95\n");
    let ds = parse(&csv).unwrap();
    let err = ingest::validate_network(&ds.trials, &ds.treatments).unwrap_err();
    let Error::Disconnected { components } = &err else {
        panic!("{err}");
    };
    assert_eq!(components.len(), 2);
    assert!(components.iter().any(|c| c.contains(&"Placebo".to_string()) && c.contains(&"X".to_string())));
    assert!(components.iter().any(|c| c.contains(&"Y".to_string()) && c.contains(&"Z".to_string())));
    assert!(err.to_string().contains("disconnected"));
}

#[test]
fn empty_input_fails_validation() {
    for text in ["", HEADER] {
        let ds = parse(text).unwrap();
        assert!(ds.trials.is_empty());
        assert!(ingest::validate_network(&ds.trials, &ds.treatments).is_err());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    std::fs::write(&path, HEADER).unwrap();
    let config = nma_core::RunConfig {
        bootstrap: None,
        ..nma_core::RunConfig::new(&path)
    };
    let err = nma_core::report::run_analysis(&config).unwrap_err();
    assert!(!err.is_numerical(), "{err}");
}

#[test]
fn malformed_input() {
    let too_many = format!("{HEADER}a,2000,Placebo,101,100\na,2000,X,7,100\n");
    assert!(matches!(parse(&too_many), Err(Error::Parse { line: 2, .. })));
    let negative = format!("{HEADER}a,2000,Placebo,-1,100\na,2000,X,7,100\n");
    assert!(parse(&negative).is_err());
    let dup = format!("{HEADER}a,2000,Placebo,1,100\na,2000,Placebo,7,100\n");
    assert!(matches!(parse(&dup), Err(Error::Parse { line: 3, .. })));
    let single = format!("{HEADER}a,2000,Placebo,1,100\n");
    assert!(parse(&single).is_err());
    let text = format!("{HEADER}a,2000,Placebo,one,100\na,2000,X,7,100\n");
    let Err(Error::Parse { line, .. }) = parse(&text) else {
        panic!("expected a parse error");
    };
    assert_eq!(line, 2);
    let missing = "study,year,treatment,events\na,2000,Placebo,1\n";
    assert!(parse(missing).is_err());
}

#[test]
fn reference_must_be_known() {
    let csv = format!("{HEADER}a,2000,A,5,100\na,2000,B,7,100\n");
    let config = ParseConfig {
        reference: "Placebo".into(),
        ..ParseConfig::default()
    };
    assert!(parse_trials(csv.as_bytes(), &config).is_err());
    let config = ParseConfig {
        reference: "B".into(),
        ..ParseConfig::default()
    };
    let ds = parse_trials(csv.as_bytes(), &config).unwrap();
    assert_eq!(ds.treatments.label(TreatmentId(0)), "B");
}

#[test]
fn tab_delimited_input() {
    let tsv = "study\tyear\ttreatment\tevents\tsize\na\t2000\tPlacebo\t5\t100\na\t2000\tX\t7\t100\n";
    let config = ParseConfig {
        delimiter: Some(b'\t'),
        ..ParseConfig::default()
    };
    let ds = parse_trials(tsv.as_bytes(), &config).unwrap();
    assert_eq!(ds.trials.len(), 1);
}

#[test]
fn bundled_dataset_preparation() {
    let ds = dataset();
    let contrasts = ingest::build_contrasts(&ds.trials, &PrepConfig::default()).unwrap();
    let placebo = tid(&ds, "Placebo");
    assert_eq!(contrasts.len(), 26);
    // VHAS and NICS-EH have a zero cell.
    for id in [5, 7] {
        let t = ds.trial(id).unwrap();
        assert!(t.arms.iter().any(|a| a.events == 0.0));
        let c = &contrasts[id as usize - 1];
        assert!(c.y.iter().all(|v| v.is_finite()));
    }
    // Trials without placebo get a pseudo reference arm.
    let ucpds = &contrasts[2];
    assert_eq!(ucpds.reference, placebo);
    assert_eq!(ucpds.observed_count(), 2);
    assert_eq!(ucpds.informative_count(), 1);
    let total: f64 = ds.trials.iter().map(|t| t.participants()).sum();
    assert_eq!(total, 223_313.0);
}

#[test]
fn exclusion_validates_ids() {
    let ds = dataset();
    assert!(matches!(ds.excluding(&[27]), Err(Error::UnknownTrial(27))));
    let reduced = ds.excluding(&[1, 2]).unwrap();
    assert_eq!(reduced.trials.len(), 24);
    assert!(reduced.trial(1).is_none());
    assert_eq!(reduced.trial(3).unwrap().label, "UKPDS");
}
