#![allow(dead_code)]

use std::path::PathBuf;

use nma_core::ingest::{self, TreatmentId};
use nma_core::{ContrastData, Dataset, ParseConfig, PrepConfig};

pub fn data_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/antihypertensive.csv")
}

pub fn dataset() -> Dataset {
    ingest::read_trials(&data_path(), &ParseConfig::default()).expect("bundled dataset")
}

pub fn contrasts(ds: &Dataset) -> Vec<ContrastData> {
    ingest::build_contrasts(&ds.trials, &PrepConfig::default()).expect("valid dataset")
}

pub fn trial_id(ds: &Dataset, label: &str) -> u32 {
    let hits: Vec<u32> = ds.trials.iter().filter(|t| t.label == label).map(|t| t.id).collect();
    assert_eq!(hits.len(), 1, "label {label:?} must name one trial");
    hits[0]
}

pub fn tid(ds: &Dataset, label: &str) -> TreatmentId {
    ds.treatments.id(label).unwrap_or_else(|| panic!("unknown treatment {label}"))
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
}

const PAIRWISE: &str = "study,year,treatment,events,size
s1,2001,Active,12,150
s1,2001,Control,25,148
s2,2002,Active,30,210
s2,2002,Control,28,205
s3,2003,Active,8,95
s3,2003,Control,22,99
s4,2004,Active,45,400
s4,2004,Control,61,398
s5,2005,Active,17,120
s5,2005,Control,15,118
s6,2006,Active,60,500
s6,2006,Control,95,502
s7,2007,Active,5,80
s7,2007,Control,14,82
s8,2008,Active,33,300
s8,2008,Control,31,310
";

pub fn pairwise() -> (Vec<f64>, Vec<f64>, Vec<nma_core::ContrastData>) {
    let config = ParseConfig {
        reference: "Control".into(),
        ..ParseConfig::default()
    };
    let ds = ingest::parse_trials(PAIRWISE.as_bytes(), &config).unwrap();
    let c = ingest::build_contrasts(&ds.trials, &PrepConfig::default()).unwrap();
    let mut y = Vec::new();
    let mut v = Vec::new();
    for t in &ds.trials {
        let (d1, n1) = (t.arms[0].events, t.arms[0].size);
        let (d0, n0) = (t.arms[1].events, t.arms[1].size);
        y.push((d1 / (n1 - d1)).ln() - (d0 / (n0 - d0)).ln());
        v.push(1.0 / d1 + 1.0 / (n1 - d1) + 1.0 / d0 + 1.0 / (n0 - d0));
    }
    (y, v, c)
}

/// Univariate REML by the fixed-point form of the estimating equation.
pub fn univariate_reml(y: &[f64], v: &[f64]) -> (f64, f64, f64) {
    let mut tau2 = 0.01;
    for _ in 0..100_000 {
        let w: Vec<f64> = v.iter().map(|vi| 1.0 / (vi + tau2)).collect();
        let sw: f64 = w.iter().sum();
        let mu = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
        let sw2: f64 = w.iter().map(|w| w * w).sum();
        let num: f64 = w
            .iter()
            .zip(y.iter().zip(v))
            .map(|(w, (y, v))| w * w * ((y - mu).powi(2) - v))
            .sum();
        let next = (num / sw2 + 1.0 / sw).max(0.0);
        if (next - tau2).abs() < 1e-16 {
            tau2 = next;
            break;
        }
        tau2 = next;
    }
    let w: Vec<f64> = v.iter().map(|vi| 1.0 / (vi + tau2)).collect();
    let sw: f64 = w.iter().sum();
    let mu = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    (tau2, mu, 1.0 / sw)
}
