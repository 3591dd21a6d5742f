//! Fixtures shared by the benchmarks.

use nma_core::{ingest, ContrastData, Dataset, ParseConfig, PrepConfig};

pub const ANTIHYPERTENSIVE_CSV: &str = include_str!("../../../data/antihypertensive.csv");

pub fn dataset() -> Dataset {
    ingest::parse_trials(ANTIHYPERTENSIVE_CSV.as_bytes(), &ParseConfig::default())
        .expect("bundled dataset parses")
}

pub fn contrasts(ds: &Dataset) -> Vec<ContrastData> {
    ingest::build_contrasts(&ds.trials, &PrepConfig::default()).expect("bundled dataset is valid")
}
