//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use troubleshoot::corpus::{Corpus, RoxRecord};

const OBSERVATIONS: [&str; 3] = [
    "brake cable frayed near the lever",
    "door seal leaking oil onto the floor",
    "display flickers when the cabin lights dim",
];
const SOLUTIONS: [&str; 3] = [
    "replace brake cable and adjust tension",
    "fit a new door seal and clean the sill",
    "reseat the display connector and update firmware",
];

/// Three well separated failure families over two subsystems and two
/// environments; record `r{i}` has cause `cause{i % 3}`.
pub fn keyword_corpus(n: usize) -> Corpus {
    let records = (0..n)
        .map(|i| RoxRecord {
            record_id: format!("r{i}"),
            environment: if i % 4 == 0 { "plant-b" } else { "plant-a" }.into(),
            subsystem: format!("sub{}", (i / 3) % 2),
            root_cause: format!("cause{}", i % 3),
            observation: OBSERVATIONS[i % 3].into(),
            solution: SOLUTIONS[i % 3].into(),
        })
        .collect();
    Corpus::from_records(records, "fixture").unwrap()
}

pub fn write_corpus(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("records.jsonl");
    keyword_corpus(n).save_jsonl(&path).unwrap();
    path
}
