//! Return-on-experience records: ingest, export and stratified splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::CleanConfig;

/// One maintenance event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoxRecord {
    pub record_id: String,
    pub environment: String,
    pub subsystem: String,
    pub root_cause: String,
    pub observation: String,
    pub solution: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub ingested_at_unix: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Corpus {
    pub records: Vec<RoxRecord>,
    pub environments: BTreeSet<String>,
    pub provenance: Provenance,
}

/// Rows rejected during ingest. Row numbers are 1-based data rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub skipped: usize,
    pub first_skipped: Vec<SkippedRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRow {
    pub row: usize,
    pub reason: String,
}

const REPORTED_SKIPS: usize = 10;
const REQUIRED_FIELDS: [&str; 5] = ["environment", "subsystem", "root_cause", "observation", "solution"];

impl IngestReport {
    fn skip(&mut self, row: usize, reason: impl Into<String>) {
        self.skipped += 1;
        if self.first_skipped.len() < REPORTED_SKIPS {
            self.first_skipped.push(SkippedRow {
                row,
                reason: reason.into(),
            });
        }
    }
}

struct RawRow {
    record_id: Option<String>,
    fields: [Option<String>; 5],
}

impl Corpus {
    pub fn from_records(records: Vec<RoxRecord>, source: impl Into<String>) -> Result<Corpus> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::DuplicateRecordId(r.record_id.clone()));
            }
        }
        let environments = records.iter().map(|r| r.environment.clone()).collect();
        Ok(Corpus {
            records,
            environments,
            provenance: Provenance {
                source: source.into(),
                ingested_at_unix: now_unix(),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&RoxRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn open(path: &Path) -> Result<(Corpus, IngestReport)> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        ingest(file, Format::from_path(path), &path.display().to_string())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(out, "{line}").map_err(|e| Error::io("writing corpus", e))?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("cannot write {}", path.display()), e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io("writing corpus", e))
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Parse a JSONL or CSV stream into a corpus. Invalid rows are skipped and
/// tallied; a duplicate explicit id or an empty result is fatal.
pub fn ingest<R: Read>(mut source: R, format: Format, source_name: &str) -> Result<(Corpus, IngestReport)> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Ingest(format!("unreadable stream {source_name}: {e}")))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Ingest(format!("{source_name} is not valid UTF-8 (byte {})", e.utf8_error().valid_up_to())))?;

    let mut report = IngestReport::default();
    let rows = match format {
        Format::Jsonl => jsonl_rows(&text, &mut report),
        Format::Csv => csv_rows(&text, &mut report)?,
    };

    let bare = CleanConfig::bare();
    let mut records = Vec::with_capacity(rows.len());
    let mut seen: HashSet<String> = HashSet::new();
    for (ordinal, row) in rows {
        let row_no = ordinal + 1;
        let mut values = Vec::with_capacity(5);
        let mut missing = None;
        for (name, v) in REQUIRED_FIELDS.iter().zip(row.fields) {
            match v {
                Some(s) if !s.trim().is_empty() => values.push(s),
                _ => {
                    missing = Some(*name);
                    break;
                }
            }
        }
        if let Some(name) = missing {
            report.skip(row_no, format!("missing or empty `{name}`"));
            continue;
        }
        let [environment, subsystem, root_cause, observation, solution]: [String; 5] =
            values.try_into().expect("five fields");
        if bare.clean(&observation).is_empty() {
            report.skip(row_no, "observation is empty after cleaning");
            continue;
        }
        if bare.clean(&solution).is_empty() {
            report.skip(row_no, "solution is empty after cleaning");
            continue;
        }
        let record_id = row.record_id.unwrap_or_else(|| ordinal.to_string());
        if !seen.insert(record_id.clone()) {
            return Err(Error::DuplicateRecordId(record_id));
        }
        records.push(RoxRecord {
            record_id,
            environment: environment.trim().to_string(),
            subsystem: subsystem.trim().to_string(),
            root_cause: root_cause.trim().to_string(),
            observation,
            solution,
        });
    }
    report.accepted = records.len();
    if records.is_empty() {
        return Err(Error::EmptyCorpus {
            skipped: report.skipped,
        });
    }
    let mut corpus = Corpus::from_records(records, source_name)?;
    corpus.provenance.source = source_name.to_string();
    Ok((corpus, report))
}

fn json_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn jsonl_rows(text: &str, report: &mut IngestReport) -> Vec<(usize, RawRow)> {
    let mut rows = Vec::new();
    for (ordinal, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                report.skip(ordinal + 1, format!("malformed JSON: {e}"));
                continue;
            }
        };
        let Some(obj) = value.as_object() else {
            report.skip(ordinal + 1, "not a JSON object");
            continue;
        };
        let fields = REQUIRED_FIELDS.map(|k| obj.get(k).and_then(json_string));
        let record_id = obj.get("record_id").and_then(json_string);
        rows.push((ordinal, RawRow { record_id, fields }));
    }
    rows
}

fn csv_rows(text: &str, report: &mut IngestReport) -> Result<Vec<(usize, RawRow)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest(format!("bad CSV header: {e}")))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut positions = [0usize; 5];
    for (slot, name) in positions.iter_mut().zip(REQUIRED_FIELDS) {
        *slot = column(name).ok_or_else(|| Error::Ingest(format!("CSV header lacks column `{name}`")))?;
    }
    let id_column = column("record_id");

    let mut rows = Vec::new();
    for (ordinal, rec) in reader.records().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.skip(ordinal + 1, format!("malformed CSV row: {e}"));
                continue;
            }
        };
        let fields = positions.map(|p| rec.get(p).map(str::to_string));
        let record_id = id_column
            .and_then(|p| rec.get(p))
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string);
        rows.push((ordinal, RawRow { record_id, fields }));
    }
    Ok(rows)
}

/// Seeded stratified train/test partition.
///
/// Records are shuffled with the seed, grouped by root cause, and each
/// stratum contributes its share of the target train size by largest
/// remainder. Strata with two or more records always land in both halves.
/// Output halves keep the input record order.
pub fn split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!("train_fraction must be in (0,1), got {train_fraction}")));
    }
    let n = corpus.records.len();
    if n < 2 {
        return Err(Error::Argument(format!("cannot split a corpus of {n} record(s)")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        strata.entry(corpus.records[i].root_cause.as_str()).or_default().push(i);
    }
    let strata: Vec<Vec<usize>> = strata.into_values().collect();

    let target = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let bounds: Vec<(usize, usize)> = strata
        .iter()
        .map(|s| if s.len() >= 2 { (1, s.len() - 1) } else { (0, s.len()) })
        .collect();
    let quotas: Vec<f64> = strata.iter().map(|s| s.len() as f64 * train_fraction).collect();
    let mut take: Vec<usize> = quotas
        .iter()
        .zip(&bounds)
        .map(|(q, &(lo, hi))| (q.floor() as usize).clamp(lo, hi))
        .collect();

    let mut assigned: usize = take.iter().sum();
    // Remainders rank who gives or receives the leftover units; index breaks ties.
    let remainder = |i: usize, take: &[usize]| quotas[i] - take[i] as f64;
    while assigned != target {
        let candidates = (0..strata.len()).filter(|&i| {
            if assigned < target {
                take[i] < bounds[i].1
            } else {
                take[i] > bounds[i].0
            }
        });
        let pick = if assigned < target {
            candidates.fold(None, |best: Option<usize>, i| match best {
                Some(b) if remainder(b, &take) >= remainder(i, &take) => Some(b),
                _ => Some(i),
            })
        } else {
            candidates.fold(None, |best: Option<usize>, i| match best {
                Some(b) if remainder(b, &take) <= remainder(i, &take) => Some(b),
                _ => Some(i),
            })
        };
        let Some(i) = pick else { break };
        if assigned < target {
            take[i] += 1;
            assigned += 1;
        } else {
            take[i] -= 1;
            assigned -= 1;
        }
    }

    let mut in_train = vec![false; n];
    for (stratum, &k) in strata.iter().zip(&take) {
        for &i in &stratum[..k] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in corpus.records.iter().enumerate() {
        if in_train[i] {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    let src = &corpus.provenance.source;
    Ok((
        Corpus::from_records(train, format!("{src}#train"))?,
        Corpus::from_records(test, format!("{src}#test"))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: usize, cause: &str) -> RoxRecord {
        RoxRecord {
            record_id: id.to_string(),
            environment: "fleet-a".into(),
            subsystem: "brakes".into(),
            root_cause: cause.into(),
            observation: format!("brake fault {id}"),
            solution: format!("replaced pad {id}"),
        }
    }

    fn corpus(n: usize, causes: usize) -> Corpus {
        let records = (0..n).map(|i| record(i, &format!("cause{}", i % causes))).collect();
        Corpus::from_records(records, "mem").unwrap()
    }

    const JSONL3: &str = r#"{"environment":"A","subsystem":"Suspension","root_cause":"Part physically damaged","observation":"failure mechanical brake","solution":"new loom made up and fitted"}
{"environment":"A","subsystem":"Doors","root_cause":"Accident","observation":"door stuck","solution":"door realigned"}
{"environment":"B","subsystem":"Doors","root_cause":"Leakage","observation":"oil on floor","solution":"seal replaced","record_id":"x9"}
"#;

    #[test]
    fn jsonl_well_formed() {
        let (c, report) = ingest(JSONL3.as_bytes(), Format::Jsonl, "t").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(report.skipped, 0);
        assert_eq!(c.records[0].record_id, "0");
        assert_eq!(c.records[2].record_id, "x9");
        assert_eq!(c.environments, ["A", "B"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn csv_empty_observation_is_skipped() {
        let data = "environment,subsystem,root_cause,observation,solution\n\
                    A,Brakes,Wear,\"pads worn, squeal\",replaced pads\n\
                    A,Brakes,Wear,,replaced pads\n\
                    A,Doors,Accident,\"door hit\",\"realigned, tested\"\n";
        let (c, report) = ingest(data.as_bytes(), Format::Csv, "t").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(report.skipped, 1);
        assert_eq!(report.first_skipped[0].row, 2);
        assert_eq!(c.records[0].observation, "pads worn, squeal");
    }

    #[test]
    fn punctuation_only_text_is_rejected() {
        let data = r#"{"environment":"A","subsystem":"S","root_cause":"C","observation":"?!","solution":"ok"}
{"environment":"A","subsystem":"S","root_cause":"C","observation":"fine","solution":"ok"}"#;
        let (c, report) = ingest(data.as_bytes(), Format::Jsonl, "t").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(report.skipped, 1);
    }

    #[test]
    fn duplicate_explicit_id_is_fatal() {
        let data = r#"{"record_id":"r1","environment":"A","subsystem":"S","root_cause":"C","observation":"x","solution":"y"}
{"record_id":"r1","environment":"A","subsystem":"S","root_cause":"C","observation":"x","solution":"y"}"#;
        let err = ingest(data.as_bytes(), Format::Jsonl, "t").unwrap_err();
        assert!(matches!(err, Error::DuplicateRecordId(ref id) if id == "r1"));
        assert!(err.to_string().contains("r1"));
    }

    #[test]
    fn empty_and_invalid_streams() {
        assert!(matches!(ingest("".as_bytes(), Format::Jsonl, "t"), Err(Error::EmptyCorpus { .. })));
        let bad = [0xffu8, 0xfe, 0x00];
        assert!(matches!(ingest(&bad[..], Format::Jsonl, "t"), Err(Error::Ingest(_))));
        let no_col = "environment,subsystem,root_cause,observation\nA,B,C,D\n";
        assert!(matches!(ingest(no_col.as_bytes(), Format::Csv, "t"), Err(Error::Ingest(_))));
    }

    #[test]
    fn skip_report_is_capped() {
        let mut data = String::new();
        for _ in 0..15 {
            data.push_str("{not json}\n");
        }
        data.push_str(r#"{"environment":"A","subsystem":"S","root_cause":"C","observation":"x","solution":"y"}"#);
        let (_, report) = ingest(data.as_bytes(), Format::Jsonl, "t").unwrap();
        assert_eq!(report.skipped, 15);
        assert_eq!(report.first_skipped.len(), 10);
    }

    #[test]
    fn export_reingest_round_trip() {
        let (c, _) = ingest(JSONL3.as_bytes(), Format::Jsonl, "t").unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let (again, _) = ingest(&buf[..], Format::Jsonl, "t").unwrap();
        assert_eq!(again.records, c.records);
        assert_eq!(again.environments, c.environments);
    }

    #[test]
    fn split_ten_records() {
        let c = corpus(10, 2);
        let (train, test) = split(&c, 0.8, 7).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut ids: Vec<_> = train.records.iter().chain(&test.records).map(|r| r.record_id.clone()).collect();
        ids.sort();
        let mut expected: Vec<_> = c.records.iter().map(|r| r.record_id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);

        let (train2, test2) = split(&c, 0.8, 7).unwrap();
        assert_eq!(train.records, train2.records);
        assert_eq!(test.records, test2.records);
    }

    #[test]
    fn split_rejects_bad_arguments() {
        let c = corpus(10, 2);
        assert!(matches!(split(&c, 0.0, 1), Err(Error::Argument(_))));
        assert!(matches!(split(&c, 1.0, 1), Err(Error::Argument(_))));
        assert!(matches!(split(&corpus(1, 1), 0.5, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn split_is_stratified() {
        let c = corpus(20_000, 37);
        let (train, _) = split(&c, 0.8, 3).unwrap();
        let mut total: BTreeMap<&str, usize> = BTreeMap::new();
        let mut in_train: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &c.records {
            *total.entry(&r.root_cause).or_default() += 1;
        }
        for r in &train.records {
            *in_train.entry(&r.root_cause).or_default() += 1;
        }
        for (cause, &n) in &total {
            if n >= 20 {
                let share = in_train.get(cause).copied().unwrap_or(0) as f64 / n as f64;
                assert!((share - 0.8).abs() <= 0.05, "{cause}: {share}");
            }
        }
    }

    proptest! {
        #[test]
        fn split_is_exact_partition(n in 2usize..120, causes in 1usize..9, frac in 0.05f64..0.95, seed: u64) {
            let c = corpus(n, causes);
            let (train, test) = split(&c, frac, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            let mut ids: Vec<usize> = train.records.iter().chain(&test.records)
                .map(|r| r.record_id.parse().unwrap()).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
            // strata with two or more members appear on both sides
            for k in 0..causes {
                let label = format!("cause{k}");
                let members = c.records.iter().filter(|r| r.root_cause == label).count();
                if members >= 2 {
                    prop_assert!(train.records.iter().any(|r| r.root_cause == label));
                    prop_assert!(test.records.iter().any(|r| r.root_cause == label));
                }
            }
        }
    }
}
