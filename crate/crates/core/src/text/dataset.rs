//! CSV corpus ingestion and deterministic train/validation splitting.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One labeled training text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: usize,
    pub task: String,
}

/// Column names binding a CSV file to a task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub text_column: String,
    pub label_column: String,
}

/// A row that could not become an [`Example`], with its 1-based data-row
/// number (the header is row 0).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RejectedRow {
    pub row: usize,
    pub reason: String,
}

/// The result of ingesting one CSV file.
#[derive(Clone, Debug, Default)]
pub struct LoadOutcome {
    pub examples: Vec<Example>,
    pub rejects: Vec<RejectedRow>,
}

/// Load a header-rowed CSV into examples for `task`.
///
/// The label cell must name one of `label_names` (its index becomes the
/// class); multi-label cells (comma-separated) reduce to their first entry.
/// Rows with unknown labels or malformed records are rejected and reported,
/// not fatal. A missing column is a schema error; an unreadable file is an
/// I/O error.
pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
    label_names: &[String],
    task: &str,
) -> Result<LoadOutcome> {
    let file = File::open(path)?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Schema(format!(
                "column {name:?} not found in {}; headers are {:?}",
                path.display(),
                headers.iter().collect::<Vec<_>>()
            ))
        })
    };
    let text_idx = column(&schema.text_column)?;
    let label_idx = column(&schema.label_column)?;

    let mut outcome = LoadOutcome::default();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                outcome.rejects.push(RejectedRow { row, reason: format!("unreadable row: {e}") });
                continue;
            }
        };
        let (Some(text), Some(label_cell)) = (record.get(text_idx), record.get(label_idx)) else {
            outcome
                .rejects
                .push(RejectedRow { row, reason: "row is missing bound columns".into() });
            continue;
        };
        let label_str = label_cell.split(',').next().unwrap_or("").trim();
        match label_names.iter().position(|l| l == label_str) {
            Some(label) => outcome.examples.push(Example {
                text: text.to_string(),
                label,
                task: task.to_string(),
            }),
            None => outcome.rejects.push(RejectedRow {
                row,
                reason: format!("unknown label {label_str:?}"),
            }),
        }
    }
    Ok(outcome)
}

/// Split examples into disjoint, exhaustive train/validation sets.
///
/// The train side receives `floor(train_fraction * n)` examples (per class
/// when `stratified`, so every class ratio stays within one example of the
/// global ratio); the rest go to validation. The shuffle is driven entirely
/// by `seed`, so equal inputs and seed reproduce the split exactly.
pub fn split_train_val(
    examples: &[Example],
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::Split(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if examples.len() < 2 {
        return Err(Error::Split(format!(
            "cannot split {} example(s) into train and validation",
            examples.len()
        )));
    }
    // floor with a tiny guard so exact products like 0.8 * 5 don't fall to
    // the wrong side of an integer through binary rounding
    let train_count = |n: usize| ((train_fraction * n as f64) + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, ex) in examples.iter().enumerate() {
            by_class.entry(ex.label).or_default().push(i);
        }
        for (label, mut members) in by_class {
            if members.len() < 2 {
                return Err(Error::Split(format!(
                    "class {label} has {} member(s); stratification needs at least 2",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            let k = train_count(members.len());
            for (j, idx) in members.into_iter().enumerate() {
                if j < k {
                    train.push(examples[idx].clone());
                } else {
                    val.push(examples[idx].clone());
                }
            }
        }
        // Mix the per-class blocks so neither side is ordered by class.
        train.shuffle(&mut rng);
        val.shuffle(&mut rng);
    } else {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let k = train_count(examples.len());
        for (j, idx) in order.into_iter().enumerate() {
            if j < k {
                train.push(examples[idx].clone());
            } else {
                val.push(examples[idx].clone());
            }
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy_examples(counts: &[usize]) -> Vec<Example> {
        let mut out = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                out.push(Example {
                    text: format!("text {label} {i}"),
                    label,
                    task: "toy".into(),
                });
            }
        }
        out
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_rows_and_rejects_unknown_labels() {
        let f = write_csv("tweet,class\nhello there,hate\nnice day,normal\nodd one,bogus\n");
        let schema = CsvSchema { text_column: "tweet".into(), label_column: "class".into() };
        let labels = vec!["hate".to_string(), "normal".to_string()];
        let out = load_csv(f.path(), &schema, &labels, "hs").unwrap();
        assert_eq!(out.examples.len(), 2);
        assert_eq!(out.rejects.len(), 1);
        assert_eq!(out.rejects[0].row, 3);
        assert!(out.rejects[0].reason.contains("bogus"));
        assert_eq!(out.examples[0], Example { text: "hello there".into(), label: 0, task: "hs".into() });
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let f = write_csv("tweet,class\nhello,hate\n");
        let schema = CsvSchema { text_column: "body".into(), label_column: "class".into() };
        let err = load_csv(f.path(), &schema, &["hate".into()], "hs").unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let schema = CsvSchema { text_column: "a".into(), label_column: "b".into() };
        let err = load_csv(Path::new("/nonexistent/x.csv"), &schema, &[], "t").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn multi_label_cells_reduce_to_first() {
        let f = write_csv("text,labels\nsome text,\"joy,anger\"\n");
        let schema = CsvSchema { text_column: "text".into(), label_column: "labels".into() };
        let labels: Vec<String> = ["anger", "joy"].map(String::from).to_vec();
        let out = load_csv(f.path(), &schema, &labels, "emo").unwrap();
        assert_eq!(out.examples[0].label, 1, "first listed label wins");
    }

    #[test]
    fn quoted_fields_parse_per_rfc4180() {
        let f = write_csv("text,label\n\"hello, world\",pos\n");
        let schema = CsvSchema { text_column: "text".into(), label_column: "label".into() };
        let out = load_csv(f.path(), &schema, &["pos".into()], "t").unwrap();
        assert_eq!(out.examples[0].text, "hello, world");
    }

    #[test]
    fn split_sizes_match_the_floor_rule() {
        let examples = toy_examples(&[5593]);
        let (train, val) = split_train_val(&examples, 0.8, 7, false).unwrap();
        assert_eq!(train.len(), 4474);
        assert_eq!(val.len(), 1119);
    }

    #[test]
    fn stratified_split_is_exact_on_balanced_classes() {
        let examples = toy_examples(&[5, 5]);
        let (train, val) = split_train_val(&examples, 0.8, 3, true).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
        for label in 0..2 {
            assert_eq!(train.iter().filter(|e| e.label == label).count(), 4);
            assert_eq!(val.iter().filter(|e| e.label == label).count(), 1);
        }
    }

    #[test]
    fn split_is_a_partition() {
        let examples = toy_examples(&[13, 7, 29]);
        let (train, val) = split_train_val(&examples, 0.8, 11, true).unwrap();
        assert_eq!(train.len() + val.len(), examples.len());
        let mut joined: Vec<String> =
            train.iter().chain(&val).map(|e| e.text.clone()).collect();
        joined.sort();
        let mut original: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
        original.sort();
        assert_eq!(joined, original, "train and val together restore the input");
        // Stratified ratios stay within one example of the global rule.
        for (label, &n) in [13usize, 7, 29].iter().enumerate() {
            let in_train = train.iter().filter(|e| e.label == label).count() as f64;
            assert!((in_train - 0.8 * n as f64).abs() < 1.0);
        }
    }

    #[test]
    fn same_seed_reproduces_the_split() {
        let examples = toy_examples(&[20, 12]);
        let a = split_train_val(&examples, 0.75, 99, true).unwrap();
        let b = split_train_val(&examples, 0.75, 99, true).unwrap();
        assert_eq!(a, b);
        let c = split_train_val(&examples, 0.75, 100, true).unwrap();
        assert_ne!(a.0, c.0, "a different seed moves the boundary");
    }

    #[test]
    fn stratification_rejects_singleton_classes() {
        let examples = toy_examples(&[4, 1]);
        let err = split_train_val(&examples, 0.8, 1, true).unwrap_err();
        assert!(matches!(err, Error::Split(_)));
        // Unstratified has no such constraint.
        assert!(split_train_val(&examples, 0.8, 1, false).is_ok());
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        let examples = toy_examples(&[1]);
        assert!(matches!(split_train_val(&examples, 0.8, 1, false).unwrap_err(), Error::Split(_)));
        let examples = toy_examples(&[4]);
        assert!(split_train_val(&examples, 0.0, 1, false).is_err());
        assert!(split_train_val(&examples, 1.0, 1, false).is_err());
    }
}
