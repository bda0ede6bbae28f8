//! Labeled examples and the header-less CSV format used for dataset files.
//!
//! A dataset line is `f_1,...,f_d,label`; a candidate-pool line is
//! `f_1,...,f_d`. Every line of a file must have the same width.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub num_classes: usize,
}

impl Dataset {
    /// Builds a dataset, checking uniform feature width and `label < num_classes`.
    pub fn new(examples: Vec<Example>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if let Some(first) = examples.first() {
            let dim = first.features.len();
            for ex in &examples {
                if ex.features.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: ex.features.len(),
                    });
                }
                if ex.label >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        label: ex.label,
                        classes: num_classes,
                    });
                }
            }
        }
        Ok(Self {
            examples,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.len())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.examples.iter().map(|e| e.features.clone()).collect()
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite value: {field:?}"),
        });
    }
    Ok(v)
}

fn parse_rows<R: Read>(input: R, labeled: bool) -> Result<Vec<(Vec<f64>, Option<usize>)>> {
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader(input).records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let min = if labeled { 2 } else { 1 };
        if record.len() < min {
            return Err(Error::Parse {
                line,
                msg: format!("expected at least {min} fields, got {}", record.len()),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {w} fields, got {}", record.len()),
                })
            }
            _ => {}
        }
        let n_feat = if labeled {
            record.len() - 1
        } else {
            record.len()
        };
        let features = record
            .iter()
            .take(n_feat)
            .map(|f| parse_f64(f, line))
            .collect::<Result<Vec<_>>>()?;
        let label = if labeled {
            let raw = &record[n_feat];
            Some(raw.parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("label is not a non-negative integer: {raw:?}"),
            })?)
        } else {
            None
        };
        rows.push((features, label));
    }
    Ok(rows)
}

/// Parses a labeled dataset. When `num_classes` is `None` it is inferred as
/// `max(label) + 1` (at least 2).
pub fn parse_dataset<R: Read>(input: R, num_classes: Option<usize>) -> Result<Dataset> {
    let rows = parse_rows(input, true)?;
    let inferred = rows
        .iter()
        .filter_map(|(_, l)| *l)
        .max()
        .map_or(2, |m| (m + 1).max(2));
    let classes = num_classes.unwrap_or(inferred);
    let examples = rows
        .into_iter()
        .map(|(f, l)| Example::new(f, l.unwrap_or(0)))
        .collect();
    Dataset::new(examples, classes)
}

/// Parses an unlabeled feature matrix (candidate-pool import format).
pub fn parse_features<R: Read>(input: R) -> Result<Vec<Vec<f64>>> {
    Ok(parse_rows(input, false)?
        .into_iter()
        .map(|(f, _)| f)
        .collect())
}

pub fn read_dataset(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset> {
    parse_dataset(std::fs::File::open(path)?, num_classes)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    parse_features(std::fs::File::open(path)?)
}

fn fmt_f64(v: f64) -> String {
    // `{}` on f64 prints the shortest representation that round-trips.
    format!("{v}")
}

pub fn write_dataset<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for ex in &data.examples {
        let mut row: Vec<String> = ex.features.iter().map(|&v| fmt_f64(v)).collect();
        row.push(ex.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_features<W: Write>(out: W, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for r in rows {
        w.write_record(r.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_dataset(std::fs::File::create(path)?, data)
}

pub fn save_features(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    write_features(std::fs::File::create(path)?, rows)
}
