//! The subject x feature table shared by screening, evaluation and search.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::texture::{FeatureVector, FEATURE_COUNT, FEATURE_NAMES};

/// `N` subjects x 12 canonical features with a binary label (1 = case).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    subject_ids: Vec<String>,
    rows: Vec<[f64; FEATURE_COUNT]>,
    labels: Vec<u8>,
}

impl FeatureMatrix {
    pub fn new(subject_ids: Vec<String>, rows: Vec<[f64; FEATURE_COUNT]>, labels: Vec<u8>) -> Result<Self> {
        if subject_ids.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: subject_ids.len(),
            });
        }
        if labels.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidParameter(format!("label {l} is not 0 or 1")));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self {
            subject_ids,
            rows,
            labels,
        })
    }

    /// Labeled vectors only; unlabeled subjects are skipped.
    pub fn from_vectors<'a>(vectors: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Self> {
        let (mut ids, mut rows, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for v in vectors {
            if let Some(l) = v.label.as_binary() {
                ids.push(v.subject_id.clone());
                rows.push(v.values);
                labels.push(l);
            }
        }
        Self::new(ids, rows, labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn rows(&self) -> &[[f64; FEATURE_COUNT]] {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[feature]).collect()
    }

    /// Values of `feature` split into `(cases, controls)`.
    pub fn split_by_class(&self, feature: usize) -> (Vec<f64>, Vec<f64>) {
        let mut cases = Vec::new();
        let mut controls = Vec::new();
        for (row, &l) in self.rows.iter().zip(&self.labels) {
            if l == 1 {
                cases.push(row[feature]);
            } else {
                controls.push(row[feature]);
            }
        }
        (cases, controls)
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let cases = self.labels.iter().filter(|&&l| l == 1).count();
        (cases, self.labels.len() - cases)
    }

    pub fn require_both_classes(&self) -> Result<()> {
        match self.class_counts() {
            (0, _) | (_, 0) => Err(Error::SingleClass(format!(
                "matrix of {} subjects has a single class",
                self.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::new(self.subject_ids.clone(), self.rows.clone(), labels)
    }

    pub fn with_rows(&self, rows: Vec<[f64; FEATURE_COUNT]>) -> Result<Self> {
        Self::new(self.subject_ids.clone(), rows, self.labels.clone())
    }

    /// Writes `subject_id,label,H_F0..E_T3` with 9 significant digits.
    pub fn write_csv<W: Write>(&self, out: W, header_comments: &[String]) -> Result<()> {
        let mut out = out;
        for line in header_comments {
            writeln!(out, "# {line}").map_err(|e| Error::io("<feature csv>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["subject_id", "label"];
        header.extend(FEATURE_NAMES);
        w.write_record(&header).map_err(csv_err)?;
        for ((id, row), label) in self.subject_ids.iter().zip(&self.rows).zip(&self.labels) {
            let mut rec = vec![id.clone(), label.to_string()];
            rec.extend(row.iter().map(|&v| format_sig(v, 9)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<feature csv>", e))
    }

    /// Reads the CSV written by [`FeatureMatrix::write_csv`]; `#` lines are
    /// comments. Columns are located by header name.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::parse("feature CSV header", format!("missing column `{name}`")))
        };
        let id_col = find("subject_id")?;
        let label_col = find("label")?;
        let feature_cols = FEATURE_NAMES.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

        let (mut ids, mut rows, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(i + 2, |p| p.line() as usize);
            let field = |col: usize| {
                rec.get(col).ok_or_else(|| {
                    Error::parse(format!("feature CSV row {line}"), format!("missing column {}", col + 1))
                })
            };
            ids.push(field(id_col)?.to_owned());
            let label = field(label_col)?;
            labels.push(match label {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::parse(
                        format!("feature CSV row {line}, column `label`"),
                        format!("expected 0 or 1, got `{other}`"),
                    ))
                }
            });
            let mut row = [0.0; FEATURE_COUNT];
            for (j, &col) in feature_cols.iter().enumerate() {
                let raw = field(col)?;
                row[j] = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::parse(
                        format!("feature CSV row {line}, column `{}`", FEATURE_NAMES[j]),
                        format!("not a finite number: `{raw}`"),
                    )
                })?;
            }
            rows.push(row);
        }
        Self::new(ids, rows, labels)
    }
}

fn csv_err(e: csv::Error) -> Error {
    let context = match e.position() {
        Some(p) => format!("CSV line {}", p.line()),
        None => "CSV".to_owned(),
    };
    Error::parse(context, e.to_string())
}

/// Shortest decimal representation of `v` rounded to `digits` significant
/// digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), v)
        .parse()
        .expect("formatted float parses");
    rounded.to_string()
}
