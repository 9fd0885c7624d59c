use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, TextDataError};

/// Which text fields of a benchmark row make up the document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldPolicy {
    /// Join every text field with a single space.
    #[default]
    ConcatAll,
    /// Use only the text field at this 0-based position.
    Field(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    /// 0-based class index.
    pub label: usize,
    pub text: String,
}

/// Reads a benchmark-layout CSV: a quoted 1-based class index followed by
/// one or more text fields.
pub fn load_csv_dataset(path: impl AsRef<Path>, num_classes: usize, policy: FieldPolicy) -> Result<Vec<LabeledText>> {
    read_csv_dataset(File::open(path)?, num_classes, policy)
}

pub fn read_csv_dataset(reader: impl Read, num_classes: usize, policy: FieldPolicy) -> Result<Vec<LabeledText>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| TextDataError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 {
            return Err(TextDataError::MalformedRow { line });
        }
        let label: i64 = record[0]
            .trim()
            .parse()
            .map_err(|_| TextDataError::MalformedRow { line })?;
        if label < 1 || label as usize > num_classes {
            return Err(TextDataError::LabelOutOfDeclaredRange {
                line,
                label,
                classes: num_classes,
            });
        }
        let fields: Vec<&str> = record.iter().skip(1).collect();
        let text = match policy {
            FieldPolicy::ConcatAll => fields.join(" "),
            FieldPolicy::Field(i) => fields.get(i).ok_or(TextDataError::MalformedRow { line })?.to_string(),
        };
        out.push(LabeledText {
            label: label as usize - 1,
            text,
        });
    }
    Ok(out)
}
