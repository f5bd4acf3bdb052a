use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::RawRecord;

/// Column layout of an input CSV file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// `course,label,review` with three polarity labels.
    Labeled3,
    /// `rating,review` with 1-5 star ratings.
    Rated5,
    /// `label,review` with two polarity labels.
    Labeled2,
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled3" => Ok(Schema::Labeled3),
            "rated5" => Ok(Schema::Rated5),
            "labeled2" => Ok(Schema::Labeled2),
            other => Err(Error::Config(format!("unknown schema {other:?}"))),
        }
    }
}

impl Schema {
    fn required(self) -> &'static [&'static str] {
        match self {
            Schema::Labeled3 => &["course", "label", "review"],
            Schema::Rated5 => &["rating", "review"],
            Schema::Labeled2 => &["label", "review"],
        }
    }
}

/// Star rating -> polarity mapping for `rated5` files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRule {
    /// Ratings at or above this are positive.
    pub positive_from: u8,
    /// Ratings at or below this are negative; anything between is neutral.
    pub negative_to: u8,
}

impl Default for RatingRule {
    fn default() -> Self {
        RatingRule { positive_from: 4, negative_to: 2 }
    }
}

impl RatingRule {
    pub fn label(&self, rating: u8) -> Option<&'static str> {
        match rating {
            1..=5 if rating >= self.positive_from => Some("positive"),
            1..=5 if rating <= self.negative_to => Some("negative"),
            1..=5 => Some("neutral"),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub records: Vec<RawRecord>,
    pub errors: Vec<RowError>,
}

fn polarity(raw: &str, allow_neutral: bool) -> Option<&'static str> {
    match raw.trim().to_lowercase().as_str() {
        "positive" | "pos" | "p" => Some("positive"),
        "negative" | "neg" | "n" => Some("negative"),
        "neutral" | "neu" if allow_neutral => Some("neutral"),
        _ => None,
    }
}

fn parse_rating(raw: &str) -> Option<u8> {
    let v: f64 = raw.trim().parse().ok()?;
    (v.fract() == 0.0 && (0.0..=255.0).contains(&v)).then_some(v as u8)
}

/// Reads a CSV file in one of the three schemas.
///
/// Rows that fail to parse or carry an unknown label/rating are skipped and
/// listed in the report with their line numbers. Columns beyond the schema
/// (e.g. aspect labels) are kept in `extra`.
pub fn load_dataset(path: &Path, schema: Schema, rule: RatingRule) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_lowercase()).collect();
    let mut col = BTreeMap::new();
    for need in schema.required() {
        let idx = headers.iter().position(|h| h == need).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            detail: format!("missing column {need:?} (header {headers:?})"),
        })?;
        col.insert(*need, idx);
    }
    let mut report = LoadReport::default();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                report.errors.push(RowError { line, reason: e.to_string() });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != headers.len() {
            report.errors.push(RowError {
                line,
                reason: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
            continue;
        }
        let text = row[col["review"]].to_string();
        if text.trim().is_empty() {
            report.errors.push(RowError { line, reason: "empty review".into() });
            continue;
        }
        let mut extra = BTreeMap::new();
        let label = match schema {
            Schema::Labeled3 | Schema::Labeled2 => {
                let raw = &row[col["label"]];
                match polarity(raw, schema == Schema::Labeled3) {
                    Some(l) => l,
                    None => {
                        report.errors.push(RowError { line, reason: format!("unknown label {raw:?}") });
                        continue;
                    }
                }
            }
            Schema::Rated5 => {
                let raw = &row[col["rating"]];
                match parse_rating(raw).and_then(|r| rule.label(r)) {
                    Some(l) => l,
                    None => {
                        report.errors.push(RowError { line, reason: format!("rating {raw:?} outside 1-5") });
                        continue;
                    }
                }
            }
        };
        for (i, h) in headers.iter().enumerate() {
            if h != "review" && h != "label" {
                extra.insert(h.clone(), row[i].to_string());
            }
        }
        report.records.push(RawRecord { label: label.to_string(), text, extra });
    }
    Ok(report)
}
