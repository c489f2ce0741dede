//! UCI Adult census records: parsing and feature encoding.
//!
//! Encoded layout: one-hot age bucket, then one one-hot block per
//! categorical column (training vocabulary plus one slot for unseen values),
//! then the standardized continuous columns. `fnlwgt` is dropped.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Features, SparseFeatures};

use super::LabeledExample;

pub const AGE_BOUNDARIES: [f64; 10] = [18.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0];

pub const CATEGORICAL_COLUMNS: [&str; 8] = [
    "workclass",
    "education",
    "marital_status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "native_country",
];

pub const CONTINUOUS_COLUMNS: [&str; 4] =
    ["capital_gain", "capital_loss", "education_num", "hours_per_week"];

const FIELDS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdultRecord {
    pub age: f64,
    pub workclass: String,
    pub fnlwgt: f64,
    pub education: String,
    pub education_num: f64,
    pub marital_status: String,
    pub occupation: String,
    pub relationship: String,
    pub race: String,
    pub sex: String,
    pub capital_gain: f64,
    pub capital_loss: f64,
    pub hours_per_week: f64,
    pub native_country: String,
    /// Income bracket with any trailing period removed, e.g. `">50K"`.
    pub income: String,
}

impl AdultRecord {
    pub fn categorical(&self, column: &str) -> &str {
        match column {
            "workclass" => &self.workclass,
            "education" => &self.education,
            "marital_status" => &self.marital_status,
            "occupation" => &self.occupation,
            "relationship" => &self.relationship,
            "race" => &self.race,
            "sex" => &self.sex,
            "native_country" => &self.native_country,
            other => panic!("unknown categorical column {other}"),
        }
    }

    pub fn continuous(&self, column: &str) -> f64 {
        match column {
            "capital_gain" => self.capital_gain,
            "capital_loss" => self.capital_loss,
            "education_num" => self.education_num,
            "hours_per_week" => self.hours_per_week,
            other => panic!("unknown continuous column {other}"),
        }
    }

    pub fn label(&self) -> f64 {
        if self.income == ">50K" {
            1.0
        } else {
            0.0
        }
    }

    /// Female = 0, Male = 1.
    pub fn protected(&self) -> f64 {
        if self.sex == "Male" {
            1.0
        } else {
            0.0
        }
    }
}

fn parse_record(line: &str) -> std::result::Result<AdultRecord, String> {
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() != FIELDS {
        return Err(format!("expected {FIELDS} fields, found {}", f.len()));
    }
    let num = |i: usize, name: &str| {
        f[i].parse::<f64>()
            .map_err(|_| format!("{name}: cannot parse {:?} as a number", f[i]))
    };
    Ok(AdultRecord {
        age: num(0, "age")?,
        workclass: f[1].to_string(),
        fnlwgt: num(2, "fnlwgt")?,
        education: f[3].to_string(),
        education_num: num(4, "education_num")?,
        marital_status: f[5].to_string(),
        occupation: f[6].to_string(),
        relationship: f[7].to_string(),
        race: f[8].to_string(),
        sex: f[9].to_string(),
        capital_gain: num(10, "capital_gain")?,
        capital_loss: num(11, "capital_loss")?,
        hours_per_week: num(12, "hours_per_week")?,
        native_country: f[13].to_string(),
        income: f[14].trim_end_matches('.').to_string(),
    })
}

/// Reads one Adult file. Blank lines and a leading `|...` header line are
/// skipped.
pub fn read_adult_file(path: impl AsRef<Path>) -> Result<Vec<AdultRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || (out.is_empty() && trimmed.starts_with('|')) {
            continue;
        }
        out.push(parse_record(trimmed).map_err(|m| Error::parse(path, i + 1, m))?);
    }
    Ok(out)
}

pub fn load_adult(
    train_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
) -> Result<(Vec<AdultRecord>, Vec<AdultRecord>)> {
    Ok((read_adult_file(train_path)?, read_adult_file(test_path)?))
}

/// Bucket index for `age`: the number of boundaries that are `<= age`.
pub fn age_bucket(age: f64) -> usize {
    AGE_BOUNDARIES.iter().filter(|&&b| age >= b).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Fitted {
    vocabularies: Vec<BTreeMap<String, usize>>,
    offsets: Vec<usize>,
    continuous_offset: usize,
    means: Vec<f64>,
    stds: Vec<f64>,
    dim: usize,
}

/// Feature encoder fitted on training records.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdultCodec {
    fitted: Option<Fitted>,
}

impl AdultCodec {
    pub fn new() -> Self {
        AdultCodec::default()
    }

    pub fn fitted(records: &[AdultRecord]) -> Result<Self> {
        let mut c = AdultCodec::new();
        c.fit(records)?;
        Ok(c)
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn fit(&mut self, records: &[AdultRecord]) -> Result<()> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("cannot fit codec on zero records".into()));
        }
        let mut offset = AGE_BOUNDARIES.len() + 1;
        let mut vocabularies = Vec::new();
        let mut offsets = Vec::new();
        for col in CATEGORICAL_COLUMNS {
            let mut vocab: BTreeMap<String, usize> =
                records.iter().map(|r| (r.categorical(col).to_string(), 0)).collect();
            for (i, slot) in vocab.values_mut().enumerate() {
                *slot = i;
            }
            offsets.push(offset);
            // One extra slot for values unseen during fitting.
            offset += vocab.len() + 1;
            vocabularies.push(vocab);
        }
        let n = records.len() as f64;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for col in CONTINUOUS_COLUMNS {
            let mean = records.iter().map(|r| r.continuous(col)).sum::<f64>() / n;
            let var = records
                .iter()
                .map(|r| (r.continuous(col) - mean).powi(2))
                .sum::<f64>()
                / n;
            means.push(mean);
            stds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        self.fitted = Some(Fitted {
            vocabularies,
            offsets,
            continuous_offset: offset,
            means,
            stds,
            dim: offset + CONTINUOUS_COLUMNS.len(),
        });
        Ok(())
    }

    fn state(&self) -> Result<&Fitted> {
        self.fitted.as_ref().ok_or(Error::UnfittedCodec)
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(self.state()?.dim)
    }

    /// Number of training categories for categorical column `col`.
    pub fn vocabulary_size(&self, col: usize) -> Result<usize> {
        Ok(self.state()?.vocabularies[col].len())
    }

    pub fn encode(&self, record: &AdultRecord) -> Result<SparseFeatures> {
        let s = self.state()?;
        let mut entries = Vec::with_capacity(1 + CATEGORICAL_COLUMNS.len() + CONTINUOUS_COLUMNS.len());
        entries.push((age_bucket(record.age), 1.0));
        for (c, col) in CATEGORICAL_COLUMNS.iter().enumerate() {
            let vocab = &s.vocabularies[c];
            let slot = vocab.get(record.categorical(col)).copied().unwrap_or(vocab.len());
            entries.push((s.offsets[c] + slot, 1.0));
        }
        for (j, col) in CONTINUOUS_COLUMNS.iter().enumerate() {
            let v = (record.continuous(col) - s.means[j]) / s.stds[j];
            entries.push((s.continuous_offset + j, v));
        }
        SparseFeatures::new(s.dim, entries)
    }

    /// Recovers the category of column `col` from an encoded vector; `None`
    /// for the unseen-value slot.
    pub fn decode_category(&self, x: &SparseFeatures, col: usize) -> Result<Option<String>> {
        let s = self.state()?;
        let start = s.offsets[col];
        let end = start + s.vocabularies[col].len();
        let hit = x
            .iter()
            .filter(|&(i, v)| i >= start && i <= end && v != 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i - start);
        Ok(hit.and_then(|slot| {
            s.vocabularies[col]
                .iter()
                .find(|(_, &k)| k == slot)
                .map(|(name, _)| name.clone())
        }))
    }

    /// Human-readable name of every encoded coordinate.
    pub fn feature_names(&self) -> Result<Vec<String>> {
        let s = self.state()?;
        let mut names = Vec::with_capacity(s.dim);
        names.push(format!("age<{}", AGE_BOUNDARIES[0]));
        for w in AGE_BOUNDARIES.windows(2) {
            names.push(format!("age[{},{})", w[0], w[1]));
        }
        names.push(format!("age>={}", AGE_BOUNDARIES[AGE_BOUNDARIES.len() - 1]));
        for (c, col) in CATEGORICAL_COLUMNS.iter().enumerate() {
            for value in s.vocabularies[c].keys() {
                names.push(format!("{col}={value}"));
            }
            names.push(format!("{col}=<unseen>"));
        }
        names.extend(CONTINUOUS_COLUMNS.iter().map(|c| c.to_string()));
        Ok(names)
    }
}

/// Encodes records into `(x, y = [income > 50K], z = [sex == Male])`.
pub fn encode_features(records: &[AdultRecord], codec: &AdultCodec) -> Result<Vec<LabeledExample>> {
    records
        .iter()
        .map(|r| {
            Ok(LabeledExample {
                x: Features::Sparse(codec.encode(r)?),
                y: r.label(),
                z: r.protected(),
            })
        })
        .collect()
}
