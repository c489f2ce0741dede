//! Analogy questions (`a : b :: c : d`) and cosine-ranked completion.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::AnalogyPredictor;
use crate::numerics::dot;

use super::embeddings::{project_protected, BiasSubspace, EmbeddingTable};
use super::{AnalogyExample, AnalogyInput, LabeledExample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogyItem {
    pub a: String,
    pub b: String,
    pub c: String,
    pub d: String,
    pub section: String,
}

impl AnalogyItem {
    pub fn new(a: &str, b: &str, c: &str, d: &str, section: &str) -> Self {
        AnalogyItem {
            a: a.into(),
            b: b.into(),
            c: c.into(),
            d: d.into(),
            section: section.into(),
        }
    }

    fn words(&self) -> [&str; 4] {
        [&self.a, &self.b, &self.c, &self.d]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalogySet {
    pub items: Vec<AnalogyItem>,
    /// Lines dropped because a word was out of vocabulary.
    pub dropped: usize,
}

/// Parses an analogy file, keeping only items fully covered by `table`.
pub fn load_analogies(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<AnalogySet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut set = AnalogySet::default();
    let mut section = String::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix(':') {
            section = name.trim().to_string();
            continue;
        }
        let words: Vec<&str> = trimmed.split_whitespace().collect();
        let [a, b, c, d] = words.as_slice() else {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 4 words, found {}", words.len()),
            ));
        };
        let item = AnalogyItem::new(a, b, c, d, &section);
        if item.words().iter().all(|w| table.contains(w)) {
            set.items.push(item);
        } else {
            set.dropped += 1;
        }
    }
    Ok(set)
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let denom = dot(a, a)?.sqrt() * dot(b, b)?.sqrt();
    Ok(if denom > 0.0 { dot(a, b)? / denom } else { 0.0 })
}

/// Top `top_n` completions of `a : b :: c : ?` by cosine similarity, never
/// returning the query words. With a transform the query is its output,
/// otherwise the plain offset vector `e(b) + e(c) - e(a)`.
pub fn complete_analogy(
    table: &EmbeddingTable,
    a: &str,
    b: &str,
    c: &str,
    transform: Option<&AnalogyPredictor>,
    top_n: usize,
) -> Result<Vec<(String, f64)>> {
    let (ea, eb, ec) = (table.vector(a)?, table.vector(b)?, table.vector(c)?);
    let query = match transform {
        Some(t) => t.forward(ea, eb, ec)?,
        None => AnalogyPredictor::analogy_vector(ea, eb, ec)?,
    };
    let mut scored = Vec::with_capacity(table.len());
    for (word, v) in table.iter() {
        if word == a || word == b || word == c {
            continue;
        }
        scored.push((word.to_string(), cosine(&query, v)?));
    }
    // Stable sort keeps file order among exact ties.
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(Ordering::Equal));
    scored.truncate(top_n);
    Ok(scored)
}

/// Training triples: inputs are the first three vectors, the target is the
/// fourth, and the protected value is the target's coordinate along `g`.
pub fn analogy_examples(
    table: &EmbeddingTable,
    items: &[AnalogyItem],
    subspace: &BiasSubspace,
) -> Result<Vec<AnalogyExample>> {
    items
        .iter()
        .map(|it| {
            let y = table.vector(&it.d)?.clone();
            let z = project_protected(&y, subspace)?;
            Ok(LabeledExample {
                x: AnalogyInput {
                    x1: table.vector(&it.a)?.clone(),
                    x2: table.vector(&it.b)?.clone(),
                    x3: table.vector(&it.c)?.clone(),
                },
                y,
                z,
            })
        })
        .collect()
}
