//! Text-format word embeddings and the protected (gender) direction derived
//! from definitional word pairs.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_len, dot, top_principal_components, DenseVector};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<DenseVector>,
    dim: usize,
    /// Later occurrences of already-seen words that were ignored on load.
    pub skipped_duplicates: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ..Default::default()
        }
    }

    /// Adds a word; returns `false` (and keeps the first vector) if the
    /// word is already present.
    pub fn insert(&mut self, word: &str, vector: DenseVector) -> Result<bool> {
        check_len(self.dim, vector.len())?;
        if !vector.is_finite() {
            return Err(Error::NonFinite(format!("embedding for {word:?}")));
        }
        if self.index.contains_key(word) {
            return Ok(false);
        }
        self.index.insert(word.to_string(), self.words.len());
        self.words.push(word.to_string());
        self.vectors.push(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Option<&DenseVector> {
        self.index.get(word).map(|&i| &self.vectors[i])
    }

    pub fn vector(&self, word: &str) -> Result<&DenseVector> {
        self.get(word).ok_or_else(|| Error::MissingWord(word.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseVector)> + '_ {
        self.words.iter().map(String::as_str).zip(self.vectors.iter())
    }
}

fn is_header(tokens: &[&str]) -> bool {
    tokens.len() == 2 && tokens.iter().all(|t| t.parse::<u64>().is_ok())
}

/// Loads `word v1 ... vd` lines, skipping an optional `count dim` header.
/// The first occurrence of a word wins; at most `max_vocab` words are kept.
pub fn load_embeddings(path: impl AsRef<Path>, max_vocab: Option<usize>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() || (i == 0 && is_header(&tokens)) {
            continue;
        }
        if let (Some(max), Some(t)) = (max_vocab, table.as_ref()) {
            if t.len() >= max {
                break;
            }
        }
        let values = tokens[1..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, i + 1, format!("bad number: {e}")))?;
        if values.is_empty() {
            return Err(Error::parse(path, i + 1, "word without a vector"));
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
        if values.len() != t.dim() {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {} components, found {}", t.dim(), values.len()),
            ));
        }
        let word = tokens[0];
        let fresh = t
            .insert(word, DenseVector::new(values))
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if !fresh {
            t.skipped_duplicates += 1;
            log::warn!("{}:{}: duplicate word {word:?} ignored", path.display(), i + 1);
        }
    }
    Ok(table.unwrap_or_default())
}

pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (word, v) in table.iter() {
        out.push_str(word);
        for x in v.iter() {
            out.push(' ');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// `(male, female)` definitional pairs used when no pairs file is given.
pub fn default_gender_pairs() -> Vec<(String, String)> {
    [
        ("he", "she"),
        ("his", "her"),
        ("man", "woman"),
        ("himself", "herself"),
        ("son", "daughter"),
        ("father", "mother"),
        ("guy", "gal"),
        ("boy", "girl"),
        ("male", "female"),
        ("John", "Mary"),
    ]
    .into_iter()
    .map(|(m, f)| (m.to_string(), f.to_string()))
    .collect()
}

/// Reads `male_word female_word` lines.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            [m, f] => pairs.push((m.to_string(), f.to_string())),
            _ => return Err(Error::parse(path, i + 1, "expected two words")),
        }
    }
    Ok(pairs)
}

/// Span of the top principal directions of the pair differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSubspace {
    pub directions: Vec<DenseVector>,
    pub k: usize,
    pub source_pairs: Vec<(String, String)>,
}

impl BiasSubspace {
    /// Leading direction `g`.
    pub fn g(&self) -> &DenseVector {
        &self.directions[0]
    }
}

/// Principal directions of the `(male, female)` pair differences.
///
/// Each pair contributes its two words centred on the pair midpoint, i.e.
/// `±(e(female) - e(male)) / 2`, so a shared offset across pairs survives
/// centring and becomes the leading component. The leading direction is
/// oriented so that `gᵀ(e(she) - e(he)) >= 0` when that pair is present.
pub fn compute_bias_subspace(
    table: &EmbeddingTable,
    pairs: &[(String, String)],
    k: usize,
) -> Result<BiasSubspace> {
    if k == 0 || k > pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be between 1 and the number of pairs ({})",
            pairs.len()
        )));
    }
    let mut rows = Vec::with_capacity(2 * pairs.len());
    for (male, female) in pairs {
        let diff = table.vector(female)?.sub(table.vector(male)?)?;
        rows.push(diff.scaled(0.5));
        rows.push(diff.scaled(-0.5));
    }
    let mut directions = top_principal_components(&rows, k)?;
    let anchor = pairs
        .iter()
        .find(|(m, f)| m == "he" && f == "she")
        .map(|(m, f)| table.vector(f).and_then(|fv| fv.sub(table.vector(m)?)))
        .transpose()?;
    if let Some(anchor) = anchor {
        if dot(&directions[0], &anchor)? < 0.0 {
            directions[0] = directions[0].scaled(-1.0);
        }
    }
    Ok(BiasSubspace {
        directions,
        k,
        source_pairs: pairs.to_vec(),
    })
}

/// Protected coordinate `gᵀy` of an embedding.
pub fn project_protected(y: &[f64], subspace: &BiasSubspace) -> Result<f64> {
    dot(subspace.g(), y)
}
