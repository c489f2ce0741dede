//! A small embedding vocabulary with a planted gender axis, for exercising
//! the analogy debiasing experiment without pretrained vectors.
//!
//! Coordinate 0 carries gender. Every other word meaning lives in the
//! remaining coordinates. Gendered word pairs sit at `∓0.5` on the gender
//! axis around a shared base; occupations carry a planted skew so that
//! `he : she :: doctor : ?` prefers a stereotyped neighbour until the gender
//! component of the query is removed.

use crate::error::Result;
use crate::numerics::{DenseVector, SeededRng};

use super::analogies::AnalogyItem;
use super::embeddings::{default_gender_pairs, EmbeddingTable};

pub const PLANTED_DIM: usize = 32;
const GENDER_OFFSET: f64 = 0.5;
const NOISE: f64 = 0.02;

/// Gendered concepts beyond the definitional pairs.
const EXTRA_PAIRS: [(&str, &str); 5] = [
    ("king", "queen"),
    ("brother", "sister"),
    ("uncle", "aunt"),
    ("husband", "wife"),
    ("prince", "princess"),
];

const COUNTRIES: [(&str, &str); 8] = [
    ("france", "paris"),
    ("italy", "rome"),
    ("japan", "tokyo"),
    ("egypt", "cairo"),
    ("peru", "lima"),
    ("kenya", "nairobi"),
    ("norway", "oslo"),
    ("canada", "ottawa"),
];

/// `(occupation, stereotyped female neighbour, neutral synonym)`.
const OCCUPATIONS: [(&str, &str, &str); 3] = [
    ("doctor", "nurse", "physician"),
    ("programmer", "homemaker", "coder"),
    ("boss", "secretary", "manager"),
];

/// A query whose top completion should move once gender is removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiasedProbe {
    pub a: String,
    pub b: String,
    pub c: String,
    pub biased: String,
    pub debiased: String,
}

#[derive(Debug, Clone)]
pub struct PlantedGender {
    pub table: EmbeddingTable,
    pub pairs: Vec<(String, String)>,
    /// Training and evaluation analogies (gendered pairs, country/capital).
    pub analogies: Vec<AnalogyItem>,
    /// Queries whose top-1 answer (`d`) must survive debiasing.
    pub neutral_probes: Vec<AnalogyItem>,
    pub biased_probes: Vec<BiasedProbe>,
}

struct Builder {
    rng: SeededRng,
    table: EmbeddingTable,
}

impl Builder {
    /// Unit vector in the non-gender coordinates.
    fn base(&mut self) -> DenseVector {
        let mut v = DenseVector::zeros(PLANTED_DIM);
        for x in v.iter_mut().skip(1) {
            *x = self.rng.standard_normal();
        }
        v.normalized().expect("nonzero draw")
    }

    /// Non-gender unit vector orthogonal to `to`, scaled to `len`.
    fn offset(&mut self, to: &DenseVector, len: f64) -> DenseVector {
        let r = self.base();
        let along = r.dot(to).expect("same length") / to.norm_sq();
        let perp = r.sub(&to.scaled(along)).expect("same length");
        perp.normalized().expect("nonzero draw").scaled(len)
    }

    fn insert(&mut self, word: &str, base: &DenseVector, gender: f64) -> Result<()> {
        let mut v = base.clone();
        v[0] += gender;
        for x in v.iter_mut() {
            *x += NOISE * self.rng.standard_normal();
        }
        self.table.insert(word, v)?;
        Ok(())
    }
}

/// Builds the fixture deterministically from `seed`.
pub fn planted_gender(seed: u64) -> Result<PlantedGender> {
    let mut b = Builder {
        rng: SeededRng::new(seed),
        table: EmbeddingTable::new(PLANTED_DIM),
    };

    let pairs = default_gender_pairs();
    let mut concepts = pairs.clone();
    concepts.extend(EXTRA_PAIRS.iter().map(|(m, f)| (m.to_string(), f.to_string())));
    for (m, f) in &concepts {
        let base = b.base();
        b.insert(m, &base, -GENDER_OFFSET)?;
        b.insert(f, &base, GENDER_OFFSET)?;
    }

    let relation = b.base().scaled(0.8);
    for (country, capital) in COUNTRIES {
        let base = b.base();
        b.insert(country, &base, 0.0)?;
        b.insert(capital, &base.add(&relation)?, 0.0)?;
    }

    for (occupation, stereotyped, neutral) in OCCUPATIONS {
        let base = b.base();
        let near = b.offset(&base, 0.15);
        let synonym = b.offset(&base, 0.25);
        b.insert(occupation, &base, -0.35)?;
        b.insert(stereotyped, &base.add(&near)?, 0.6)?;
        b.insert(neutral, &base.add(&synonym)?, -0.05)?;
    }

    let mut analogies = Vec::new();
    for (i, (m1, f1)) in concepts.iter().enumerate() {
        for (j, (m2, f2)) in concepts.iter().enumerate() {
            if i != j {
                analogies.push(AnalogyItem::new(m1, f1, m2, f2, "gendered"));
                analogies.push(AnalogyItem::new(f1, m1, f2, m2, "gendered"));
            }
        }
    }
    for (i, (c1, k1)) in COUNTRIES.iter().enumerate() {
        for (j, (c2, k2)) in COUNTRIES.iter().enumerate() {
            if i != j {
                analogies.push(AnalogyItem::new(c1, k1, c2, k2, "capitals"));
                analogies.push(AnalogyItem::new(k1, c1, k2, c2, "capitals"));
            }
        }
    }

    let neutral_probes = vec![
        AnalogyItem::new("man", "woman", "he", "she", "gendered"),
        AnalogyItem::new("man", "woman", "king", "queen", "gendered"),
        AnalogyItem::new("father", "mother", "brother", "sister", "gendered"),
        AnalogyItem::new("france", "paris", "italy", "rome", "capitals"),
        AnalogyItem::new("japan", "tokyo", "kenya", "nairobi", "capitals"),
        AnalogyItem::new("oslo", "norway", "lima", "peru", "capitals"),
    ];
    let biased_probes = OCCUPATIONS
        .iter()
        .map(|(occupation, stereotyped, neutral)| BiasedProbe {
            a: "he".into(),
            b: "she".into(),
            c: occupation.to_string(),
            biased: stereotyped.to_string(),
            debiased: neutral.to_string(),
        })
        .collect();

    Ok(PlantedGender {
        table: b.table,
        pairs,
        analogies,
        neutral_probes,
        biased_probes,
    })
}
