//! Dataset construction: the synthetic toy generator, UCI Adult ingestion
//! and encoding, word embeddings, bias subspaces and analogy data.

mod adult;
mod analogies;
mod embeddings;
pub mod synthetic;
mod toy;

pub use adult::{
    age_bucket, encode_features, load_adult, read_adult_file, AdultCodec, AdultRecord,
    AGE_BOUNDARIES, CATEGORICAL_COLUMNS, CONTINUOUS_COLUMNS,
};
pub use analogies::{analogy_examples, complete_analogy, load_analogies, AnalogyItem, AnalogySet};
pub use embeddings::{
    compute_bias_subspace, default_gender_pairs, load_embeddings, load_pairs, project_protected,
    write_embeddings, BiasSubspace, EmbeddingTable,
};
pub use toy::{generate_toy, ToyConfig};

use serde::{Deserialize, Serialize};

use crate::numerics::{DenseVector, Features};

/// One `(input, target, protected)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample<X = Features, Y = f64> {
    pub x: X,
    pub y: Y,
    pub z: f64,
}

/// The three query embeddings of an analogy `a : b :: c : ?`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyInput {
    pub x1: DenseVector,
    pub x2: DenseVector,
    pub x3: DenseVector,
}

pub type AnalogyExample = LabeledExample<AnalogyInput, DenseVector>;
