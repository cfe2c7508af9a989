//! Contextual parameter generation: language embeddings mapped to the full
//! parameter vectors of a shared encoder and decoder.

mod analysis;
mod count;
mod layout;
mod store;
mod variant;

pub use analysis::{cosine_distance_matrix, write_distance_tsv, LanguageEmbeddingTable};
pub use count::{count_trainable_parameters, cpg_formula, pairwise_formula, CountInputs};
pub use layout::{LayoutBuilder, LayoutEntry, ParamGroup, ParameterLayout};
pub use store::{ParamScope, ParamStore};
pub use variant::{language_embedding_name, reference_std, GeneratedParams, ParamGenerator, Side, VariantKind};
