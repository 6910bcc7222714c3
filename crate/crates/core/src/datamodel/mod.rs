//! Dataset records, JSON-lines I/O, predicate frequency statistics,
//! head/body/tail partitioning and a synthetic long-tailed generator.

mod schema;
mod stats;
mod synth;

pub use schema::{load_dataset, Dataset, DatasetHeader, ImageRecord, ObjectInstance, RelationInstance, FORMAT_VERSION};
pub use stats::{
    assign_subsets, compute_frequency_table, partition_predicates, Block, FrequencyTable, PredicatePartition,
    SubsetAssignment, SubsetMode,
};
pub use synth::{generate_split, generate_synthetic, GeneratorConfig, Prototypes, SimilarPair, Split};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: invalid record: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("partition sizes {head}+{body}+{tail} do not cover {classes} positive predicate classes")]
    Cardinality {
        head: usize,
        body: usize,
        tail: usize,
        classes: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
