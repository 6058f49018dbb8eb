//! Dataset ingestion, encoding and splitting, plus synthetic generators with
//! known ground truth.
//!
//! Encoding parameters (vocabularies, standardization moments) are always
//! fitted on the train split; dev and test rows are transformed with them.

mod kmeans;
mod load;
mod schema;
mod synth;

pub use kmeans::{kmeans, KMeans, KMEANS_ITERS};
pub use load::{
    load_dataset, parse_table, split_indices, CategoricalColumn, ContinuousColumn, Dataset, Encoder, LoadReport,
    ParsedTable, RawTable, RowIssue, SplitSpec, Splits, TargetColumn,
};
pub use schema::{ColumnKind, ColumnSpec, DatasetSchema, Role, Transform};
pub use synth::{
    generating_epsilon, skewed_priors, sp_risk_class, sp_schema, synth_gmm, synth_nb, synth_sp, GmmSynthConfig,
    GroundTruth, NbSynthConfig, SpSynthConfig, SynthOutput, SP_AGE_BANDS, SP_CHARGES, SP_GENDERS, SP_RACES,
};
