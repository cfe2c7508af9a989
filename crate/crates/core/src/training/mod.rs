mod checkpoint;
mod data;
mod optimizer;
mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION, MAGIC};
pub use data::{
    low_resource_subset, make_autoencode_batch, sample_language_pair, Batch, LanguagePair, ParallelCorpus, TrainingData,
};
pub use optimizer::{AmsGrad, AmsGradConfig, Moments};
pub use trainer::{
    adapt_new_language, train, trainable_scalar_count, validation_bleu, write_metrics, DevSet, MetricRow, TrainOutcome,
    TrainingSchedule, METRICS_HEADER,
};
