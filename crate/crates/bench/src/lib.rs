//! Shared fixtures for the criterion benchmarks.

use eagernet_core::dataset::{Dataset, PrepareOptions, SplitPart, Subset};
use eagernet_core::model::{EagerNet, ModelConfig};
use eagernet_core::synthetic::CheckerTask;
use eagernet_core::LabelMode;

/// A prepared checkerboard dataset of `samples` rows.
pub fn checker_dataset(samples: usize) -> Dataset {
    let task = CheckerTask {
        samples,
        ..CheckerTask::default()
    };
    Dataset::prepare(task.feature_names(), task.generate(7), PrepareOptions::default())
        .expect("synthetic data prepares")
}

pub fn test_subset(ds: &Dataset) -> Subset {
    ds.subset(SplitPart::Test)
}

/// Untrained multiclass model of the given shape.
pub fn model(input_width: usize, depth: usize, width: usize) -> EagerNet {
    EagerNet::init(
        ModelConfig::new(input_width, depth, width, LabelMode::Multiclass, 3),
        1,
    )
    .expect("valid config")
}
