//! Shared fixtures for the criterion benchmarks.

use fusionkit::experiment::{SynthTask, TaskData};
use fusionkit::Tensor;

/// Deterministic dense tensor with entries in `[-1, 1]`.
pub fn dense(rows: usize, cols: usize, salt: f64) -> Tensor {
    let data = (0..rows * cols).map(|i| (i as f64 * 0.618 + salt).sin()).collect();
    Tensor::new(rows, cols, data).expect("shape matches data")
}

/// A small synthetic task sized for per-iteration timing.
pub fn small_task() -> (SynthTask, TaskData) {
    let task = SynthTask {
        samples: 256,
        max_epochs: 1,
        ..SynthTask::default()
    };
    let data = task.data(0).expect("synthetic task generates");
    (task, data)
}
