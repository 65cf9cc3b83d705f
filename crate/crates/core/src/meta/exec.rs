use alloc::vec::Vec;

use super::MetaError;

/// Per-job output, packed as plain numbers so jobs can run on any thread.
pub type JobResult = Result<Vec<f64>, MetaError>;

/// Runs `jobs` independent jobs and returns their results in job order.
pub trait BatchExecutor: Sync {
    fn run(&self, jobs: usize, f: &(dyn Fn(usize) -> JobResult + Sync)) -> Vec<JobResult>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchExecutor for Sequential {
    fn run(&self, jobs: usize, f: &(dyn Fn(usize) -> JobResult + Sync)) -> Vec<JobResult> {
        (0..jobs).map(f).collect()
    }
}
