use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use metahdr_core::meta::{BatchExecutor, JobResult, Sequential};

/// Runs meta-batch jobs on up to `threads` scoped worker threads. Results
/// come back in job order, so reductions downstream do not depend on
/// scheduling.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedExecutor {
    pub threads: usize,
}

impl BatchExecutor for ThreadedExecutor {
    fn run(&self, jobs: usize, f: &(dyn Fn(usize) -> JobResult + Sync)) -> Vec<JobResult> {
        let workers = self.threads.min(jobs);
        if workers <= 1 {
            return Sequential.run(jobs, f);
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<JobResult>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs {
                        break;
                    }
                    let r = f(i);
                    *slots[i].lock().expect("result slot") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_job_order() {
        let f = |i: usize| -> JobResult { Ok(vec![i as f64, (i * i) as f64]) };
        for threads in [1, 2, 3, 8] {
            let got: Vec<_> = ThreadedExecutor { threads }
                .run(7, &f)
                .into_iter()
                .map(Result::unwrap)
                .collect();
            let want: Vec<_> = (0..7).map(|i| f(i).unwrap()).collect();
            assert_eq!(got, want);
        }
    }
}
