use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use serde_json::Value;

use crate::config::JobConfig;
use crate::error::{EXIT_OK, EXIT_PARTIAL_SWEEP};
use crate::jobs::execute;
use crate::output::report_json;

pub struct SweepOutcome {
    /// One entry per job in input order: the report, or `{"error": ..}`.
    pub entries: Vec<Value>,
    pub failures: usize,
}

impl SweepOutcome {
    pub fn exit_code(&self) -> u8 {
        if self.failures == 0 {
            EXIT_OK
        } else {
            EXIT_PARTIAL_SWEEP
        }
    }
}

/// Run `jobs` on at most `parallelism` worker threads.
pub fn run_sweep(jobs: &[JobConfig], parallelism: usize) -> SweepOutcome {
    let slots: Vec<OnceLock<Value>> = jobs.iter().map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    let workers = parallelism.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let entry = match execute(job) {
                    Ok(report) => report_json(&report),
                    Err(e) => {
                        let mut v = e.to_json();
                        v["index"] = i.into();
                        v
                    }
                };
                slots[i].set(entry).expect("each index is claimed once");
            });
        }
    });
    let entries: Vec<Value> = slots.into_iter().map(|s| s.into_inner().expect("all jobs ran")).collect();
    let failures = entries.iter().filter(|e| e.get("error").is_some()).count();
    SweepOutcome { entries, failures }
}
