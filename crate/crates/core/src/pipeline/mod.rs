//! The resumable stage runner. Each stage reads its inputs from JSONL files
//! in the run directory, appends its outputs line by line, and records its
//! completion in a manifest keyed by a digest of the semantic configuration.
//! Stage files are the only contract between stages, so a run can be stopped,
//! inspected, and resumed at any point.

mod config;
mod io;
mod manifest;
mod stages;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use thiserror::Error;

use crate::conflict::ConflictError;
use crate::dataset::DatasetError;
use crate::eval::EvalError;
use crate::evidence::EvidenceError;
use crate::gateway::GatewayError;
use crate::strength::StrengthError;

pub use config::{build_gateway, RoleConfig, RunConfig, ROLE_NAMES};
pub use io::{read_jsonl, read_jsonl_resume, JsonlWriter};
pub use manifest::{RunManifest, StageCounts, StageStatus, MANIFEST_FILE};
pub use stages::{
    ExclusionRecord, Runner, Stage, ANSWERS_FILE, CONFLICT_FILE, EVAL_RECORDS_FILE, EVIDENCE_FILE,
    EXCLUSIONS_FILE, METRICS_CSV, PARAPHRASES_FILE, RATIO_BY_BIN_CSV, SCATTER_CSV,
    STAGE_COUNTS_CSV, STRENGTH_FILE, STRENGTH_HIST_CSV,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} needs completed {missing} output; run `{missing}` first")]
    MissingUpstream { stage: Stage, missing: Stage },
    #[error(
        "run directory holds a manifest for config digest {found}, but the current config digests to {expected}"
    )]
    ConfigMismatch { found: String, expected: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Corrupt {
        path: String,
        line: usize,
        detail: String,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Strength(#[from] StrengthError),
    #[error(transparent)]
    Conflict(#[from] ConflictError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl PipelineError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Runs `work` over the items on a bounded worker pool and feeds the results
/// to `commit` strictly in input order, so output files are deterministic no
/// matter how the workers interleave. On failure the error for the smallest
/// input index wins, and nothing after it is committed.
pub(crate) fn process_ordered<T, R, F, C>(
    items: &[T],
    workers: usize,
    work: F,
    mut commit: C,
) -> Result<(), PipelineError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, PipelineError> + Sync,
    C: FnMut(&T, R) -> Result<(), PipelineError>,
{
    if items.is_empty() {
        return Ok(());
    }
    let workers = workers.clamp(1, items.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<R, PipelineError>)>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let work = &work;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = work(&items[i]);
                let stop = result.is_err();
                if tx.send((i, result)).is_err() || stop {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, Result<R, PipelineError>> = BTreeMap::new();
        let mut next_commit = 0usize;
        let mut first_error: Option<PipelineError> = None;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&next_commit) {
                if first_error.is_none() {
                    match result {
                        Ok(value) => commit(&items[next_commit], value)?,
                        Err(e) => first_error = Some(e),
                    }
                }
                next_commit += 1;
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn ordered_processing_commits_in_input_order() {
        let items: Vec<usize> = (0..50).collect();
        let committed = Mutex::new(Vec::new());
        process_ordered(
            &items,
            8,
            |&i| {
                // Stagger completion so later items often finish first.
                std::thread::sleep(std::time::Duration::from_micros(((50 - i) % 7) as u64 * 50));
                Ok(i * i)
            },
            |&i, sq| {
                committed.lock().unwrap().push((i, sq));
                Ok(())
            },
        )
        .unwrap();
        let committed = committed.into_inner().unwrap();
        assert_eq!(committed.len(), 50);
        for (k, (i, sq)) in committed.iter().enumerate() {
            assert_eq!(*i, k);
            assert_eq!(*sq, k * k);
        }
    }

    #[test]
    fn first_failure_by_index_wins_and_halts_commits() {
        let items: Vec<usize> = (0..20).collect();
        let committed = Mutex::new(Vec::new());
        let err = process_ordered(
            &items,
            4,
            |&i| {
                if i == 5 || i == 11 {
                    Err(PipelineError::Config(format!("boom at {i}")))
                } else {
                    Ok(i)
                }
            },
            |&i, _| {
                committed.lock().unwrap().push(i);
                Ok(())
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("boom at 5"), "got {err}");
        let committed = committed.into_inner().unwrap();
        assert_eq!(committed, (0..5).collect::<Vec<_>>());
    }
}
