//! Rebuilds a run's final state from its event log.

use std::collections::BTreeMap;

use thiserror::Error;

use super::metrics::RunMetrics;
use super::run::FinalState;
use crate::eventlog::{self, LogError, RecordKind};
use crate::ledger::{Ledger, LedgerEntry, LedgerError};
use crate::protocol::Phase;
use crate::ProcessId;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("record {index}: malformed ledger entry ({message})")]
    Entry { index: usize, message: String },
    #[error("record {index}: ledger entry does not replay: {source}")]
    Ledger { index: usize, source: LedgerError },
    #[error("record {index}: recorded final state differs from the replayed one")]
    FinalState { index: usize },
}

impl ReplayError {
    pub fn record_index(&self) -> Option<usize> {
        match self {
            ReplayError::Log(e) => e.record_index(),
            ReplayError::Entry { index, .. }
            | ReplayError::Ledger { index, .. }
            | ReplayError::FinalState { index } => Some(*index),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayState {
    pub ledger: Ledger,
    pub phases: BTreeMap<ProcessId, Phase>,
    pub metrics: RunMetrics,
    pub records: usize,
}

/// Verifies the digest chain, re-executes every ledger entry and checks the
/// result against the run's closing snapshot, when there is one.
pub fn replay(bytes: &[u8]) -> Result<ReplayState, ReplayError> {
    let records = eventlog::verify_bytes(bytes)?;
    let mut ledger = Ledger::new();
    let mut phases = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        match r.kind {
            RecordKind::Ledger => {
                let entry: LedgerEntry = r.payload_as().map_err(|e| ReplayError::Entry {
                    index,
                    message: e.to_string(),
                })?;
                ledger
                    .apply_entry(&entry)
                    .map_err(|source| ReplayError::Ledger { index, source })?;
            }
            RecordKind::Protocol => {
                if let (Some(pid), Some(phase)) =
                    (r.process, r.phase.as_deref().and_then(Phase::parse))
                {
                    phases.insert(pid, phase);
                }
            }
            RecordKind::Sim if r.op == "final" => {
                let recorded: FinalState = r
                    .payload_as()
                    .map_err(|_| ReplayError::FinalState { index })?;
                let rebuilt = FinalState::of(
                    recorded.tick,
                    &ledger,
                    phases
                        .iter()
                        .map(|(p, ph): (&ProcessId, &Phase)| (*p, ph.to_string()))
                        .collect(),
                );
                if rebuilt != recorded {
                    return Err(ReplayError::FinalState { index });
                }
            }
            RecordKind::Sim => {}
        }
    }
    let metrics = RunMetrics::from_records(&records);
    Ok(ReplayState {
        ledger,
        phases,
        metrics,
        records: records.len(),
    })
}
