//! Escrow accounting in whole token units.
//!
//! Every token is in exactly one place: an agent's free balance, a live
//! escrow, or the burn counter. Deposits are the only source of new tokens,
//! so `free + escrowed + burned == deposited` holds after every operation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{self, exact_amount, Scalar};
use crate::{AgentId, Amount, ProcessId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EscrowPurpose {
    SolverBond,
    ChallengerBond(u32),
    VerifierExposure(u32),
    TaskFee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EscrowKey {
    pub process: ProcessId,
    pub agent: AgentId,
    pub purpose: EscrowPurpose,
}

impl EscrowKey {
    pub fn new(process: ProcessId, agent: AgentId, purpose: EscrowPurpose) -> Self {
        EscrowKey {
            process,
            agent,
            purpose,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Account {
    Free(AgentId),
    Escrow(EscrowKey),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryKind {
    Deposit {
        agent: AgentId,
        amount: Amount,
    },
    Lock {
        key: EscrowKey,
        amount: Amount,
    },
    /// Returns `amount` of the escrow to its owner's free balance.
    Release {
        key: EscrowKey,
        amount: Amount,
    },
    Transfer {
        from: Account,
        to: AgentId,
        amount: Amount,
    },
    /// Consumes the whole escrow: `burned` destroyed, `awarded` paid to `to`.
    Slash {
        key: EscrowKey,
        to: AgentId,
        burned: Amount,
        awarded: Amount,
    },
    Burn {
        key: EscrowKey,
        amount: Amount,
    },
    Freeze {
        process: ProcessId,
    },
}

impl EntryKind {
    pub fn name(&self) -> &'static str {
        match self {
            EntryKind::Deposit { .. } => "deposit",
            EntryKind::Lock { .. } => "lock",
            EntryKind::Release { .. } => "release",
            EntryKind::Transfer { .. } => "transfer",
            EntryKind::Slash { .. } => "slash",
            EntryKind::Burn { .. } => "burn",
            EntryKind::Freeze { .. } => "freeze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub tick: Tick,
    pub kind: EntryKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettlementReason {
    SolverSlashed,
    ChallengerSlashed,
    VerifierSlashed,
    TaskFee,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedTransfer {
    pub from: EscrowKey,
    pub to: AgentId,
    pub amount: Amount,
    pub reason: SettlementReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedBurn {
    pub from: EscrowKey,
    pub amount: Amount,
    pub reason: SettlementReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedRefund {
    pub escrow: EscrowKey,
    pub amount: Amount,
}

/// Escrow draws produced by settlement planning. Applied as transfers, then
/// burns, then refunds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementPlan {
    pub transfers: Vec<PlannedTransfer>,
    pub burns: Vec<PlannedBurn>,
    pub refunds: Vec<PlannedRefund>,
}

impl SettlementPlan {
    pub fn is_empty(&self) -> bool {
        self.transfers.is_empty() && self.burns.is_empty() && self.refunds.is_empty()
    }

    pub fn len(&self) -> usize {
        self.transfers.len() + self.burns.len() + self.refunds.len()
    }

    /// Total drawn from each escrow by the plan.
    pub fn draws(&self) -> BTreeMap<EscrowKey, Amount> {
        let mut out = BTreeMap::new();
        for (key, amount) in self.items() {
            *out.entry(key).or_insert(0) += amount;
        }
        out
    }

    pub fn burned(&self) -> Amount {
        self.burns.iter().map(|b| b.amount).sum()
    }

    fn items(&self) -> impl Iterator<Item = (EscrowKey, Amount)> + '_ {
        self.transfers
            .iter()
            .map(|t| (t.from, t.amount))
            .chain(self.burns.iter().map(|b| (b.from, b.amount)))
            .chain(self.refunds.iter().map(|r| (r.escrow, r.amount)))
    }

    /// Net balance change per agent once the plan is applied, counting an
    /// escrow draw as a loss to its owner only when it leaves the owner.
    pub fn net_changes(&self) -> BTreeMap<AgentId, i128> {
        let mut net: BTreeMap<AgentId, i128> = BTreeMap::new();
        for t in &self.transfers {
            *net.entry(t.from.agent).or_default() -= i128::from(t.amount);
            *net.entry(t.to).or_default() += i128::from(t.amount);
        }
        for b in &self.burns {
            *net.entry(b.from.agent).or_default() -= i128::from(b.amount);
        }
        net.retain(|_, v| *v != 0);
        net
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("{agent} has {available} free, needs {needed}")]
    InsufficientBalance {
        agent: AgentId,
        needed: Amount,
        available: Amount,
    },
    #[error("escrow {0:?} already exists")]
    DuplicateEscrow(EscrowKey),
    #[error("escrow {0:?} does not exist")]
    MissingEscrow(EscrowKey),
    #[error("escrow {key:?} holds {available}, needs {needed}")]
    InsufficientEscrow {
        key: EscrowKey,
        needed: Amount,
        available: Amount,
    },
    #[error("escrows of {0} are frozen")]
    Frozen(ProcessId),
    #[error("burn share must lie in [0, 1]")]
    InvalidBurnShare,
    #[error("balance overflow")]
    Overflow,
    #[error("settlement item {index} failed: {source}")]
    PlanItem {
        index: usize,
        #[source]
        source: Box<LedgerError>,
    },
    #[error("replayed entry {seq} out of order (expected {expected})")]
    OutOfOrder { seq: u64, expected: u64 },
}

pub type Result<T, E = LedgerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    free: BTreeMap<AgentId, Amount>,
    escrows: BTreeMap<EscrowKey, Amount>,
    frozen: BTreeSet<ProcessId>,
    burned: u128,
    deposited: u128,
    next_seq: u64,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn free(&self, agent: AgentId) -> Amount {
        self.free.get(&agent).copied().unwrap_or(0)
    }

    pub fn escrow(&self, key: &EscrowKey) -> Option<Amount> {
        self.escrows.get(key).copied()
    }

    pub fn escrowed_by(&self, agent: AgentId) -> Amount {
        self.escrows
            .iter()
            .filter(|(k, _)| k.agent == agent)
            .map(|(_, v)| *v)
            .sum()
    }

    pub fn escrows(&self) -> impl Iterator<Item = (&EscrowKey, &Amount)> {
        self.escrows.iter()
    }

    pub fn escrows_of(&self, process: ProcessId) -> BTreeMap<EscrowKey, Amount> {
        self.escrows
            .range(Self::process_range(process))
            .map(|(k, v)| (*k, *v))
            .collect()
    }

    pub fn balances(&self) -> &BTreeMap<AgentId, Amount> {
        &self.free
    }

    pub fn is_frozen(&self, process: ProcessId) -> bool {
        self.frozen.contains(&process)
    }

    pub fn burned(&self) -> u128 {
        self.burned
    }

    pub fn deposited(&self) -> u128 {
        self.deposited
    }

    pub fn total_free(&self) -> u128 {
        self.free.values().map(|v| u128::from(*v)).sum()
    }

    pub fn total_escrowed(&self) -> u128 {
        self.escrows.values().map(|v| u128::from(*v)).sum()
    }

    pub fn conservation_holds(&self) -> bool {
        self.total_free() + self.total_escrowed() + self.burned == self.deposited
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn process_range(process: ProcessId) -> std::ops::RangeInclusive<EscrowKey> {
        let lo = EscrowKey::new(process, AgentId(0), EscrowPurpose::SolverBond);
        let hi = EscrowKey::new(process, AgentId(u32::MAX), EscrowPurpose::TaskFee);
        lo..=hi
    }

    fn emit(&mut self, tick: Tick, kind: EntryKind) -> LedgerEntry {
        let entry = LedgerEntry {
            seq: self.next_seq,
            tick,
            kind,
        };
        self.next_seq += 1;
        entry
    }

    fn credit(&mut self, agent: AgentId, amount: Amount) -> Result<()> {
        let slot = self.free.entry(agent).or_insert(0);
        *slot = slot.checked_add(amount).ok_or(LedgerError::Overflow)?;
        Ok(())
    }

    fn check_free(&self, agent: AgentId, amount: Amount) -> Result<()> {
        let available = self.free(agent);
        if available < amount {
            return Err(LedgerError::InsufficientBalance {
                agent,
                needed: amount,
                available,
            });
        }
        Ok(())
    }

    fn check_escrow(&self, key: &EscrowKey, amount: Amount) -> Result<Amount> {
        if self.frozen.contains(&key.process) {
            return Err(LedgerError::Frozen(key.process));
        }
        let available = self.escrow(key).ok_or(LedgerError::MissingEscrow(*key))?;
        if available < amount {
            return Err(LedgerError::InsufficientEscrow {
                key: *key,
                needed: amount,
                available,
            });
        }
        Ok(available)
    }

    fn draw(&mut self, key: &EscrowKey, amount: Amount) {
        let remaining = self.escrows[key] - amount;
        if remaining == 0 {
            self.escrows.remove(key);
        } else {
            self.escrows.insert(*key, remaining);
        }
    }

    /// Mints `amount` into the agent's free balance.
    pub fn deposit(&mut self, agent: AgentId, amount: Amount, tick: Tick) -> Result<LedgerEntry> {
        if amount == 0 {
            return Err(LedgerError::NonPositiveAmount);
        }
        self.credit(agent, amount)?;
        self.deposited += u128::from(amount);
        Ok(self.emit(tick, EntryKind::Deposit { agent, amount }))
    }

    pub fn lock(&mut self, key: EscrowKey, amount: Amount, tick: Tick) -> Result<LedgerEntry> {
        if amount == 0 {
            return Err(LedgerError::NonPositiveAmount);
        }
        if self.frozen.contains(&key.process) {
            return Err(LedgerError::Frozen(key.process));
        }
        if self.escrows.contains_key(&key) {
            return Err(LedgerError::DuplicateEscrow(key));
        }
        self.check_free(key.agent, amount)?;
        *self.free.get_mut(&key.agent).expect("checked above") -= amount;
        self.escrows.insert(key, amount);
        Ok(self.emit(tick, EntryKind::Lock { key, amount }))
    }

    /// Returns the whole escrow to its owner.
    pub fn release(&mut self, key: EscrowKey, tick: Tick) -> Result<LedgerEntry> {
        let amount = self.check_escrow(&key, 0)?;
        self.release_part(key, amount, tick)
    }

    fn release_part(&mut self, key: EscrowKey, amount: Amount, tick: Tick) -> Result<LedgerEntry> {
        if amount == 0 {
            return Err(LedgerError::NonPositiveAmount);
        }
        self.check_escrow(&key, amount)?;
        self.credit(key.agent, amount)?;
        self.draw(&key, amount);
        Ok(self.emit(tick, EntryKind::Release { key, amount }))
    }

    /// Consumes the escrow: `round(burn_share * amount)` is burned (half away
    /// from zero) and the exact remainder goes to `to`.
    pub fn slash<S: Scalar>(
        &mut self,
        key: EscrowKey,
        to: AgentId,
        burn_share: &S,
        tick: Tick,
    ) -> Result<LedgerEntry> {
        let share = burn_share.to_exact().ok_or(LedgerError::InvalidBurnShare)?;
        if !scalar::is_unit_interval(&share) {
            return Err(LedgerError::InvalidBurnShare);
        }
        let amount = self.check_escrow(&key, 0)?;
        let burned = scalar::round_to_amount(&(share * exact_amount(amount)))
            .expect("share of an amount fits in the amount");
        let awarded = amount - burned;
        self.credit(to, awarded)?;
        self.escrows.remove(&key);
        self.burned += u128::from(burned);
        Ok(self.emit(
            tick,
            EntryKind::Slash {
                key,
                to,
                burned,
                awarded,
            },
        ))
    }

    /// Moves free balance between agents.
    pub fn transfer(
        &mut self,
        from: AgentId,
        to: AgentId,
        amount: Amount,
        tick: Tick,
    ) -> Result<LedgerEntry> {
        if amount == 0 {
            return Err(LedgerError::NonPositiveAmount);
        }
        self.check_free(from, amount)?;
        if from != to {
            self.credit(to, amount)?;
            *self.free.get_mut(&from).expect("checked above") -= amount;
        }
        Ok(self.emit(
            tick,
            EntryKind::Transfer {
                from: Account::Free(from),
                to,
                amount,
            },
        ))
    }

    fn escrow_transfer(
        &mut self,
        key: EscrowKey,
        to: AgentId,
        amount: Amount,
        tick: Tick,
    ) -> Result<LedgerEntry> {
        if amount == 0 {
            return Err(LedgerError::NonPositiveAmount);
        }
        self.check_escrow(&key, amount)?;
        self.credit(to, amount)?;
        self.draw(&key, amount);
        Ok(self.emit(
            tick,
            EntryKind::Transfer {
                from: Account::Escrow(key),
                to,
                amount,
            },
        ))
    }

    fn burn(&mut self, key: EscrowKey, amount: Amount, tick: Tick) -> Result<LedgerEntry> {
        if amount == 0 {
            return Err(LedgerError::NonPositiveAmount);
        }
        self.check_escrow(&key, amount)?;
        self.draw(&key, amount);
        self.burned += u128::from(amount);
        Ok(self.emit(tick, EntryKind::Burn { key, amount }))
    }

    /// Locks every escrow of `process` in place.
    pub fn freeze(&mut self, process: ProcessId, tick: Tick) -> LedgerEntry {
        self.frozen.insert(process);
        self.emit(tick, EntryKind::Freeze { process })
    }

    /// Applies every item of the plan or none of them.
    pub fn apply_settlement(
        &mut self,
        plan: &SettlementPlan,
        tick: Tick,
    ) -> Result<Vec<LedgerEntry>> {
        let mut remaining: BTreeMap<EscrowKey, Amount> = BTreeMap::new();
        for (index, (key, amount)) in plan.items().enumerate() {
            let fail = |source| LedgerError::PlanItem {
                index,
                source: Box::new(source),
            };
            if amount == 0 {
                return Err(fail(LedgerError::NonPositiveAmount));
            }
            let available = match remaining.get(&key) {
                Some(left) => *left,
                None => self.check_escrow(&key, 0).map_err(fail)?,
            };
            if available < amount {
                return Err(fail(LedgerError::InsufficientEscrow {
                    key,
                    needed: amount,
                    available,
                }));
            }
            remaining.insert(key, available - amount);
        }
        // Credits cannot overflow unless a balance is near u64::MAX; stage on
        // a copy so that even that case leaves the ledger untouched.
        let mut staged = self.clone();
        let mut entries = Vec::with_capacity(plan.len());
        let mut index = 0;
        let mut step = |r: Result<LedgerEntry>, entries: &mut Vec<LedgerEntry>| -> Result<()> {
            let entry = r.map_err(|source| LedgerError::PlanItem {
                index,
                source: Box::new(source),
            })?;
            entries.push(entry);
            index += 1;
            Ok(())
        };
        for t in &plan.transfers {
            step(
                staged.escrow_transfer(t.from, t.to, t.amount, tick),
                &mut entries,
            )?;
        }
        for b in &plan.burns {
            step(staged.burn(b.from, b.amount, tick), &mut entries)?;
        }
        for r in &plan.refunds {
            step(staged.release_part(r.escrow, r.amount, tick), &mut entries)?;
        }
        *self = staged;
        Ok(entries)
    }

    /// Re-executes a recorded entry. The entry's sequence number must be the
    /// next one this ledger would assign.
    pub fn apply_entry(&mut self, entry: &LedgerEntry) -> Result<()> {
        if entry.seq != self.next_seq {
            return Err(LedgerError::OutOfOrder {
                seq: entry.seq,
                expected: self.next_seq,
            });
        }
        let tick = entry.tick;
        let replayed = match entry.kind.clone() {
            EntryKind::Deposit { agent, amount } => self.deposit(agent, amount, tick)?,
            EntryKind::Lock { key, amount } => self.lock(key, amount, tick)?,
            EntryKind::Release { key, amount } => self.release_part(key, amount, tick)?,
            EntryKind::Transfer {
                from: Account::Free(from),
                to,
                amount,
            } => self.transfer(from, to, amount, tick)?,
            EntryKind::Transfer {
                from: Account::Escrow(key),
                to,
                amount,
            } => self.escrow_transfer(key, to, amount, tick)?,
            EntryKind::Slash {
                key,
                to,
                burned,
                awarded,
            } => {
                let held = self.check_escrow(&key, 0)?;
                if held != burned + awarded {
                    return Err(LedgerError::InsufficientEscrow {
                        key,
                        needed: burned + awarded,
                        available: held,
                    });
                }
                self.credit(to, awarded)?;
                self.escrows.remove(&key);
                self.burned += u128::from(burned);
                self.emit(
                    tick,
                    EntryKind::Slash {
                        key,
                        to,
                        burned,
                        awarded,
                    },
                )
            }
            EntryKind::Burn { key, amount } => self.burn(key, amount, tick)?,
            EntryKind::Freeze { process } => self.freeze(process, tick),
        };
        debug_assert_eq!(&replayed, entry);
        Ok(())
    }

    /// Rebuilds a ledger from a recorded entry sequence.
    pub fn replay<'a>(entries: impl IntoIterator<Item = &'a LedgerEntry>) -> Result<Ledger> {
        let mut ledger = Ledger::new();
        for entry in entries {
            ledger.apply_entry(entry)?;
        }
        Ok(ledger)
    }
}
