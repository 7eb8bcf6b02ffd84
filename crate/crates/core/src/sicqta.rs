//! Gateway side of the query tree algorithm with successive interference
//! cancellation.
//!
//! The tree is explored depth first. Every collision signal is stored; once a
//! clean packet arrives it is cancelled from all stored collisions, and any
//! stored signal left with a single packet yields that packet, which is in
//! turn cancelled everywhere ("chain cancellation"). Pending sibling queries
//! whose subtree is fully recovered this way are never transmitted, and a
//! pending subtree known to still hold two or more packets is entered
//! directly at its left child.
//!
//! Gateway knowledge model: for a stored collision the gateway knows whether
//! its residual (signal minus every decoded packet) is empty, a single clean
//! packet, or still a collision. A pending query remembers which stored
//! signal describes its subtree once its sibling subtree is resolved; with a
//! cancellation depth limit that signal may be unusable, in which case the
//! pending query is transmitted explicitly.
//!
//! After each success the chain yields `k = 1 + (stored collisions drained by
//! the chain)`; under perfect cancellation exactly `k - 1` pending queries are
//! then skipped, which is checked at run time.

use std::collections::{btree_map, BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{
    answering, observe, participant_set, DeviceId, Query, ResolutionTrace, SlotOutcome, SlotRecord,
    SlotSignal, TreeParams,
};
use crate::qta::Step;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredCollision {
    pub slot: usize,
    pub query: Query,
    pub residual: BTreeSet<DeviceId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PendingQuery {
    query: Query,
    /// Stored collision whose residual equals this subtree's undecoded set
    /// once the sibling subtree is resolved.
    source: Option<usize>,
}

/// How the current query was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entry {
    Root,
    /// Left child of a prefix known to hold a collision.
    FirstChild {
        parent_source: Option<usize>,
    },
    /// A pending query transmitted on its own; its sibling is resolved.
    Standalone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotReport {
    pub outcome: SlotOutcome,
    /// Devices recovered by chain cancellation in this slot.
    pub cancelled: Vec<DeviceId>,
    pub next: Step,
}

#[derive(Debug, Clone)]
pub struct SicqtaState {
    params: TreeParams,
    max_cancel_depth: Option<usize>,
    pending: Vec<PendingQuery>,
    current: Query,
    entry: Entry,
    k: usize,
    store: Vec<StoredCollision>,
    /// Indices into `store` with a non-empty residual.
    live: Vec<usize>,
    decoded: BTreeMap<DeviceId, usize>,
    slots: usize,
    terminated: bool,
}

impl SicqtaState {
    /// `max_cancel_depth = None` is perfect cancellation. With `Some(c)`, a
    /// collision of more than `c` packets is never stored.
    pub fn new(params: TreeParams, max_cancel_depth: Option<usize>) -> Result<Self> {
        if max_cancel_depth == Some(0) {
            return Err(Error::Config("max cancel depth must be at least 1".into()));
        }
        Ok(Self {
            params,
            max_cancel_depth,
            pending: Vec::new(),
            current: Query::root(),
            entry: Entry::Root,
            k: 0,
            store: Vec::new(),
            live: Vec::new(),
            decoded: BTreeMap::new(),
            slots: 0,
            terminated: false,
        })
    }

    pub fn current(&self) -> Query {
        self.current
    }

    /// Chain counter after the most recent success.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Pending sibling queries, oldest first.
    pub fn pending(&self) -> Vec<Query> {
        self.pending.iter().map(|p| p.query).collect()
    }

    pub fn store(&self) -> &[StoredCollision] {
        &self.store
    }

    pub fn decoded(&self) -> &BTreeMap<DeviceId, usize> {
        &self.decoded
    }

    pub fn is_decoded(&self, id: DeviceId) -> bool {
        self.decoded.contains_key(&id)
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    fn store_collision(
        &mut self,
        slot: usize,
        query: Query,
        residual: BTreeSet<DeviceId>,
    ) -> usize {
        let idx = self.store.len();
        if !residual.is_empty() {
            self.live.push(idx);
        }
        self.store.push(StoredCollision {
            slot,
            query,
            residual,
        });
        idx
    }

    /// Cancel `clean` (and everything it unlocks) from every stored collision.
    ///
    /// Returns the devices recovered by the chain, excluding `clean`, and sets
    /// `k` to one plus the number of stored collisions the chain drained.
    pub fn chain_cancel(&mut self, clean: DeviceId) -> Vec<DeviceId> {
        let slot = self.slots;
        self.decoded.entry(clean).or_insert(slot);
        let mut recovered = Vec::new();
        let mut work = vec![clean];
        let mut drained = 0;
        while let Some(id) = work.pop() {
            let mut still_live = Vec::with_capacity(self.live.len());
            for &idx in &self.live {
                let residual = &mut self.store[idx].residual;
                residual.remove(&id);
                if residual.len() == 1 {
                    let last = *residual.iter().next().unwrap();
                    residual.clear();
                    if let btree_map::Entry::Vacant(e) = self.decoded.entry(last) {
                        e.insert(slot);
                        recovered.push(last);
                        work.push(last);
                    }
                }
                if residual.is_empty() {
                    drained += 1;
                } else {
                    still_live.push(idx);
                }
            }
            self.live = still_live;
        }
        self.k = 1 + drained;
        recovered
    }

    /// Pop pending queries until one needs attention. Returns how many were
    /// skipped as fully recovered.
    fn advance(&mut self) -> Result<(Step, usize)> {
        let mut skipped = 0;
        while let Some(p) = self.pending.pop() {
            match p.source {
                Some(s) => match self.store[s].residual.len() {
                    0 => skipped += 1,
                    1 => {
                        return Err(Error::Invariant(format!(
                            "pending query {} left with an undrained single packet",
                            p.query
                        )))
                    }
                    _ => {
                        if p.query.len() >= self.params.u() {
                            return Err(Error::Invariant(format!(
                                "leaf query {} cannot hold a collision",
                                p.query
                            )));
                        }
                        self.current = p.query.child(false);
                        self.entry = Entry::FirstChild {
                            parent_source: Some(s),
                        };
                        return Ok((Step::Next(self.current), skipped));
                    }
                },
                None => {
                    self.current = p.query;
                    self.entry = Entry::Standalone;
                    return Ok((Step::Next(self.current), skipped));
                }
            }
        }
        self.terminated = true;
        Ok((Step::Terminated, skipped))
    }

    fn push_sibling(&mut self) {
        if let (Entry::FirstChild { parent_source }, Some(sibling)) =
            (self.entry, self.current.sibling())
        {
            self.pending.push(PendingQuery {
                query: sibling,
                source: parent_source,
            });
        }
    }

    /// Process the signal received for the current query.
    pub fn step(&mut self, signal: &SlotSignal) -> Result<SlotReport> {
        if self.terminated {
            return Err(Error::AlreadyTerminated);
        }
        self.slots += 1;
        let slot = self.slots;
        let outcome = observe(signal);
        let mut cancelled = Vec::new();
        let next = match outcome {
            SlotOutcome::Idle => match self.entry {
                Entry::Root => {
                    self.terminated = true;
                    Step::Terminated
                }
                Entry::FirstChild { parent_source } => {
                    // The parent collided and this half is empty, so the
                    // sibling holds the whole collision.
                    let sibling = self.current.sibling().expect("first child has a sibling");
                    if sibling.len() < self.params.u() {
                        self.current = sibling.child(false);
                        self.entry = Entry::FirstChild { parent_source };
                    } else {
                        self.current = sibling;
                        self.entry = Entry::Standalone;
                    }
                    Step::Next(self.current)
                }
                Entry::Standalone => self.advance()?.0,
            },
            SlotOutcome::Success(id) => {
                self.push_sibling();
                let waiting = self.pending.len();
                cancelled = self.chain_cancel(id);
                let (next, skipped) = self.advance()?;
                if self.max_cancel_depth.is_none() && skipped != self.k - 1 {
                    return Err(Error::Invariant(format!(
                        "slot {slot}: skipped {skipped} of {waiting} pending queries but k = {}",
                        self.k
                    )));
                }
                next
            }
            SlotOutcome::Collision => {
                if self.current.len() >= self.params.u() {
                    return Err(Error::Invariant(format!(
                        "collision at leaf {}",
                        self.current
                    )));
                }
                self.push_sibling();
                let usable = self
                    .max_cancel_depth
                    .is_none_or(|c| signal.transmitters.len() <= c);
                let source = usable
                    .then(|| self.store_collision(slot, self.current, signal.transmitters.clone()));
                self.current = self.current.child(false);
                self.entry = Entry::FirstChild {
                    parent_source: source,
                };
                Step::Next(self.current)
            }
        };
        Ok(SlotReport {
            outcome,
            cancelled,
            next,
        })
    }
}

/// Resolve `participants` with interference cancellation.
pub fn run_sicqta(
    participants: impl IntoIterator<Item = DeviceId>,
    params: TreeParams,
    max_cancel_depth: Option<usize>,
) -> Result<ResolutionTrace> {
    let participants = participant_set(participants, params)?;
    let sorted: Vec<DeviceId> = participants.iter().copied().collect();
    let mut state = SicqtaState::new(params, max_cancel_depth)?;
    let mut slots = Vec::new();
    loop {
        let index = slots.len() + 1;
        let query = state.current();
        let transmitters: BTreeSet<DeviceId> = answering(&sorted, &query, params)?
            .iter()
            .copied()
            .filter(|d| !state.is_decoded(*d))
            .collect();
        let signal = SlotSignal { transmitters };
        let report = state.step(&signal)?;
        let residual = match report.outcome {
            SlotOutcome::Collision => state
                .store()
                .last()
                .filter(|c| c.slot == index)
                .map(|c| c.residual.clone())
                .unwrap_or_else(|| signal.transmitters.clone()),
            _ => BTreeSet::new(),
        };
        slots.push(SlotRecord {
            index,
            query,
            outcome: report.outcome,
            transmitters: signal.transmitters,
            residual,
            decoded_by_cancellation: report.cancelled,
        });
        if report.next == Step::Terminated {
            break;
        }
    }
    let decoded = state.decoded().clone();
    if !decoded.keys().eq(participants.iter()) {
        return Err(Error::Invariant(
            "resolution terminated with undecoded participants".into(),
        ));
    }
    Ok(ResolutionTrace {
        params,
        participants,
        slots,
        decoded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(u: u32) -> TreeParams {
        TreeParams::new(u).unwrap()
    }

    fn ids(params: TreeParams, bits: &[&str]) -> Vec<DeviceId> {
        bits.iter()
            .map(|b| params.parse_device(b).unwrap())
            .collect()
    }

    fn q(bits: &str) -> Query {
        Query::parse(bits).unwrap()
    }

    #[test]
    fn four_device_worst_case() {
        let params = p(3);
        let devs = ids(params, &["000", "001", "100", "101"]);
        let trace = run_sicqta(devs.clone(), params, None).unwrap();
        assert_eq!(trace.outcome_codes(), "CCCSCS");
        let order: Vec<String> = trace.slots.iter().map(|s| s.query.to_string()).collect();
        assert_eq!(order, ["", "0", "00", "000", "10", "100"]);
        let at: Vec<usize> = devs.iter().map(|d| trace.decoded[d]).collect();
        assert_eq!(at, [4, 4, 6, 6]);
        assert_eq!(trace.slots[3].decoded_by_cancellation, [devs[1]]);
        assert_eq!(trace.slots[5].decoded_by_cancellation, [devs[3]]);
        trace.validate().unwrap();
    }

    #[test]
    fn full_population_has_unit_throughput() {
        for u in 1..=6 {
            let params = p(u);
            let trace = run_sicqta(params.all_devices(), params, None).unwrap();
            assert_eq!(trace.latency() as u64, params.max_devices(), "u={u}");
        }
    }

    #[test]
    fn empty_and_single() {
        let params = p(3);
        assert_eq!(run_sicqta([], params, None).unwrap().outcome_codes(), "I");
        let one = run_sicqta(ids(params, &["110"]), params, None).unwrap();
        assert_eq!(one.outcome_codes(), "S");
    }

    #[test]
    fn chain_drains_two_stored_slots() {
        let params = p(3);
        let [a, b] = ids(params, &["000", "001"])[..] else {
            unreachable!()
        };
        let mut state = SicqtaState::new(params, None).unwrap();
        state.store_collision(2, q("0"), [a, b].into());
        state.store_collision(3, q("00"), [a, b].into());
        state.slots = 4;
        assert_eq!(state.chain_cancel(a), [b]);
        assert_eq!(state.k(), 3);
        assert!(state.store().iter().all(|c| c.residual.is_empty()));
    }

    #[test]
    fn chain_with_empty_store() {
        let params = p(3);
        let x = params.parse_device("011").unwrap();
        let mut state = SicqtaState::new(params, None).unwrap();
        assert!(state.chain_cancel(x).is_empty());
        assert_eq!(state.k(), 1);
    }

    #[test]
    fn chain_leaves_larger_residual() {
        let params = p(3);
        let [a, b, c] = ids(params, &["000", "001", "100"])[..] else {
            unreachable!()
        };
        let mut state = SicqtaState::new(params, None).unwrap();
        state.store_collision(1, Query::root(), [a, b, c].into());
        assert!(state.chain_cancel(a).is_empty());
        assert_eq!(state.k(), 1);
        assert_eq!(state.store()[0].residual, [b, c].into());
    }

    #[test]
    fn success_skips_recovered_pending_queries() {
        let params = p(3);
        let devs = ids(params, &["000", "001", "100", "101"]);
        let mut state = SicqtaState::new(params, None).unwrap();
        let signal =
            |q: &str| {
                SlotSignal::new(devs.iter().copied().filter(|d| {
                    crate::model::matches(*d, &Query::parse(q).unwrap(), params).unwrap()
                }))
            };
        for prefix in ["", "0", "00"] {
            assert_eq!(state.current(), q(prefix));
            state.step(&signal(prefix)).unwrap();
        }
        assert_eq!(state.pending(), [q("1"), q("01")]);
        let report = state.step(&signal("000")).unwrap();
        assert_eq!(state.k(), 3);
        assert_eq!(report.next, Step::Next(q("10")));
        assert!(state.pending().is_empty());
        state.step(&signal("10")).unwrap();
        assert_eq!(state.pending(), [q("11")]);
    }

    #[test]
    fn idle_first_child_jumps_into_sibling() {
        let params = p(3);
        let devs = ids(params, &["010", "011"]);
        let mut state = SicqtaState::new(params, None).unwrap();
        state.step(&SlotSignal::new(devs.clone())).unwrap();
        state.step(&SlotSignal::new(devs.clone())).unwrap();
        assert_eq!(state.current(), q("00"));
        let report = state.step(&SlotSignal::default()).unwrap();
        assert_eq!(report.next, Step::Next(q("010")));
    }

    #[test]
    fn depth_limit_never_stores_large_collisions() {
        let params = p(3);
        let devs = ids(params, &["000", "001", "100", "101"]);
        let trace = run_sicqta(devs, params, Some(2)).unwrap();
        trace.validate().unwrap();
        // the four-packet root slot is unusable, so the right half is queried
        assert_eq!(trace.slots[4].query, q("1"));
        assert!(trace.latency() >= 6);
    }

    #[test]
    fn zero_cancel_depth_is_rejected() {
        assert!(SicqtaState::new(p(3), Some(0)).is_err());
    }

    #[test]
    fn terminated_state_refuses_steps() {
        let mut state = SicqtaState::new(p(3), None).unwrap();
        state.step(&SlotSignal::default()).unwrap();
        assert!(matches!(
            state.step(&SlotSignal::default()),
            Err(Error::AlreadyTerminated)
        ));
    }
}
