//! Gateway side of the plain query tree algorithm.
//!
//! The root (empty prefix) is queried first. Every collision schedules both
//! children of the collided prefix. Sibling pairs are always queried back to
//! back, and the pairs themselves are visited depth first: the children of
//! the left sibling of a pair are queried before those of the right sibling,
//! and both before any pair that was already waiting. This reproduces the
//! slot order `root, 0, 1, 00, 01, 000, 001, 10, 11, 100, 101` of the
//! standard four-device worst case. The set of queried prefixes (and
//! therefore the latency) does not depend on this order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::model::{
    answering, observe, participant_set, DeviceId, Query, ResolutionTrace, SlotOutcome, SlotRecord,
    SlotSignal, TreeParams,
};

/// What the gateway does after observing a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Next(Query),
    Terminated,
}

#[derive(Debug, Clone, Default)]
pub struct QtaState {
    queue: VecDeque<Query>,
    slots: usize,
    /// Children already scheduled by the left member of the pair in progress.
    pair_children: usize,
    terminated: bool,
}

impl QtaState {
    pub fn new() -> Self {
        Self::default()
    }

    /// State whose pending queue is `queue` (front first).
    pub fn with_queue(queue: impl IntoIterator<Item = Query>) -> Self {
        Self {
            queue: queue.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn pending(&self) -> impl Iterator<Item = &Query> {
        self.queue.iter()
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Advance past the slot in which `current` was queried.
    pub fn step(&mut self, current: Query, outcome: SlotOutcome) -> Result<Step> {
        if self.terminated {
            return Err(Error::AlreadyTerminated);
        }
        self.slots += 1;
        let left = current.last_bit() == Some(false);
        if outcome.is_collision() {
            let at = match current.last_bit() {
                None => 0,
                // the right sibling is still at the front
                Some(false) => 1,
                Some(true) => self.pair_children,
            };
            if at > self.queue.len() {
                return Err(Error::Invariant(format!(
                    "cannot schedule children of {current:?} at position {at}"
                )));
            }
            self.queue.insert(at, current.child(true));
            self.queue.insert(at, current.child(false));
            self.pair_children = if left { 2 } else { 0 };
        } else {
            self.pair_children = 0;
        }
        match self.queue.pop_front() {
            Some(next) => Ok(Step::Next(next)),
            None => {
                self.terminated = true;
                Ok(Step::Terminated)
            }
        }
    }
}

/// Resolve `participants` with the query tree algorithm.
pub fn run_qta(
    participants: impl IntoIterator<Item = DeviceId>,
    params: TreeParams,
) -> Result<ResolutionTrace> {
    let participants = participant_set(participants, params)?;
    let sorted: Vec<DeviceId> = participants.iter().copied().collect();
    let mut state = QtaState::new();
    let mut slots = Vec::new();
    let mut decoded = BTreeMap::new();
    let mut current = Query::root();
    loop {
        let index = slots.len() + 1;
        let transmitters: BTreeSet<DeviceId> = answering(&sorted, &current, params)?
            .iter()
            .copied()
            .filter(|d| !decoded.contains_key(d))
            .collect();
        let outcome = observe(&SlotSignal {
            transmitters: transmitters.clone(),
        });
        if let SlotOutcome::Success(id) = outcome {
            decoded.insert(id, index);
        }
        slots.push(SlotRecord {
            index,
            query: current,
            outcome,
            residual: transmitters.clone(),
            transmitters,
            decoded_by_cancellation: Vec::new(),
        });
        match state.step(current, outcome)? {
            Step::Next(q) => current = q,
            Step::Terminated => break,
        }
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
        let trace = run_qta(ids(params, &["000", "001", "100", "101"]), params).unwrap();
        assert_eq!(trace.latency(), 11);
        assert_eq!(trace.outcome_codes(), "CCCCISSCISS");
        let order: Vec<String> = trace.slots.iter().map(|s| s.query.to_string()).collect();
        assert_eq!(
            order,
            ["", "0", "1", "00", "01", "000", "001", "10", "11", "100", "101"]
        );
        trace.validate().unwrap();
    }

    #[test]
    fn single_device_succeeds_at_root() {
        let params = p(3);
        let trace = run_qta(ids(params, &["010"]), params).unwrap();
        assert_eq!(trace.outcome_codes(), "S");
    }

    #[test]
    fn two_far_devices() {
        let params = p(3);
        let trace = run_qta(ids(params, &["000", "111"]), params).unwrap();
        assert_eq!(trace.outcome_codes(), "CSS");
        assert_eq!(trace.slots[1].query, q("0"));
        assert_eq!(trace.slots[2].query, q("1"));
    }

    #[test]
    fn empty_population_is_one_idle_slot() {
        let trace = run_qta([], p(3)).unwrap();
        assert_eq!(trace.outcome_codes(), "I");
        trace.validate().unwrap();
    }

    #[test]
    fn step_collision_schedules_children_after_sibling() {
        let mut state = QtaState::with_queue([q("1")]);
        let next = state.step(q("0"), SlotOutcome::Collision).unwrap();
        assert_eq!(next, Step::Next(q("1")));
        let rest: Vec<Query> = state.pending().copied().collect();
        assert_eq!(rest, [q("00"), q("01")]);
    }

    #[test]
    fn step_on_empty_queue_terminates() {
        let params = p(3);
        let a = params.parse_device("000").unwrap();
        let mut state = QtaState::new();
        assert_eq!(
            state.step(q("000"), SlotOutcome::Success(a)).unwrap(),
            Step::Terminated
        );
        assert!(matches!(
            state.step(q("000"), SlotOutcome::Idle),
            Err(Error::AlreadyTerminated)
        ));
    }

    #[test]
    fn step_idle_moves_to_front() {
        let mut state = QtaState::with_queue([q("000"), q("001")]);
        assert_eq!(
            state.step(q("01"), SlotOutcome::Idle).unwrap(),
            Step::Next(q("000"))
        );
    }

    #[test]
    fn rejects_invalid_participants() {
        let params = p(3);
        let a = params.parse_device("000").unwrap();
        assert!(matches!(
            run_qta([a, a], params),
            Err(Error::DuplicateId(_))
        ));
    }
}
