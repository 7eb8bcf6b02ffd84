//! Helpers shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use sicqta::model::answering;
use sicqta::qta::Step;
use sicqta::{DeviceId, Query, ResolutionTrace, SicqtaState, SlotSignal, TreeParams};

pub fn params(u: u32) -> TreeParams {
    TreeParams::new(u).unwrap()
}

/// Every subset of the `2^u` ids, as bitmask-selected sorted vectors.
pub fn all_subsets(p: TreeParams) -> impl Iterator<Item = Vec<DeviceId>> {
    let n = p.max_devices();
    (0u64..1 << n).map(move |mask| {
        (0..n)
            .filter(|v| mask >> v & 1 == 1)
            .map(|v| p.device(v).unwrap())
            .collect()
    })
}

pub fn exhaustive(mut f: impl FnMut(TreeParams, &[DeviceId])) {
    for u in 1..=4 {
        let p = params(u);
        for ids in all_subsets(p) {
            f(p, &ids);
        }
    }
}

/// Reference receiver: after each slot, peel every usable recorded signal
/// until no signal has exactly one undecoded packet left.
pub fn reference_decode_slots(
    trace: &ResolutionTrace,
    depth: Option<usize>,
) -> Vec<BTreeSet<DeviceId>> {
    let mut known = BTreeSet::new();
    let mut signals: Vec<&BTreeSet<DeviceId>> = Vec::new();
    let mut per_slot = Vec::new();
    for slot in &trace.slots {
        if depth.is_none_or(|c| slot.transmitters.len() <= c) {
            signals.push(&slot.transmitters);
        }
        loop {
            let fresh = signals.iter().find_map(|s| {
                let mut rest = s.iter().filter(|d| !known.contains(*d));
                match (rest.next(), rest.next()) {
                    (Some(&d), None) => Some(d),
                    _ => None,
                }
            });
            match fresh {
                Some(d) => {
                    known.insert(d);
                }
                None => break,
            }
        }
        per_slot.push(known.clone());
    }
    per_slot
}

pub fn decoded_by_slot(trace: &ResolutionTrace) -> Vec<BTreeSet<DeviceId>> {
    (1..=trace.latency())
        .map(|t| {
            trace
                .decoded
                .iter()
                .filter(|(_, &at)| at <= t)
                .map(|(&d, _)| d)
                .collect()
        })
        .collect()
}

/// Step a SICQTA gateway over `ids`, asserting that no transmitted query
/// covers only decoded devices and no dropped pending query hides an
/// undecoded one.
pub fn check_skips(p: TreeParams, ids: &[DeviceId]) {
    let mut state = SicqtaState::new(p, None).unwrap();
    loop {
        let q = state.current();
        let under_q = answering(ids, &q, p).unwrap();
        let undecoded: BTreeSet<DeviceId> = under_q
            .iter()
            .copied()
            .filter(|d| !state.is_decoded(*d))
            .collect();
        assert!(
            under_q.is_empty() || !undecoded.is_empty(),
            "u={} ids={ids:?} q={q}",
            p.u()
        );
        let mut before: BTreeSet<Query> = state.pending().into_iter().collect();
        if q.last_bit() == Some(false) && !undecoded.is_empty() {
            before.insert(q.sibling().unwrap());
        }
        let report = state.step(&SlotSignal::new(undecoded)).unwrap();
        let after: BTreeSet<Query> = state.pending().into_iter().collect();
        for dropped in before.difference(&after) {
            let entered = match report.next {
                Step::Next(n) => n == *dropped || n == dropped.child(false),
                Step::Terminated => false,
            };
            if !entered {
                for d in answering(ids, dropped, p).unwrap() {
                    assert!(
                        state.is_decoded(*d),
                        "skipped {dropped} with {d:?} undecoded"
                    );
                }
            }
        }
        if report.next == Step::Terminated {
            break;
        }
    }
    assert_eq!(state.decoded().len(), ids.len());
}
