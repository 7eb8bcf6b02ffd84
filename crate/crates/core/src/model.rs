//! Addresses, prefix queries and the slot-level channel rules shared by both
//! resolution algorithms.
//!
//! Device ids are `u`-bit addresses rendered big-endian: the leftmost bit is
//! the first one a query constrains. A [`Query`] is a bit prefix of length
//! `0..=u`; the empty prefix addresses every device.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

/// Largest supported address length. Ids live in a `u64`.
pub const MAX_ADDRESS_BITS: u32 = 63;

/// Address length `u` of the query tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreeParams {
    u: u32,
}

impl TreeParams {
    pub fn new(u: u32) -> Result<Self> {
        if u == 0 || u > MAX_ADDRESS_BITS {
            return Err(Error::AddressLength(u));
        }
        Ok(Self { u })
    }

    pub fn u(&self) -> u32 {
        self.u
    }

    /// `N = 2^u`, the number of distinct addresses.
    pub fn max_devices(&self) -> u64 {
        1u64 << self.u
    }

    pub fn device(&self, value: u64) -> Result<DeviceId> {
        DeviceId::new(value, *self)
    }

    /// Parse a `u`-character string of `0`/`1`.
    pub fn parse_device(&self, bits: &str) -> Result<DeviceId> {
        if bits.len() != self.u as usize {
            return Err(Error::InvalidBits(bits.to_string()));
        }
        let value = parse_bits(bits)?;
        DeviceId::new(value, *self)
    }

    pub fn render(&self, id: DeviceId) -> String {
        format!("{:0width$b}", id.0, width = self.u as usize)
    }

    /// Every id in `[0, 2^u)` in increasing order.
    pub fn all_devices(&self) -> impl Iterator<Item = DeviceId> {
        (0..self.max_devices()).map(DeviceId)
    }
}

fn parse_bits(bits: &str) -> Result<u64> {
    if bits.len() > MAX_ADDRESS_BITS as usize {
        return Err(Error::InvalidBits(bits.to_string()));
    }
    bits.chars().try_fold(0u64, |acc, c| match c {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        _ => Err(Error::InvalidBits(bits.to_string())),
    })
}

/// A device address. Only meaningful together with the [`TreeParams`] it was
/// validated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(u64);

impl DeviceId {
    pub fn new(value: u64, params: TreeParams) -> Result<Self> {
        if value >= params.max_devices() {
            return Err(Error::IdOutOfRange {
                value,
                u: params.u(),
            });
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}

/// Bit prefix addressing a subtree of the id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Query {
    len: u32,
    bits: u64,
}

impl Query {
    pub fn root() -> Self {
        Self { len: 0, bits: 0 }
    }

    pub fn parse(bits: &str) -> Result<Self> {
        let value = parse_bits(bits)?;
        Ok(Self {
            len: bits.len() as u32,
            bits: value,
        })
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    /// The empty prefix, i.e. the root.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_root(&self) -> bool {
        self.is_empty()
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn child(&self, bit: bool) -> Self {
        Self {
            len: self.len + 1,
            bits: (self.bits << 1) | bit as u64,
        }
    }

    /// The prefix with its last bit inverted; `None` for the root.
    pub fn sibling(&self) -> Option<Self> {
        (self.len > 0).then_some(Self {
            len: self.len,
            bits: self.bits ^ 1,
        })
    }

    pub fn parent(&self) -> Option<Self> {
        (self.len > 0).then(|| Self {
            len: self.len - 1,
            bits: self.bits >> 1,
        })
    }

    /// `Some(false)` for a left (`…0`) child, `Some(true)` for a right child.
    pub fn last_bit(&self) -> Option<bool> {
        (self.len > 0).then_some(self.bits & 1 == 1)
    }

    pub fn is_prefix_of(&self, other: &Query) -> bool {
        self.len <= other.len && other.bits >> (other.len - self.len) == self.bits
    }

    /// Half-open id range `[lo, hi)` answering this query.
    pub fn id_range(&self, params: TreeParams) -> Result<(u64, u64)> {
        if self.len > params.u() {
            return Err(Error::QueryTooLong {
                len: self.len,
                u: params.u(),
            });
        }
        let shift = params.u() - self.len;
        let lo = self.bits << shift;
        Ok((lo, lo + (1u64 << shift)))
    }

    /// Prefix of `id` of the given length.
    pub fn prefix_of(id: DeviceId, len: u32, params: TreeParams) -> Self {
        debug_assert!(len <= params.u());
        Self {
            len,
            bits: id.0 >> (params.u() - len),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len == 0 {
            return Ok(());
        }
        write!(f, "{:0width$b}", self.bits, width = self.len as usize)
    }
}

/// True iff the first `|q|` bits of `id` equal `q`.
pub fn matches(id: DeviceId, q: &Query, params: TreeParams) -> Result<bool> {
    let (lo, hi) = q.id_range(params)?;
    Ok((lo..hi).contains(&id.0))
}

/// Members of the sorted slice `participants` that answer `q`.
pub fn answering<'a>(
    participants: &'a [DeviceId],
    q: &Query,
    params: TreeParams,
) -> Result<&'a [DeviceId]> {
    debug_assert!(participants.windows(2).all(|w| w[0] < w[1]));
    let (lo, hi) = q.id_range(params)?;
    let start = participants.partition_point(|d| d.0 < lo);
    let end = participants.partition_point(|d| d.0 < hi);
    Ok(&participants[start..end])
}

/// Ground-truth content of one slot. Hidden from gateway logic except through
/// [`observe`] and cancellation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotSignal {
    pub transmitters: BTreeSet<DeviceId>,
}

impl SlotSignal {
    pub fn new(transmitters: impl IntoIterator<Item = DeviceId>) -> Self {
        Self {
            transmitters: transmitters.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOutcome {
    Idle,
    Success(DeviceId),
    Collision,
}

impl SlotOutcome {
    pub fn is_collision(&self) -> bool {
        matches!(self, SlotOutcome::Collision)
    }

    /// One-letter code: `I`, `S` or `C`.
    pub fn code(&self) -> char {
        match self {
            SlotOutcome::Idle => 'I',
            SlotOutcome::Success(_) => 'S',
            SlotOutcome::Collision => 'C',
        }
    }
}

/// Collision-channel observation: depends only on the number of transmitters.
pub fn observe(signal: &SlotSignal) -> SlotOutcome {
    let mut it = signal.transmitters.iter();
    match (it.next(), it.next()) {
        (None, _) => SlotOutcome::Idle,
        (Some(&id), None) => SlotOutcome::Success(id),
        (Some(_), Some(_)) => SlotOutcome::Collision,
    }
}

/// Perfect cancellation of known packets from a stored signal.
pub fn cancel(residual: &BTreeSet<DeviceId>, known: &BTreeSet<DeviceId>) -> BTreeSet<DeviceId> {
    residual.difference(known).copied().collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotRecord {
    /// 1-based slot counter within the resolution.
    pub index: usize,
    pub query: Query,
    pub outcome: SlotOutcome,
    pub transmitters: BTreeSet<DeviceId>,
    /// Packets of this slot's signal still undecoded when the slot completed.
    pub residual: BTreeSet<DeviceId>,
    /// Devices recovered from stored collisions during this slot.
    pub decoded_by_cancellation: Vec<DeviceId>,
}

/// Full transcript of one contention resolution interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionTrace {
    pub params: TreeParams,
    pub participants: BTreeSet<DeviceId>,
    pub slots: Vec<SlotRecord>,
    /// Slot index at which each device was decoded.
    pub decoded: BTreeMap<DeviceId, usize>,
}

impl ResolutionTrace {
    /// Latency `y` in slots.
    pub fn latency(&self) -> usize {
        self.slots.len()
    }

    pub fn active(&self) -> usize {
        self.participants.len()
    }

    /// `M / y`.
    pub fn throughput(&self) -> f64 {
        self.active() as f64 / self.latency() as f64
    }

    pub fn outcome_codes(&self) -> String {
        self.slots.iter().map(|s| s.outcome.code()).collect()
    }

    /// Check the structural invariants every finished trace must satisfy.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Invariant(msg));
        if self.decoded.len() != self.participants.len()
            || !self.decoded.keys().eq(self.participants.iter())
        {
            return fail("decoded set differs from participants".into());
        }
        for (i, slot) in self.slots.iter().enumerate() {
            if slot.index != i + 1 {
                return fail(format!("slot {} carries index {}", i + 1, slot.index));
            }
            if !slot.residual.is_subset(&slot.transmitters) {
                return fail(format!(
                    "slot {}: residual not within transmitters",
                    slot.index
                ));
            }
            if observe(&SlotSignal {
                transmitters: slot.transmitters.clone(),
            }) != slot.outcome
            {
                return fail(format!(
                    "slot {}: outcome disagrees with signal",
                    slot.index
                ));
            }
        }
        for (id, &at) in &self.decoded {
            let first = self
                .slots
                .iter()
                .find(|s| s.transmitters.contains(id))
                .map(|s| s.index);
            match first {
                Some(first) if first <= at => {}
                _ => return fail(format!("device {} decoded before transmitting", id.value())),
            }
            if self
                .slots
                .iter()
                .any(|s| s.index > at && s.transmitters.contains(id))
            {
                return fail(format!("device {} transmitted after decoding", id.value()));
            }
        }
        Ok(())
    }
}

/// Validate and sort a participant list.
pub fn participant_set(
    ids: impl IntoIterator<Item = DeviceId>,
    params: TreeParams,
) -> Result<BTreeSet<DeviceId>> {
    let mut set = BTreeSet::new();
    for id in ids {
        DeviceId::new(id.0, params)?;
        if !set.insert(id) {
            return Err(Error::DuplicateId(params.render(id)));
        }
    }
    Ok(set)
}
