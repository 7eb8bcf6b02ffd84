//! Closed-form latency bounds and brute-force oracles.
//!
//! All logarithms are base 2. The upper bounds are defined for `M >= 2`; for
//! `M <= 1` every algorithm needs exactly one slot.

use itertools::Itertools;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DeviceId, TreeParams};
use crate::Algorithm;

/// Largest number of subsets an enumeration oracle may visit.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

fn floor_log2(x: u64) -> u64 {
    debug_assert!(x > 0);
    63 - x.leading_zeros() as u64
}

/// `⌊log₂(M/2)⌋` evaluated on the rational `M/2`, for `M >= 2`.
fn floor_log2_half(m: u64) -> u64 {
    // ⌊log₂(k + ½)⌋ = ⌊log₂ k⌋ for k >= 1
    floor_log2(m / 2)
}

fn check_active(m: u64, u: u32, min: u64) -> Result<TreeParams> {
    let params = TreeParams::new(u)?;
    if m < min {
        return Err(Error::Domain(format!("M={m} is below {min}")));
    }
    if m > params.max_devices() {
        return Err(Error::Domain(format!("M={m} exceeds 2^{u}")));
    }
    Ok(params)
}

/// `M·(u + 2 − log₂M)`, rounded down. Looser than [`qta_upper`] for large `M`.
pub fn qta_upper_loose(m: u64, u: u32) -> Result<u64> {
    check_active(m, u, 1)?;
    let value = m as f64 * (u as f64 + 2.0 - (m as f64).log2());
    Ok(value.floor() as u64)
}

/// `⌊M/2⌋·2·(u + 1 − ⌊log₂(M/2)⌋) − 1`.
pub fn qta_upper(m: u64, u: u32) -> Result<u64> {
    check_active(m, u, 2)?;
    Ok((m / 2) * 2 * (u as u64 + 1 - floor_log2_half(m)) - 1)
}

/// `2M − 1`.
pub fn qta_lower(m: u64) -> Result<u64> {
    if m < 1 {
        return Err(Error::Domain("M must be at least 1".into()));
    }
    Ok(2 * m - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SkippedSlots {
    pub total: u64,
    /// Idle slots below the point where worst-case pairs separate.
    pub idle: u64,
    /// Slots recovered by cancellation at each binary split.
    pub cancel: u64,
}

/// Slots SIC saves relative to the QTA worst case.
pub fn skipped_slots(m: u64, u: u32) -> Result<SkippedSlots> {
    check_active(m, u, 2)?;
    let idle = (m / 2) * (u as u64 - 1 - floor_log2_half(m));
    let cancel = cancel_sum(m);
    Ok(SkippedSlots {
        total: idle + cancel,
        idle,
        cancel,
    })
}

/// `Σ_{i=1}^{⌊log₂M⌋} ⌊M/2^i⌋`.
fn cancel_sum(m: u64) -> u64 {
    (1..=floor_log2(m)).map(|i| m >> i).sum()
}

/// `⌊M/2⌋·(u + 4 − ⌊log₂M⌋) − 1 − Σ_{i=1}^{⌊log₂M⌋} ⌊M/2^i⌋`.
pub fn sicqta_upper(m: u64, u: u32) -> Result<u64> {
    check_active(m, u, 2)?;
    Ok((m / 2) * (u as u64 + 4 - floor_log2(m)) - 1 - cancel_sum(m))
}

/// At least one slot per device, and never less than the root slot.
pub fn sicqta_lower(m: u64) -> u64 {
    m.max(1)
}

/// Every bound for one `(M, u)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BoundsRow {
    #[serde(rename = "M")]
    pub m: u64,
    pub u: u32,
    pub qta_lower: u64,
    pub qta_upper_loose: u64,
    pub qta_upper: u64,
    pub sic_lower: u64,
    pub sic_upper: u64,
    pub skip_total: u64,
    pub skip_idle: u64,
    pub skip_cancel: u64,
}

impl BoundsRow {
    pub fn new(m: u64, u: u32) -> Result<Self> {
        let skipped = skipped_slots(m, u)?;
        Ok(Self {
            m,
            u,
            qta_lower: qta_lower(m)?,
            qta_upper_loose: qta_upper_loose(m, u)?,
            qta_upper: qta_upper(m, u)?,
            sic_lower: sicqta_lower(m),
            sic_upper: sicqta_upper(m, u)?,
            skip_total: skipped.total,
            skip_idle: skipped.idle,
            skip_cancel: skipped.cancel,
        })
    }
}

/// Upper bound used for validation: `qta_upper`/`sicqta_upper`, exact one
/// slot for `M <= 1`.
pub fn upper_bound(algorithm: Algorithm, m: u64, u: u32) -> Result<u64> {
    if m <= 1 {
        check_active(m, u, 0)?;
        return Ok(1);
    }
    match algorithm {
        Algorithm::Qta => qta_upper(m, u),
        Algorithm::Sicqta => sicqta_upper(m, u),
    }
}

pub fn lower_bound(algorithm: Algorithm, m: u64) -> u64 {
    match algorithm {
        Algorithm::Qta if m >= 1 => 2 * m - 1,
        _ => sicqta_lower(m),
    }
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Visit every `M`-subset of the id space.
    Enumerate,
    /// Draw `samples` uniform `M`-subsets.
    Sampled { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    pub latency: usize,
    /// Lexicographically smallest id set attaining `latency`.
    pub witness: Vec<DeviceId>,
    /// True for enumeration; sampled results only bound the extreme.
    pub exact: bool,
    pub evaluated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extreme {
    Max,
    Min,
}

impl Extreme {
    /// Deterministic preference: better latency, then smaller witness.
    fn pick(self, a: (usize, Vec<DeviceId>), b: (usize, Vec<DeviceId>)) -> (usize, Vec<DeviceId>) {
        let a_wins = match self {
            Extreme::Max => a.0 > b.0,
            Extreme::Min => a.0 < b.0,
        };
        if a_wins || (a.0 == b.0 && a.1 <= b.1) {
            a
        } else {
            b
        }
    }
}

/// Exact or sampled maximum latency over `M`-subsets.
pub fn worst_case_oracle(
    algorithm: Algorithm,
    m: u64,
    u: u32,
    budget: Budget,
) -> Result<OracleResult> {
    oracle(algorithm, m, u, budget, Extreme::Max)
}

/// Exact or sampled minimum latency over `M`-subsets.
pub fn best_case_oracle(
    algorithm: Algorithm,
    m: u64,
    u: u32,
    budget: Budget,
) -> Result<OracleResult> {
    oracle(algorithm, m, u, budget, Extreme::Min)
}

fn oracle(
    algorithm: Algorithm,
    m: u64,
    u: u32,
    budget: Budget,
    extreme: Extreme,
) -> Result<OracleResult> {
    let params = check_active(m, u, 0)?;
    let n = params.max_devices();
    let eval = |ids: Vec<DeviceId>| -> Result<(usize, Vec<DeviceId>)> {
        let trace = algorithm.resolve(ids.iter().copied(), params, None)?;
        Ok((trace.latency(), ids))
    };
    let pick = |a: Result<_>, b: Result<_>| Ok(extreme.pick(a?, b?));
    match budget {
        Budget::Enumerate => {
            let subsets = binomial(n, m);
            if subsets > ENUMERATION_BUDGET {
                return Err(Error::OverBudget {
                    subsets,
                    budget: ENUMERATION_BUDGET,
                });
            }
            let (latency, witness) = if m == 0 {
                eval(Vec::new())?
            } else {
                (0..=n - m)
                    .into_par_iter()
                    .map(|first| {
                        (first + 1..n)
                            .combinations(m as usize - 1)
                            .map(|rest| {
                                let ids = std::iter::once(first)
                                    .chain(rest)
                                    .map(|v| params.device(v))
                                    .collect::<Result<Vec<_>>>()?;
                                eval(ids)
                            })
                            .reduce(pick)
                            .expect("non-empty range")
                    })
                    .reduce_with(pick)
                    .expect("non-empty range")?
            };
            Ok(OracleResult {
                latency,
                witness,
                exact: true,
                evaluated: subsets as u64,
            })
        }
        Budget::Sampled { samples, seed } => {
            if samples == 0 {
                return Err(Error::Config(
                    "sampled oracle needs at least one sample".into(),
                ));
            }
            let (latency, witness) = (0..samples)
                .into_par_iter()
                .map(|i| eval(random_subset(params, m, seed, i)))
                .reduce_with(pick)
                .expect("at least one sample")?;
            Ok(OracleResult {
                latency,
                witness,
                exact: false,
                evaluated: samples,
            })
        }
    }
}

/// `m` distinct ids drawn uniformly, sorted; stream `index` of `seed`.
pub fn random_subset(params: TreeParams, m: u64, seed: u64, index: u64) -> Vec<DeviceId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut ids: Vec<DeviceId> = sample(&mut rng, params.max_devices() as usize, m as usize)
        .into_iter()
        .map(|v| params.device(v as u64).expect("sampled below 2^u"))
        .collect();
    ids.sort_unstable();
    ids
}
