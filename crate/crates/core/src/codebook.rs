//! Frame-based access codes: a codebook row is the binary slot pattern of one
//! device over a `d`-slot frame, an activity vector marks which devices are
//! active, and the frame outcome counts packets per slot.
//!
//! Two receivers are provided. The collision channel succeeds exactly on
//! slots holding one packet. The SIC receiver is a peeling decoder: any slot
//! with a single undecoded packet yields that device, which is then
//! cancelled from every slot, until a fixpoint (possibly a stopping set).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{binomial, upper_bound, worst_case_oracle, Budget, ENUMERATION_BUDGET};
use crate::error::{Error, Result};
use crate::model::{DeviceId, ResolutionTrace};
use crate::Algorithm;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    d: usize,
    rows: Vec<Vec<bool>>,
}

impl Codebook {
    pub fn new(rows: Vec<Vec<bool>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::DimensionMismatch(
                "codebook needs d >= 1 and at least one row".into(),
            ));
        }
        if let Some(j) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "row {j} has length {} instead of {d}",
                rows[j].len()
            )));
        }
        Ok(Self { d, rows })
    }

    /// Rows given as `0`/`1` strings.
    pub fn from_strings<S: AsRef<str>>(rows: &[S]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| parse_row(r.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// Frame length in slots.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of devices (rows).
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, j: usize) -> &[bool] {
        &self.rows[j]
    }

    pub fn row_string(&self, j: usize) -> String {
        self.rows[j]
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }
}

fn parse_row(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::CodebookFormat(format!("invalid row {s:?}"))),
        })
        .collect()
}

/// Text format: a `d=<int> N=<int>` header followed by `N` rows of `d`
/// characters.
impl fmt::Display for Codebook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "d={} N={}", self.d, self.n())?;
        for j in 0..self.n() {
            writeln!(f, "{}", self.row_string(j))?;
        }
        Ok(())
    }
}

impl FromStr for Codebook {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::CodebookFormat("empty file".into()))?;
        let mut d = None;
        let mut n = None;
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::CodebookFormat(format!("bad header field {field:?}")))?;
            let value: usize = value
                .parse()
                .map_err(|_| Error::CodebookFormat(format!("bad header value {field:?}")))?;
            match key {
                "d" => d = Some(value),
                "N" => n = Some(value),
                _ => return Err(Error::CodebookFormat(format!("unknown header key {key:?}"))),
            }
        }
        let (d, n) = d
            .zip(n)
            .ok_or_else(|| Error::CodebookFormat("header must give d and N".into()))?;
        let rows = lines.map(parse_row).collect::<Result<Vec<_>>>()?;
        if rows.len() != n {
            return Err(Error::CodebookFormat(format!(
                "expected {n} rows, found {}",
                rows.len()
            )));
        }
        let book = Codebook::new(rows)?;
        if book.d() != d {
            return Err(Error::CodebookFormat(format!(
                "expected rows of length {d}"
            )));
        }
        Ok(book)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivityVector(Vec<bool>);

impl ActivityVector {
    pub fn new(active: Vec<bool>) -> Self {
        Self(active)
    }

    pub fn from_indices(n: usize, active: &[usize]) -> Result<Self> {
        let mut v = vec![false; n];
        for &j in active {
            *v.get_mut(j)
                .ok_or_else(|| Error::DimensionMismatch(format!("device {j} out of {n}")))? = true;
        }
        Ok(Self(v))
    }

    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `‖n‖² = M`.
    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(j, _)| j)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameOutcome {
    /// Packets per slot, `f = n·C`.
    pub packets: Vec<u32>,
    /// MAC-level success per slot.
    pub success: Vec<bool>,
}

fn check_dims(n: &ActivityVector, book: &Codebook) -> Result<()> {
    if n.len() != book.n() {
        return Err(Error::DimensionMismatch(format!(
            "activity vector has {} entries for {} codebook rows",
            n.len(),
            book.n()
        )));
    }
    Ok(())
}

/// `f_i = Σ_j n_j·C[j][i]`.
pub fn frame_outcome(n: &ActivityVector, book: &Codebook) -> Result<Vec<u32>> {
    check_dims(n, book)?;
    let mut f = vec![0u32; book.d()];
    for j in n.active() {
        for (fi, &c) in f.iter_mut().zip(book.row(j)) {
            *fi += c as u32;
        }
    }
    Ok(f)
}

/// Collision channel: `s_i = 1` iff `f_i = 1`.
pub fn success_collision(f: &[u32]) -> Vec<bool> {
    f.iter().map(|&x| x == 1).collect()
}

/// Active devices owning at least one singleton slot.
pub fn decode_collision_frame(n: &ActivityVector, book: &Codebook) -> Result<BTreeSet<usize>> {
    let f = frame_outcome(n, book)?;
    Ok(n.active()
        .filter(|&j| book.row(j).iter().zip(&f).any(|(&c, &fi)| c && fi == 1))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeelingResult {
    pub decoded: BTreeSet<usize>,
    /// `(slot, device)` in decoding order, slots 0-based.
    pub order: Vec<(usize, usize)>,
}

/// Peeling decoder under perfect cancellation. At each step the lowest slot
/// holding exactly one undecoded packet is resolved.
pub fn decode_sic_frame(n: &ActivityVector, book: &Codebook) -> Result<PeelingResult> {
    check_dims(n, book)?;
    let mut slots: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); book.d()];
    for j in n.active() {
        for (i, &c) in book.row(j).iter().enumerate() {
            if c {
                slots[i].insert(j);
            }
        }
    }
    let mut decoded = BTreeSet::new();
    let mut order = Vec::new();
    while let Some(i) = slots.iter().position(|s| s.len() == 1) {
        let j = *slots[i].iter().next().unwrap();
        decoded.insert(j);
        order.push((i, j));
        for s in &mut slots {
            s.remove(&j);
        }
    }
    Ok(PeelingResult { decoded, order })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Collision,
    Sic,
}

/// Devices delivered in one frame. A device owning several singleton slots
/// counts once, so this never exceeds `‖n‖²`.
pub fn successes(n: &ActivityVector, book: &Codebook, channel: Channel) -> Result<usize> {
    Ok(match channel {
        Channel::Collision => decode_collision_frame(n, book)?.len(),
        Channel::Sic => decode_sic_frame(n, book)?.decoded.len(),
    })
}

/// Participation pattern of a finished trace as a codebook with one row per
/// participant (increasing id order) and one column per slot.
pub fn trace_to_codebook(trace: &ResolutionTrace) -> Result<(Vec<DeviceId>, Codebook)> {
    if trace.slots.is_empty() || trace.decoded.len() != trace.participants.len() {
        return Err(Error::IncompleteTrace(format!(
            "{} of {} participants decoded",
            trace.decoded.len(),
            trace.participants.len()
        )));
    }
    let ids: Vec<DeviceId> = trace.participants.iter().copied().collect();
    let rows = ids
        .iter()
        .map(|id| {
            trace
                .slots
                .iter()
                .map(|s| s.transmitters.contains(id))
                .collect()
        })
        .collect();
    Ok((ids, Codebook::new(rows)?))
}

/// Which activations an evaluation averages over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ensemble {
    Fixed(Vec<ActivityVector>),
    /// Every `m`-subset when at most the enumeration budget, otherwise
    /// `samples` uniform draws from `seed`.
    Subsets {
        m: usize,
        samples: u64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodebookEvaluation {
    pub activations: u64,
    pub exhaustive: bool,
    pub min_successes: usize,
    pub mean_successes: f64,
    /// `E[‖s‖²] / E[‖n‖²]` over the ensemble.
    pub reliability: f64,
    /// Active devices of the first activation attaining `min_successes`.
    pub worst_case: Vec<usize>,
}

pub fn evaluate_codebook(
    book: &Codebook,
    ensemble: &Ensemble,
    channel: Channel,
) -> Result<CodebookEvaluation> {
    let score = |n: &ActivityVector| -> Result<(usize, usize, Vec<usize>)> {
        Ok((
            successes(n, book, channel)?,
            n.weight(),
            n.active().collect(),
        ))
    };
    let (scores, exhaustive): (Vec<_>, bool) = match ensemble {
        Ensemble::Fixed(list) => (list.iter().map(score).collect::<Result<_>>()?, true),
        &Ensemble::Subsets { m, samples, seed } => {
            let n = book.n();
            if m > n {
                return Err(Error::DimensionMismatch(format!(
                    "{m} active of {n} devices"
                )));
            }
            if binomial(n as u64, m as u64) <= ENUMERATION_BUDGET {
                let subsets: Vec<Vec<usize>> = (0..n).combinations(m).collect();
                let scores = subsets
                    .par_iter()
                    .map(|s| score(&ActivityVector::from_indices(n, s)?))
                    .collect::<Result<_>>()?;
                (scores, true)
            } else {
                let scores = (0..samples)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(i);
                        let picked = sample(&mut rng, n, m).into_vec();
                        score(&ActivityVector::from_indices(n, &picked)?)
                    })
                    .collect::<Result<_>>()?;
                (scores, false)
            }
        }
    };
    if scores.is_empty() {
        return Err(Error::Config("empty activation ensemble".into()));
    }
    let total_s: usize = scores.iter().map(|s| s.0).sum();
    let total_n: usize = scores.iter().map(|s| s.1).sum();
    let worst = scores
        .iter()
        .min_by_key(|s| s.0)
        .expect("non-empty ensemble");
    Ok(CodebookEvaluation {
        activations: scores.len() as u64,
        exhaustive,
        min_successes: worst.0,
        mean_successes: total_s as f64 / scores.len() as f64,
        reliability: if total_n == 0 {
            1.0
        } else {
            total_s as f64 / total_n as f64
        },
        worst_case: worst.2.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SupportMode {
    /// Worst-case latency from the closed-form upper bound.
    Formula,
    /// Worst-case latency from exhaustive enumeration.
    Oracle,
}

impl SupportMode {
    pub fn name(self) -> &'static str {
        match self {
            SupportMode::Formula => "formula",
            SupportMode::Oracle => "oracle",
        }
    }
}

impl FromStr for SupportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "formula" => Ok(SupportMode::Formula),
            "oracle" => Ok(SupportMode::Oracle),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Largest `N = 2^u` whose worst-case latency for `m` active devices stays
/// within `latency_limit` slots; 0 if no address length qualifies.
///
/// Worst-case latency grows with `u`, so the search stops at the first `u`
/// that violates the limit. Oracle mode fails with [`Error::OverBudget`] if
/// enumeration becomes too large before that point.
pub fn max_supported_devices(
    m: u64,
    latency_limit: u64,
    algorithm: Algorithm,
    mode: SupportMode,
) -> Result<u64> {
    if m < 2 || latency_limit < 1 {
        return Err(Error::Domain("need M >= 2 and L >= 1".into()));
    }
    let first_u = (64 - (m - 1).leading_zeros()).max(1);
    let mut supported = 0;
    for u in first_u..=crate::model::MAX_ADDRESS_BITS {
        let worst = match mode {
            SupportMode::Formula => upper_bound(algorithm, m, u)?,
            SupportMode::Oracle => {
                worst_case_oracle(algorithm, m, u, Budget::Enumerate)?.latency as u64
            }
        };
        if worst > latency_limit {
            break;
        }
        supported = 1u64 << u;
    }
    Ok(supported)
}

/// Devices supported by the coded-access scheme used for comparison
/// (`M = 3`, `L = 4..=7`); `None` where no code is known.
pub const CAC_SIC_REFERENCE: [(u64, Option<u64>); 4] =
    [(4, Some(7)), (5, Some(11)), (6, None), (7, None)];

/// Reference SICQTA support values for `M = 3` and `M = 4`, `L = 4..=7`.
pub const SICQTA_REFERENCE: [(u64, [u64; 4]); 2] = [(3, [8, 16, 32, 64]), (4, [4, 8, 8, 16])];

pub const TABLE_LATENCIES: [u64; 4] = [4, 5, 6, 7];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SupportRow {
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "L")]
    pub l: u64,
    pub algorithm: String,
    pub mode: String,
    #[serde(rename = "N_supported")]
    pub n_supported: Option<u64>,
    pub paper_reference_value: Option<u64>,
    pub mismatch: bool,
}

/// Supported-device comparison table: computed SICQTA rows next to the
/// reference values, plus the coded-access reference row.
pub fn support_table(mode: SupportMode) -> Result<Vec<SupportRow>> {
    let mut rows = Vec::new();
    for &(l, n) in &CAC_SIC_REFERENCE {
        rows.push(SupportRow {
            m: 3,
            l,
            algorithm: "cac-sic".into(),
            mode: "reference".into(),
            n_supported: n,
            paper_reference_value: n,
            mismatch: false,
        });
    }
    for &(m, listed) in &SICQTA_REFERENCE {
        for (&l, &reference) in TABLE_LATENCIES.iter().zip(&listed) {
            let n = max_supported_devices(m, l, Algorithm::Sicqta, mode)?;
            rows.push(SupportRow {
                m,
                l,
                algorithm: Algorithm::Sicqta.name().into(),
                mode: mode.name().into(),
                n_supported: Some(n),
                paper_reference_value: Some(reference),
                mismatch: n != reference,
            });
        }
    }
    Ok(rows)
}
