//! Monte Carlo harnesses: batch resolution of `M` random devices, and gated
//! access under Poisson packet arrivals.
//!
//! Every trial or sweep point owns an RNG stream derived from the base seed
//! and its index, and results are collected in index order, so output does
//! not depend on the number of worker threads.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{lower_bound, random_subset, upper_bound};
use crate::error::{Error, Result};
use crate::model::TreeParams;
use crate::Algorithm;

/// Seed of point `index` in a run seeded with `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

/// Run `f` on a dedicated pool of `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Size the global worker pool; must run before any parallel work.
pub fn set_global_workers(workers: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchConfig {
    pub u: u32,
    #[serde(rename = "M")]
    pub m: u64,
    pub trials: u64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub max_cancel_depth: Option<usize>,
}

impl BatchConfig {
    pub fn validate(&self) -> Result<TreeParams> {
        let params = TreeParams::new(self.u)?;
        if self.m > params.max_devices() {
            return Err(Error::Domain(format!(
                "M = {} exceeds 2^{} devices",
                self.m, self.u
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.max_cancel_depth == Some(0) {
            return Err(Error::Config("max cancel depth must be at least 1".into()));
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub u: u32,
    #[serde(rename = "M")]
    pub m: u64,
    pub algorithm: Algorithm,
    pub trials: u64,
    /// Latency of every trial, in trial order.
    #[serde(skip)]
    pub latencies: Vec<usize>,
    pub mean_latency: f64,
    pub p1_latency: usize,
    pub p50_latency: usize,
    pub p99_latency: usize,
    pub min_latency: usize,
    pub max_latency: usize,
    pub mean_throughput: f64,
    pub min_throughput: f64,
    pub lower_bound: u64,
    pub upper_bound: u64,
    /// Trials outside `[lower_bound, upper_bound]`.
    pub violations: u64,
}

impl BatchStats {
    /// `M / y` per trial, in trial order; 0 for the empty population.
    pub fn throughputs(&self) -> impl Iterator<Item = f64> + '_ {
        let m = self.m as f64;
        self.latencies.iter().map(move |&y| m / y as f64)
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[usize], p: f64) -> usize {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn run_batch(cfg: &BatchConfig) -> Result<BatchStats> {
    let params = cfg.validate()?;
    let latencies = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let ids = random_subset(params, cfg.m, cfg.seed, i);
            Ok(cfg
                .algorithm
                .resolve(ids, params, cfg.max_cancel_depth)?
                .latency())
        })
        .collect::<Result<Vec<usize>>>()?;
    let lower = lower_bound(cfg.algorithm, cfg.m);
    let upper = upper_bound(cfg.algorithm, cfg.m, cfg.u)?;
    let mut sorted = latencies.clone();
    sorted.sort_unstable();
    let violations = latencies
        .iter()
        .filter(|&&y| (y as u64) < lower || (y as u64) > upper)
        .count() as u64;
    let n = latencies.len() as f64;
    let m = cfg.m as f64;
    Ok(BatchStats {
        u: cfg.u,
        m: cfg.m,
        algorithm: cfg.algorithm,
        trials: cfg.trials,
        mean_latency: latencies.iter().sum::<usize>() as f64 / n,
        p1_latency: percentile(&sorted, 1.0),
        p50_latency: percentile(&sorted, 50.0),
        p99_latency: percentile(&sorted, 99.0),
        min_latency: sorted[0],
        max_latency: sorted[sorted.len() - 1],
        mean_throughput: latencies.iter().map(|&y| m / y as f64).sum::<f64>() / n,
        min_throughput: m / sorted[sorted.len() - 1] as f64,
        lower_bound: lower,
        upper_bound: upper,
        violations,
        latencies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrivalConfig {
    pub u: u32,
    pub lambda: f64,
    pub horizon: u64,
    /// Slots excluded from delay, throughput and CRI statistics; defaults to
    /// a tenth of the horizon.
    pub warmup: Option<u64>,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub max_cancel_depth: Option<usize>,
}

impl ArrivalConfig {
    pub fn warmup_slots(&self) -> u64 {
        self.warmup.unwrap_or(self.horizon / 10)
    }

    pub fn validate(&self) -> Result<TreeParams> {
        let params = TreeParams::new(self.u)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "invalid arrival rate {}",
                self.lambda
            )));
        }
        if self.horizon <= self.warmup_slots() {
            return Err(Error::Config("horizon must exceed warmup".into()));
        }
        if self.max_cancel_depth == Some(0) {
            return Err(Error::Config("max cancel depth must be at least 1".into()));
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrivalStats {
    pub u: u32,
    pub lambda: f64,
    pub horizon: u64,
    pub warmup: u64,
    /// Mean arrival-to-decode delay of packets arriving after warmup.
    pub mean_delay: f64,
    /// Decoded packets per slot over the CRIs run entirely after warmup.
    pub throughput: f64,
    pub mean_cri: f64,
    pub arrivals: u64,
    pub decoded: u64,
    /// Packets waiting for a CRI when the horizon is reached.
    pub queued: u64,
    /// Packets contending in the CRI cut off by the horizon.
    pub in_flight: u64,
    pub mean_backlog: f64,
    pub max_backlog: u64,
    /// Mean delay of packets decoded in the second and last quarter of the
    /// horizon.
    pub delay_second_quarter: f64,
    pub delay_last_quarter: f64,
    /// Delay did not more than double between those two quarters.
    pub stable: bool,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    count: u64,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    fn value(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Gated access: each contention resolution interval (CRI) serves the
/// head-of-line packet of every device backlogged when it starts; packets
/// arriving meanwhile wait for the next CRI. With no backlog a single idle
/// slot elapses.
pub fn run_arrivals(cfg: &ArrivalConfig) -> Result<ArrivalStats> {
    let params = cfg.validate()?;
    let horizon = cfg.horizon;
    let warmup = cfg.warmup_slots();
    let n = params.max_devices();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poisson = if cfg.lambda > 0.0 {
        Some(Poisson::new(cfg.lambda).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut arrive = |slot: u64, queues: &mut BTreeMap<u64, VecDeque<u64>>| -> u64 {
        let count = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
        for _ in 0..count {
            queues
                .entry(rng.random_range(0..n))
                .or_default()
                .push_back(slot);
        }
        count
    };

    let mut queues: BTreeMap<u64, VecDeque<u64>> = BTreeMap::new();
    let mut arrivals = 0u64;
    let mut decoded = 0u64;
    let mut in_flight = 0u64;
    let mut backlog = 0u64;
    let mut delay = Mean::default();
    let mut second_quarter = Mean::default();
    let mut last_quarter = Mean::default();
    let mut cri = Mean::default();
    let mut backlog_mean = Mean::default();
    let mut max_backlog = 0u64;
    let mut served_slots = 0u64;
    let mut served_packets = 0u64;
    let mut t = 0u64;
    while t < horizon {
        backlog_mean.add(backlog as f64);
        max_backlog = max_backlog.max(backlog);
        let participants: Vec<_> = queues
            .keys()
            .map(|&v| params.device(v))
            .collect::<Result<_>>()?;
        let (len, decodes) = if participants.is_empty() {
            (1, BTreeMap::new())
        } else {
            let trace = cfg
                .algorithm
                .resolve(participants, params, cfg.max_cancel_depth)?;
            (trace.latency() as u64, trace.decoded)
        };
        let end = t + len;
        for slot in t..end.min(horizon) {
            let k = arrive(slot, &mut queues);
            arrivals += k;
            backlog += k;
        }
        if end > horizon {
            in_flight = decodes.len() as u64;
            backlog -= in_flight;
            break;
        }
        if t >= warmup {
            cri.add(len as f64);
            served_slots += len;
            served_packets += decodes.len() as u64;
        }
        for (id, index) in decodes {
            let at = t + index as u64 - 1;
            let queue = queues
                .get_mut(&id.value())
                .expect("participant has a queue");
            let arrived = queue.pop_front().expect("participant has a packet");
            if queue.is_empty() {
                queues.remove(&id.value());
            }
            decoded += 1;
            backlog -= 1;
            let d = (at - arrived) as f64;
            if arrived >= warmup {
                delay.add(d);
            }
            match 4 * at / horizon {
                1 => second_quarter.add(d),
                3 => last_quarter.add(d),
                _ => {}
            }
        }
        t = end;
    }
    let stable = match (second_quarter.count, last_quarter.count) {
        (_, 0) => second_quarter.count == 0,
        (0, _) => true,
        _ => last_quarter.value() <= 2.0 * second_quarter.value(),
    };
    Ok(ArrivalStats {
        u: cfg.u,
        lambda: cfg.lambda,
        horizon,
        warmup,
        mean_delay: delay.value(),
        throughput: if served_slots == 0 {
            0.0
        } else {
            served_packets as f64 / served_slots as f64
        },
        mean_cri: cri.value(),
        arrivals,
        decoded,
        queued: backlog,
        in_flight,
        mean_backlog: backlog_mean.value(),
        max_backlog,
        delay_second_quarter: second_quarter.value(),
        delay_last_quarter: last_quarter.value(),
        stable,
    })
}

/// Axis of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    M(Vec<u64>),
    Lambda(Vec<f64>),
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            SweepAxis::M(v) => v.len(),
            SweepAxis::Lambda(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `m=A..B` (inclusive), `lambda=A..B:STEP` or a comma list after `=`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid sweep axis {spec:?}"));
        let (name, values) = spec.split_once('=').ok_or_else(bad)?;
        match name.trim() {
            "m" | "M" => {
                if let Some((a, b)) = values.split_once("..") {
                    let a: u64 = a.trim().parse().map_err(|_| bad())?;
                    let b: u64 = b.trim().parse().map_err(|_| bad())?;
                    Ok(SweepAxis::M((a..=b).collect()))
                } else {
                    values
                        .split(',')
                        .map(|v| v.trim().parse().map_err(|_| bad()))
                        .collect::<Result<_>>()
                        .map(SweepAxis::M)
                }
            }
            "lambda" => {
                if let Some((range, step)) = values.split_once(':') {
                    let (a, b) = range.split_once("..").ok_or_else(bad)?;
                    let a: f64 = a.trim().parse().map_err(|_| bad())?;
                    let b: f64 = b.trim().parse().map_err(|_| bad())?;
                    let step: f64 = step.trim().parse().map_err(|_| bad())?;
                    lambda_grid(a, b, step).map(SweepAxis::Lambda)
                } else {
                    values
                        .split(',')
                        .map(|v| v.trim().parse().map_err(|_| bad()))
                        .collect::<Result<_>>()
                        .map(SweepAxis::Lambda)
                }
            }
            _ => Err(bad()),
        }
    }
}

/// `a, a+step, …` up to `b` inclusive (with rounding slack).
pub fn lambda_grid(a: f64, b: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || !a.is_finite() || !b.is_finite() {
        return Err(Error::Config("lambda grid needs a positive step".into()));
    }
    let count = ((b - a) / step + 1e-9).floor();
    if count < 0.0 {
        return Ok(Vec::new());
    }
    Ok((0..=count as u64).map(|i| a + i as f64 * step).collect())
}

/// One [`BatchStats`] per `M`; point `i` is seeded with
/// `derive_seed(template.seed, i)`.
pub fn sweep_batch(template: &BatchConfig, ms: &[u64]) -> Result<Vec<BatchStats>> {
    if ms.is_empty() {
        return Err(Error::Config("empty sweep range".into()));
    }
    let configs: Vec<BatchConfig> = ms
        .iter()
        .enumerate()
        .map(|(i, &m)| BatchConfig {
            m,
            seed: derive_seed(template.seed, i as u64),
            ..template.clone()
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    configs.par_iter().map(run_batch).collect()
}

/// One [`ArrivalStats`] per arrival rate, seeded like [`sweep_batch`].
pub fn sweep_arrivals(template: &ArrivalConfig, lambdas: &[f64]) -> Result<Vec<ArrivalStats>> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty sweep range".into()));
    }
    let configs: Vec<ArrivalConfig> = lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| ArrivalConfig {
            lambda,
            seed: derive_seed(template.seed, i as u64),
            ..template.clone()
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    configs.par_iter().map(run_arrivals).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdEstimate {
    /// Largest rate of the grid below the first unstable point, if any.
    pub threshold: Option<f64>,
    /// Throughput measured at that rate.
    pub throughput: Option<f64>,
    pub horizon: u64,
    pub points: Vec<ArrivalStats>,
}

/// Maximum stable arrival rate over an increasing grid of rates.
pub fn estimate_threshold(template: &ArrivalConfig, lambdas: &[f64]) -> Result<ThresholdEstimate> {
    let points = sweep_arrivals(template, lambdas)?;
    let stable = points.iter().take_while(|p| p.stable).last();
    Ok(ThresholdEstimate {
        threshold: stable.map(|p| p.lambda),
        throughput: stable.map(|p| p.throughput),
        horizon: template.horizon,
        points,
    })
}
