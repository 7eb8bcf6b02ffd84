//! CSV and JSON renderings. Floats are written with six decimals; headers
//! are fixed and documented next to each writer.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::bounds::BoundsRow;
use crate::codebook::SupportRow;
use crate::error::Result;
use crate::model::{DeviceId, ResolutionTrace};
use crate::sim::{ArrivalStats, BatchStats};

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceParams {
    pub u: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceSlot {
    pub index: usize,
    pub query: String,
    /// `I`, `S` or `C`.
    pub outcome: String,
    pub transmitters: Vec<String>,
    pub decoded_by_cancellation: Vec<String>,
}

/// Serializable form of a [`ResolutionTrace`] with ids as bit strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceDocument {
    pub params: TraceParams,
    pub participants: Vec<String>,
    pub slots: Vec<TraceSlot>,
    pub decoded: BTreeMap<String, usize>,
}

impl From<&ResolutionTrace> for TraceDocument {
    fn from(trace: &ResolutionTrace) -> Self {
        let p = trace.params;
        let bits = |ids: &mut dyn Iterator<Item = &DeviceId>| -> Vec<String> {
            ids.map(|&id| p.render(id)).collect()
        };
        Self {
            params: TraceParams { u: p.u() },
            participants: bits(&mut trace.participants.iter()),
            slots: trace
                .slots
                .iter()
                .map(|s| TraceSlot {
                    index: s.index,
                    query: s.query.to_string(),
                    outcome: s.outcome.code().to_string(),
                    transmitters: bits(&mut s.transmitters.iter()),
                    decoded_by_cancellation: bits(&mut s.decoded_by_cancellation.iter()),
                })
                .collect(),
            decoded: trace
                .decoded
                .iter()
                .map(|(&id, &slot)| (p.render(id), slot))
                .collect(),
        }
    }
}

pub fn trace_json(trace: &ResolutionTrace) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TraceDocument::from(trace))?)
}

/// Header: `M,u,qta_lower,qta_upper_loose,qta_upper,sic_lower,sic_upper,skip_total,skip_idle,skip_cancel`.
pub fn write_bounds_csv<W: Write>(rows: &[BoundsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Header: `u,M,trial,latency,throughput`; one row per trial.
pub fn write_batch_trials_csv<W: Write>(stats: &[BatchStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["u", "M", "trial", "latency", "throughput"])?;
    for s in stats {
        for (trial, (&y, thr)) in s.latencies.iter().zip(s.throughputs()).enumerate() {
            w.write_record([
                s.u.to_string(),
                s.m.to_string(),
                trial.to_string(),
                y.to_string(),
                f6(thr),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const BATCH_STATS_HEADER: [&str; 15] = [
    "u",
    "M",
    "algorithm",
    "trials",
    "mean_latency",
    "p1_latency",
    "p50_latency",
    "p99_latency",
    "min_latency",
    "max_latency",
    "mean_throughput",
    "min_throughput",
    "lower_bound",
    "upper_bound",
    "violations",
];

/// One summary row per batch; header [`BATCH_STATS_HEADER`].
pub fn write_batch_stats_csv<W: Write>(stats: &[BatchStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BATCH_STATS_HEADER)?;
    for s in stats {
        w.write_record([
            s.u.to_string(),
            s.m.to_string(),
            s.algorithm.to_string(),
            s.trials.to_string(),
            f6(s.mean_latency),
            s.p1_latency.to_string(),
            s.p50_latency.to_string(),
            s.p99_latency.to_string(),
            s.min_latency.to_string(),
            s.max_latency.to_string(),
            f6(s.mean_throughput),
            f6(s.min_throughput),
            s.lower_bound.to_string(),
            s.upper_bound.to_string(),
            s.violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Header: `u,lambda,mean_delay,throughput,mean_cri,stable_flag`.
pub fn write_arrivals_csv<W: Write>(stats: &[ArrivalStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "u",
        "lambda",
        "mean_delay",
        "throughput",
        "mean_cri",
        "stable_flag",
    ])?;
    for s in stats {
        w.write_record([
            s.u.to_string(),
            f6(s.lambda),
            f6(s.mean_delay),
            f6(s.throughput),
            f6(s.mean_cri),
            s.stable.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Header: `M,L,algorithm,mode,N_supported,paper_reference_value,mismatch`;
/// missing values are empty fields.
pub fn write_support_csv<W: Write>(rows: &[SupportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Render any writer into a string.
pub fn to_string(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("writers emit UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundsRow;
    use crate::codebook::{support_table, SupportMode};
    use crate::sim::{run_arrivals, run_batch, ArrivalConfig, BatchConfig};
    use crate::Algorithm;
    use crate::{run_sicqta, TreeParams};

    #[test]
    fn trace_document_of_four_device_example() {
        let params = TreeParams::new(3).unwrap();
        let ids: Vec<_> = ["000", "001", "100", "101"]
            .iter()
            .map(|b| params.parse_device(b).unwrap())
            .collect();
        let doc = TraceDocument::from(&run_sicqta(ids, params, None).unwrap());
        let queries: Vec<&str> = doc.slots.iter().map(|s| s.query.as_str()).collect();
        assert_eq!(queries, ["", "0", "00", "000", "10", "100"]);
        assert_eq!(doc.slots[3].decoded_by_cancellation, ["001"]);
        assert_eq!(doc.slots[5].decoded_by_cancellation, ["101"]);
        assert_eq!(doc.decoded["101"], 6);
        let json: serde_json::Value = serde_json::to_value(&doc).unwrap();
        assert_eq!(json["params"]["u"], 3);
        assert_eq!(json["slots"][0]["outcome"], "C");
    }

    #[test]
    fn csv_headers() {
        let bounds = to_string(|b| write_bounds_csv(&[BoundsRow::new(4, 3).unwrap()], b)).unwrap();
        assert_eq!(
            bounds.lines().next().unwrap(),
            "M,u,qta_lower,qta_upper_loose,qta_upper,sic_lower,sic_upper,skip_total,skip_idle,skip_cancel"
        );
        assert!(bounds
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("4,3,7,12,11,4,6,5,"));

        let batch = run_batch(&BatchConfig {
            u: 3,
            m: 8,
            trials: 2,
            seed: 1,
            algorithm: Algorithm::Sicqta,
            max_cancel_depth: None,
        })
        .unwrap();
        let trials =
            to_string(|b| write_batch_trials_csv(std::slice::from_ref(&batch), b)).unwrap();
        assert_eq!(
            trials,
            "u,M,trial,latency,throughput\n3,8,0,8,1.000000\n3,8,1,8,1.000000\n"
        );
        let summary = to_string(|b| write_batch_stats_csv(&[batch], b)).unwrap();
        assert!(summary
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("3,8,sicqta,2,8.000000,"));

        let arrivals = run_arrivals(&ArrivalConfig {
            u: 3,
            lambda: 0.0,
            horizon: 100,
            warmup: None,
            seed: 1,
            algorithm: Algorithm::Qta,
            max_cancel_depth: None,
        })
        .unwrap();
        let text = to_string(|b| write_arrivals_csv(&[arrivals], b)).unwrap();
        assert_eq!(
            text,
            "u,lambda,mean_delay,throughput,mean_cri,stable_flag\n3,0.000000,0.000000,0.000000,1.000000,true\n"
        );

        let table =
            to_string(|b| write_support_csv(&support_table(SupportMode::Formula).unwrap(), b))
                .unwrap();
        assert_eq!(
            table.lines().next().unwrap(),
            "M,L,algorithm,mode,N_supported,paper_reference_value,mismatch"
        );
        assert!(table.contains("3,6,cac-sic,reference,,,false"));
        assert!(table.contains("4,5,sicqta,formula,4,8,true"));
    }
}
