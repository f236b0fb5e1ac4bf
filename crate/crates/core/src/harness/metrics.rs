//! Per-fault records and their CSV/log renderings. Row order is the order
//! in which faults were detected, which is deterministic for a given
//! scenario and seed.

use std::io::Write;

use crate::fault_detect::{FaultEvent, FaultKind};
use crate::offload::{DataSizes, Region, Strategy, Thresholds};

/// Timing and payload breakdown of one handled fault. Times are seconds,
/// payloads bits.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultRecord {
    pub index: usize,
    pub frame: u64,
    pub kind: FaultKind,
    pub robot: String,
    pub strategy: Strategy,
    /// Evidence triplets in wire form, `;`-separated.
    pub evidence: String,
    pub t_sg: f64,
    pub t_dt: f64,
    pub t_com: f64,
    pub t_inf: f64,
    pub t_exe: f64,
    pub t_fdr: f64,
    /// Planning rounds (1 for task-level faults).
    pub rounds: usize,
    pub recovered: bool,
    pub uplink_bits: f64,
    pub downlink_bits: f64,
    /// What each strategy would have sent for this fault.
    pub psi_sg: f64,
    pub psi_edge: f64,
    pub psi_full: f64,
}

/// Uplink traffic of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLog {
    pub frame: u64,
    pub uplink_bits: f64,
    pub fault: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub faults: Vec<FaultRecord>,
    /// Every goal placement holds at the end and no robot was halted.
    pub success: bool,
    pub total_steps: u64,
    pub region: Region,
    pub thresholds: Thresholds,
    pub sizes: DataSizes,
    pub uplink_bits_fault_free_frames: f64,
    pub uplink_bits_total: f64,
}

impl RunMetrics {
    pub fn recovered_count(&self) -> usize {
        self.faults.iter().filter(|f| f.recovered).count()
    }
}

fn strategy_str(s: Strategy) -> &'static str {
    match s {
        Strategy::Local => "local",
        Strategy::Edge => "edge",
    }
}

pub const METRICS_HEADER: [&str; 24] = [
    "scenario",
    "seed",
    "fault",
    "frame",
    "kind",
    "robot",
    "strategy",
    "t_sg",
    "t_dt",
    "t_com",
    "t_inf",
    "t_exe",
    "t_fdr",
    "rounds",
    "recovered",
    "uplink_bits",
    "downlink_bits",
    "psi_sg",
    "psi_edge",
    "psi_full",
    "success",
    "region",
    "b1",
    "b2",
];

/// One row per fault; a run without faults gets a single `none` row so
/// that every run appears in the file.
pub fn write_metrics_csv<W: Write>(out: W, runs: &[RunMetrics]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for m in runs {
        let tail = [
            m.success.to_string(),
            m.region.as_str().to_string(),
            m.thresholds.b1.to_string(),
            m.thresholds.b2.to_string(),
        ];
        if m.faults.is_empty() {
            let mut row = vec![m.scenario.clone(), m.seed.to_string(), "none".into()];
            row.extend(std::iter::repeat_n(String::new(), 17));
            row.extend(tail);
            w.write_record(&row)?;
            continue;
        }
        for f in &m.faults {
            let mut row = vec![
                m.scenario.clone(),
                m.seed.to_string(),
                f.index.to_string(),
                f.frame.to_string(),
                f.kind.as_str().to_string(),
                f.robot.clone(),
                strategy_str(f.strategy).to_string(),
            ];
            row.extend(
                [f.t_sg, f.t_dt, f.t_com, f.t_inf, f.t_exe, f.t_fdr]
                    .iter()
                    .map(f64::to_string),
            );
            row.push(f.rounds.to_string());
            row.push(f.recovered.to_string());
            row.extend(
                [
                    f.uplink_bits,
                    f.downlink_bits,
                    f.psi_sg,
                    f.psi_edge,
                    f.psi_full,
                ]
                .iter()
                .map(f64::to_string),
            );
            row.extend(tail.iter().cloned());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `frame,kind,evidence` lines with a header.
pub fn write_events_log<W: Write>(out: W, events: &[FaultEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "kind", "evidence"])?;
    for e in events {
        let evidence: Vec<String> = e.evidence.iter().map(|t| t.wire_line()).collect();
        w.write_record([
            e.frame_index.to_string(),
            e.kind.as_str().to_string(),
            evidence.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_frames_csv<W: Write>(out: W, frames: &[FrameLog]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "uplink_bits", "fault"])?;
    for f in frames {
        w.write_record([
            f.frame.to_string(),
            f.uplink_bits.to_string(),
            f.fault.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
