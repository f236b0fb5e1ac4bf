//! Local-versus-edge fault-detection latency, the two crossover bandwidths
//! and the three-region offloading rule.
//!
//! Local computing builds the scene graph (and, for motion-level faults, the
//! edge points) on the robot and uplinks the compact result. Edge computing
//! ships the raw cloud and lets the server do both extractions. Because the
//! rate is linear in bandwidth at fixed noise power, each comparison has a
//! single crossover bandwidth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelParams;
use crate::fault_detect::FaultKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OffloadError {
    #[error("timing `{name}` must be finite and non-negative, got {value}")]
    BadTiming { name: &'static str, value: f64 },
    #[error(
        "payload sizes must satisfy sg <= edge points <= full points (got {sg}, {edge}, {full})"
    )]
    SizeOrder { sg: f64, edge: f64, full: f64 },
    #[error("uplink payload {uplink} bits is not smaller than the full cloud {full} bits")]
    UplinkNotSmaller { uplink: f64, full: f64 },
}

/// Compute times of the two extraction stages on each side, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingProfile {
    pub t_sg_local: f64,
    pub t_dt_local: f64,
    pub t_sg_edge: f64,
    pub t_dt_edge: f64,
}

impl TimingProfile {
    pub fn new(
        t_sg_local: f64,
        t_dt_local: f64,
        t_sg_edge: f64,
        t_dt_edge: f64,
    ) -> Result<Self, OffloadError> {
        let p = Self {
            t_sg_local,
            t_dt_local,
            t_sg_edge,
            t_dt_edge,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), OffloadError> {
        for (name, value) in [
            ("t_sg_local", self.t_sg_local),
            ("t_dt_local", self.t_dt_local),
            ("t_sg_edge", self.t_sg_edge),
            ("t_dt_edge", self.t_dt_edge),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(OffloadError::BadTiming { name, value });
            }
        }
        Ok(())
    }

    /// Edge side modeled as the local side accelerated by `speedup`.
    pub fn from_local(
        t_sg_local: f64,
        t_dt_local: f64,
        speedup: f64,
    ) -> Result<Self, OffloadError> {
        Self::new(
            t_sg_local,
            t_dt_local,
            t_sg_local / speedup,
            t_dt_local / speedup,
        )
    }

    /// Profile whose crossovers land near 12.2 MHz and 220 MHz with the
    /// default channel and [`DataSizes::crossover_demo`] payloads.
    pub fn crossover_demo() -> Self {
        Self {
            t_sg_local: 0.050,
            t_dt_local: 0.07585,
            t_sg_edge: 0.03043,
            t_dt_edge: 0.015,
        }
    }
}

/// Payload sizes in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSizes {
    pub psi_sg: f64,
    pub psi_edge_points: f64,
    pub psi_full_points: f64,
}

impl DataSizes {
    pub fn new(
        psi_sg: f64,
        psi_edge_points: f64,
        psi_full_points: f64,
    ) -> Result<Self, OffloadError> {
        let s = Self {
            psi_sg,
            psi_edge_points,
            psi_full_points,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), OffloadError> {
        let ok = self.psi_sg >= 0.0
            && self.psi_sg <= self.psi_edge_points
            && self.psi_edge_points <= self.psi_full_points
            && self.psi_full_points.is_finite();
        if ok {
            Ok(())
        } else {
            Err(OffloadError::SizeOrder {
                sg: self.psi_sg,
                edge: self.psi_edge_points,
                full: self.psi_full_points,
            })
        }
    }

    /// 16 kbit scene graph, 400 kbit edge points, 16 Mbit raw cloud.
    pub fn crossover_demo() -> Self {
        Self {
            psi_sg: 16e3,
            psi_edge_points: 400e3,
            psi_full_points: 16e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Local,
    Edge,
}

/// How the harness picks a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffloadMode {
    #[default]
    Auto,
    ForceLocal,
    ForceEdge,
}

/// Crossover bandwidths in Hz; `f64::INFINITY` when local never loses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Motion-level crossover.
    pub b1: f64,
    /// Task-level crossover.
    pub b2: f64,
}

/// Which of the three bandwidth regions a decision falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Local,
    Hybrid,
    Edge,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Local => "local",
            Region::Hybrid => "hybrid",
            Region::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadDecision {
    pub task: Strategy,
    pub motion: Strategy,
    pub thresholds: Thresholds,
}

impl OffloadDecision {
    pub fn strategy(&self, kind: FaultKind) -> Strategy {
        match kind {
            FaultKind::TaskLevel => self.task,
            FaultKind::MotionLevel => self.motion,
        }
    }

    pub fn region(&self) -> Region {
        match (self.task, self.motion) {
            (Strategy::Local, Strategy::Local) => Region::Local,
            (Strategy::Edge, Strategy::Edge) => Region::Edge,
            // the reverse split never comes out of `decide`; group it with hybrid
            _ => Region::Hybrid,
        }
    }

    pub fn forced(strategy: Strategy, thresholds: Thresholds) -> Self {
        Self {
            task: strategy,
            motion: strategy,
            thresholds,
        }
    }
}

fn rate(channel: &ChannelParams) -> f64 {
    channel.rate_bps()
}

/// Detection latency when the robot extracts the representation itself.
pub fn detection_time_local(
    kind: FaultKind,
    profile: &TimingProfile,
    sizes: &DataSizes,
    channel: &ChannelParams,
) -> f64 {
    let r = rate(channel);
    match kind {
        FaultKind::TaskLevel => profile.t_sg_local + sizes.psi_sg / r,
        FaultKind::MotionLevel => {
            profile.t_sg_local + profile.t_dt_local + sizes.psi_edge_points / r
        }
    }
}

/// Detection latency when the raw cloud is shipped and both extractions run
/// on the server. The same expression applies to either fault kind: the
/// server runs both stages before it knows which kind it is facing.
pub fn detection_time_edge(
    profile: &TimingProfile,
    sizes: &DataSizes,
    channel: &ChannelParams,
) -> f64 {
    sizes.psi_full_points / rate(channel) + profile.t_sg_edge + profile.t_dt_edge
}

pub fn detection_time(
    kind: FaultKind,
    strategy: Strategy,
    profile: &TimingProfile,
    sizes: &DataSizes,
    channel: &ChannelParams,
) -> f64 {
    match strategy {
        Strategy::Local => detection_time_local(kind, profile, sizes, channel),
        Strategy::Edge => detection_time_edge(profile, sizes, channel),
    }
}

fn crossover(
    psi_full: f64,
    psi_uplink: f64,
    eta: f64,
    delta_compute: f64,
) -> Result<f64, OffloadError> {
    if psi_uplink >= psi_full {
        return Err(OffloadError::UplinkNotSmaller {
            uplink: psi_uplink,
            full: psi_full,
        });
    }
    if delta_compute <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((psi_full - psi_uplink) / (eta * delta_compute))
}

/// Bandwidths at which local and edge detection times coincide.
///
/// The spectral efficiency is taken from `channel` and does not depend on
/// its bandwidth field.
pub fn thresholds(
    profile: &TimingProfile,
    sizes: &DataSizes,
    channel: &ChannelParams,
) -> Result<Thresholds, OffloadError> {
    let eta = channel.spectral_efficiency();
    let edge_compute = profile.t_sg_edge + profile.t_dt_edge;
    let b1 = crossover(
        sizes.psi_full_points,
        sizes.psi_edge_points,
        eta,
        profile.t_sg_local + profile.t_dt_local - edge_compute,
    )?;
    let b2 = crossover(
        sizes.psi_full_points,
        sizes.psi_sg,
        eta,
        profile.t_sg_local - edge_compute,
    )?;
    Ok(Thresholds { b1, b2 })
}

/// Three-region rule: local below `b1`, edge above `b2`, and in between
/// task-level faults stay local while motion-level faults go to the edge.
/// Each boundary belongs to the region on its left.
pub fn decide(bandwidth_hz: f64, thresholds: Thresholds) -> OffloadDecision {
    let (task, motion) = if bandwidth_hz <= thresholds.b1 {
        (Strategy::Local, Strategy::Local)
    } else if bandwidth_hz <= thresholds.b2 {
        (Strategy::Local, Strategy::Edge)
    } else {
        (Strategy::Edge, Strategy::Edge)
    };
    OffloadDecision {
        task,
        motion,
        thresholds,
    }
}
