//! Bandwidth sweeps of the offloading decision.

use std::io::Write;

use crate::channel::ChannelParams;
use crate::fault_detect::FaultKind;
use crate::offload::{
    decide, detection_time_edge, detection_time_local, thresholds, DataSizes, Region, TimingProfile,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub bandwidth_hz: f64,
    pub region: Region,
    pub t_task_local: f64,
    pub t_motion_local: f64,
    pub t_edge: f64,
    pub b1: f64,
    pub b2: f64,
}

/// `steps` points from `min` to `max`, evenly spaced in log scale,
/// endpoints included.
pub fn log_space(min: f64, max: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![min],
        _ => {
            let (a, b) = (min.ln(), max.ln());
            (0..steps)
                .map(|i| {
                    if i == 0 {
                        min
                    } else if i + 1 == steps {
                        max
                    } else {
                        (a + (b - a) * i as f64 / (steps - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Detection times and the decided region at each bandwidth.
pub fn sweep_bandwidth(
    profile: &TimingProfile,
    sizes: &DataSizes,
    channel: &ChannelParams,
    bandwidths: &[f64],
) -> crate::Result<Vec<SweepRow>> {
    let th = thresholds(profile, sizes, channel)?;
    bandwidths
        .iter()
        .map(|&b| {
            let ch = channel.with_bandwidth(b);
            ch.validate()?;
            Ok(SweepRow {
                bandwidth_hz: b,
                region: decide(b, th).region(),
                t_task_local: detection_time_local(FaultKind::TaskLevel, profile, sizes, &ch),
                t_motion_local: detection_time_local(FaultKind::MotionLevel, profile, sizes, &ch),
                t_edge: detection_time_edge(profile, sizes, &ch),
                b1: th.b1,
                b2: th.b2,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "bandwidth_hz",
        "region",
        "t_task_local",
        "t_motion_local",
        "t_edge",
        "b1",
        "b2",
    ])?;
    for r in rows {
        w.write_record([
            r.bandwidth_hz.to_string(),
            r.region.as_str().to_string(),
            r.t_task_local.to_string(),
            r.t_motion_local.to_string(),
            r.t_edge.to_string(),
            r.b1.to_string(),
            r.b2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_space_hits_endpoints_and_is_geometric() {
        let v = log_space(1e3, 1e9, 7);
        assert_eq!(v.len(), 7);
        assert_eq!(v[0], 1e3);
        assert_eq!(v[6], 1e9);
        for w in v.windows(2) {
            assert!((w[1] / w[0] - 10.0).abs() < 1e-9);
        }
        assert!(log_space(1.0, 2.0, 0).is_empty());
    }
}
