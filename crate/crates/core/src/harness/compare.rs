//! Side-by-side comparison of offloading profiles over repeated runs.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_scenario, ConfigError, RunMetrics, ScenarioConfig};
use crate::offload::{OffloadMode, TimingProfile};

/// Overrides applied on top of the scenario for one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    #[serde(default)]
    pub mode: OffloadMode,
    pub bandwidth_hz: Option<f64>,
    pub timing: Option<TimingProfile>,
    pub monte_carlo: Option<bool>,
}

impl Profile {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        cfg.offload.mode = self.mode;
        if let Some(b) = self.bandwidth_hz {
            cfg.channel.bandwidth_hz = b;
        }
        if let Some(t) = self.timing {
            cfg.timing = t;
        }
        if let Some(m) = self.monte_carlo {
            cfg.offload.monte_carlo = m;
        }
    }
}

/// `[[profile]]` tables of a profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub profile: Vec<Profile>,
}

impl ProfileFile {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let f: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if f.profile.is_empty() {
            return Err(ConfigError::Invalid(
                "profile file lists no profiles".into(),
            ));
        }
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub profile: String,
    pub runs: usize,
    pub successes: usize,
    pub faults: usize,
    pub recovered: usize,
    /// Means over all faults of all runs; NaN when there were none.
    pub mean_t_detect: f64,
    pub mean_t_com: f64,
    pub mean_t_fdr: f64,
    pub mean_uplink_bits: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn summarize(profile: &str, runs: &[RunMetrics]) -> CompareRow {
    let faults = || runs.iter().flat_map(|r| r.faults.iter());
    CompareRow {
        profile: profile.to_string(),
        runs: runs.len(),
        successes: runs.iter().filter(|r| r.success).count(),
        faults: faults().count(),
        recovered: faults().filter(|f| f.recovered).count(),
        mean_t_detect: mean(faults().map(|f| f.t_sg + f.t_dt)),
        mean_t_com: mean(faults().map(|f| f.t_com)),
        mean_t_fdr: mean(faults().map(|f| f.t_fdr)),
        mean_uplink_bits: mean(faults().map(|f| f.uplink_bits)),
    }
}

/// Runs `scenario(seed)` for `runs` consecutive seeds under every profile.
/// Runs execute in parallel; rows and their aggregates do not depend on
/// scheduling.
pub fn compare_profiles<F>(
    scenario: F,
    first_seed: u64,
    runs: usize,
    profiles: &[Profile],
) -> Result<(Vec<CompareRow>, Vec<RunMetrics>), ConfigError>
where
    F: Fn(u64) -> Result<ScenarioConfig, ConfigError> + Sync,
{
    let mut rows = Vec::with_capacity(profiles.len());
    let mut all = Vec::new();
    for p in profiles {
        let metrics = (0..runs as u64)
            .into_par_iter()
            .map(|i| {
                let mut cfg = scenario(first_seed + i)?;
                p.apply(&mut cfg);
                let mut m = run_scenario(&cfg)?.metrics;
                m.scenario = format!("{}@{}", cfg.name, p.name);
                Ok(m)
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        rows.push(summarize(&p.name, &metrics));
        all.extend(metrics);
    }
    Ok((rows, all))
}

pub fn write_compare_csv<W: Write>(out: W, rows: &[CompareRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "profile",
        "runs",
        "successes",
        "faults",
        "recovered",
        "mean_t_detect",
        "mean_t_com",
        "mean_t_fdr",
        "mean_uplink_bits",
    ])?;
    for r in rows {
        w.write_record([
            r.profile.clone(),
            r.runs.to_string(),
            r.successes.to_string(),
            r.faults.to_string(),
            r.recovered.to_string(),
            r.mean_t_detect.to_string(),
            r.mean_t_com.to_string(),
            r.mean_t_fdr.to_string(),
            r.mean_uplink_bits.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_file_parses() {
        let f = ProfileFile::from_toml(
            r#"
[[profile]]
name = "local"
mode = "force_local"

[[profile]]
name = "fast edge"
mode = "force_edge"
bandwidth_hz = 1e8
"#,
        )
        .unwrap();
        assert_eq!(f.profile.len(), 2);
        assert_eq!(f.profile[1].mode, OffloadMode::ForceEdge);
        assert_eq!(f.profile[1].bandwidth_hz, Some(1e8));
        assert!(ProfileFile::from_toml("profile = []").is_err());
    }

    #[test]
    fn mean_of_nothing_is_nan() {
        assert!(mean(std::iter::empty()).is_nan());
        assert_eq!(mean([1.0, 3.0].into_iter()), 2.0);
    }
}
