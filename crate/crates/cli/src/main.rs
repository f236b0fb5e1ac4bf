//! `goc`: run scenarios, sweep bandwidths, extract payloads from recorded
//! clouds, and compare offloading profiles.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use goc_core::edge_points::EdgeParams;
use goc_core::harness::{
    self, compare_profiles, log_space, run_scenario, suite, sweep_bandwidth, write_compare_csv,
    write_events_log, write_frames_csv, write_metrics_csv, write_sweep_csv, ProfileFile,
    ScenarioConfig,
};
use goc_core::scene_graph::{serialize_sg, RelationThresholds};
use goc_core::world::read_clouds;

#[derive(Parser)]
#[command(
    name = "goc",
    version,
    about = "Goal-oriented fault detection and recovery loop"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (a TOML file or a suite name like `grocery_packing/drop`).
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
        /// Also write the fault event log (`frame,kind,evidence`).
        #[arg(long)]
        events: Option<PathBuf>,
        /// Also write per-frame uplink traffic.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Sweep the offloading decision over log-spaced bandwidths.
    Sweep {
        scenario: String,
        #[arg(long)]
        bw_min: f64,
        #[arg(long)]
        bw_max: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Extract a scene graph or edge points from a recorded cloud file.
    Extract {
        cloud_file: PathBuf,
        #[arg(long, value_enum)]
        mode: ExtractMode,
        #[arg(long)]
        out: PathBuf,
        /// Edge points kept per object.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Compare offloading profiles over repeated seeded runs.
    Compare {
        scenario: String,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long, default_value_t = 25)]
        runs: usize,
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
        /// Also write every run's metrics rows.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractMode {
    Sg,
    Edges,
}

/// A file path wins over a suite name of the same spelling.
fn load_scenario(name: &str, seed: Option<u64>) -> Result<ScenarioConfig> {
    if Path::new(name).is_file() {
        let mut cfg = ScenarioConfig::load(name)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        return Ok(cfg);
    }
    suite::by_name(name, seed.unwrap_or(0))
        .with_context(|| format!("`{name}` is neither a file nor a suite scenario"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            scenario,
            seed,
            out,
            events,
            frames,
        } => {
            let cfg = load_scenario(&scenario, seed)?;
            let run = run_scenario(&cfg)?;
            write_metrics_csv(create(&out)?, std::slice::from_ref(&run.metrics))?;
            if let Some(p) = events {
                write_events_log(create(&p)?, &run.events)?;
            }
            if let Some(p) = frames {
                write_frames_csv(create(&p)?, &run.frames)?;
            }
            let m = &run.metrics;
            println!(
                "{}: {} fault(s), {} recovered, success={}, region={}",
                m.scenario,
                m.faults.len(),
                m.recovered_count(),
                m.success,
                m.region.as_str()
            );
        }
        Command::Sweep {
            scenario,
            bw_min,
            bw_max,
            steps,
            out,
        } => {
            if !(bw_min > 0.0 && bw_max >= bw_min) {
                bail!("need 0 < bw-min <= bw-max");
            }
            let cfg = load_scenario(&scenario, None)?;
            let sizes = match cfg.sizes {
                Some(s) => s,
                None => harness::measure_sizes(&cfg)?,
            };
            let rows = sweep_bandwidth(
                &cfg.timing,
                &sizes,
                &cfg.channel,
                &log_space(bw_min, bw_max, steps),
            )?;
            write_sweep_csv(create(&out)?, &rows)?;
            if let Some(r) = rows.first() {
                println!("b1 = {} Hz, b2 = {} Hz", r.b1, r.b2);
            }
        }
        Command::Extract {
            cloud_file,
            mode,
            out,
            k,
        } => {
            let text = std::fs::read_to_string(&cloud_file)
                .with_context(|| format!("cannot read {}", cloud_file.display()))?;
            let clouds = read_clouds(&text)?;
            let mut w = create(&out)?;
            match mode {
                ExtractMode::Sg => {
                    let sg = harness::scene_graph_from_clouds(
                        &clouds,
                        &RelationThresholds::default(),
                        0,
                    )
                    .context("cloud file holds no usable clouds")?;
                    w.write_all(&serialize_sg(&sg))?;
                    println!("{} triplets", sg.len());
                }
                ExtractMode::Edges => {
                    let mut params = EdgeParams::default();
                    if let Some(k) = k {
                        params.k = k;
                    }
                    let sets = harness::edge_points_from_clouds(&clouds, &params)?;
                    w.write_all(harness::write_edge_points(&sets).as_bytes())?;
                    let total: usize = sets.iter().map(|s| s.points.len()).sum();
                    println!("{total} edge points from {} objects", sets.len());
                }
            }
            w.flush()?;
        }
        Command::Compare {
            scenario,
            profiles,
            runs,
            out,
            metrics,
        } => {
            let profiles = ProfileFile::load(&profiles)?;
            let base = load_scenario(&scenario, None)?;
            let is_file = Path::new(&scenario).is_file();
            let make = |seed: u64| {
                if is_file {
                    let mut c = base.clone();
                    c.seed = seed;
                    Ok(c)
                } else {
                    suite::by_name(&scenario, seed)
                }
            };
            let (rows, all) = compare_profiles(make, base.seed, runs, &profiles.profile)?;
            write_compare_csv(create(&out)?, &rows)?;
            if let Some(p) = metrics {
                write_metrics_csv(create(&p)?, &all)?;
            }
            for r in &rows {
                println!(
                    "{}: {}/{} runs succeeded, mean FDR time {:.4} s",
                    r.profile, r.successes, r.runs, r.mean_t_fdr
                );
            }
        }
    }
    Ok(())
}
