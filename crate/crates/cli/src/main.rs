use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bibc::beamforming::{BfOptions, Problem};
use bibc::harness::{self, Csi, Designer, ExperimentConfig, ExperimentKind, SnrRange};
use bibc::linalg::{db_to_pow, pow_db};
use bibc::partitioning::{dp_partition, exhaustive_partition, greedy_partition, run_ap_selection, GameConfig, UtilityContext};
use bibc::{Scene, SceneChannels};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_row::PartitionRow;

#[derive(Parser, Debug)]
#[command(name = "bibc", version, about = "Bistatic backscatter simulation batch runner")]
struct Cli {
    /// Experiment file providing defaults, including the scene.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scene file overriding the one in the experiment file.
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Channel estimation error with and without refinement.
    Estimate {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr_p_db: Option<Vec<f64>>,
        #[arg(long)]
        jprime: Option<usize>,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Error probability versus SNR, closed form and simulated.
    PeSweep {
        #[arg(long, value_delimiter = ',')]
        problem: Option<Vec<Problem>>,
        #[arg(long, value_delimiter = ',')]
        bits: Option<Vec<u32>>,
        /// `start:stop:step` in dB.
        #[arg(long, allow_hyphen_values = true)]
        snr_db_range: Option<SnrRange>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        csi: Option<Csi>,
    },
    /// Designs one beamformer and writes it as `re,im` rows.
    Beamform {
        #[arg(long)]
        problem: Problem,
        #[command(flatten)]
        design: DesignArgs,
        /// Partition file from the `partition` subcommand; AP selection
        /// runs when omitted.
        #[arg(long)]
        partition_file: Option<PathBuf>,
        /// Diagnostics CSV; next to the output when omitted.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Assigns AP roles and writes the partition as JSON.
    Partition {
        #[arg(long, value_enum, default_value_t = Method::Coalition)]
        method: Method,
        #[arg(long, default_value = "alpha0")]
        problem: Problem,
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Path-gain map of a designed beamformer over the floor plan.
    PgMap {
        #[arg(long)]
        problem: Option<Problem>,
        #[arg(long, num_args = 2, value_names = ["NX", "NY"])]
        grid: Option<Vec<usize>>,
    },
    /// Per-problem path gain, objective and interference ratio.
    TableSummary {
        #[arg(long, value_delimiter = ',')]
        problem: Option<Vec<Problem>>,
    },
    /// Monte-Carlo estimate of the average per-antenna path loss.
    Calibrate {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Runs the experiment described by `--config`.
    Run,
}

#[derive(Args, Debug)]
struct DesignArgs {
    #[arg(long, allow_hyphen_values = true)]
    alpha_db: Option<f64>,
    /// Transmit energy; the scene value when omitted.
    #[arg(long)]
    p_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Dp,
    Coalition,
    Greedy,
    Exhaustive,
}

mod serde_row {
    use serde::Serialize;

    #[derive(Serialize)]
    pub struct PartitionRow {
        pub method: String,
        pub problem: String,
        pub utility_db: f64,
        pub c_s_db: f64,
        pub feasible: bool,
    }
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &cli.scene {
        cfg.scene = Some(s.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(o) = &cli.out {
        cfg.output = Some(o.clone());
    }
    Ok(cfg)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn sidecar(out: Option<&Path>, explicit: Option<&PathBuf>, default: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.clone();
    }
    match out {
        Some(o) => {
            let stem = o.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
            o.with_file_name(format!("{stem}_diagnostics.csv"))
        }
        None => PathBuf::from(default),
    }
}

fn options(scene: &Scene, cfg: &ExperimentConfig, args: &DesignArgs) -> BfOptions {
    let alpha_db = args.alpha_db.unwrap_or(cfg.alpha_db);
    BfOptions::new(args.p_max.unwrap_or(scene.p_max)).with_alpha(db_to_pow(alpha_db))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli)?;
    let out = cfg.output.clone();
    match &cli.command {
        Command::Run => {
            if cli.config.is_none() {
                bail!("run needs --config");
            }
            harness::run_experiment(&cfg, open_out(out.as_deref())?)?;
        }
        Command::Estimate { snr_p_db, jprime, trials } => {
            if let Some(v) = snr_p_db {
                cfg.snr_p_db = v.clone();
            }
            cfg.jprime = jprime.unwrap_or(cfg.jprime);
            cfg.trials = trials.unwrap_or(cfg.trials);
            cfg.kind = ExperimentKind::NmseSweep;
            harness::write_csv(&harness::nmse_sweep(&cfg)?, open_out(out.as_deref())?)?;
        }
        Command::PeSweep { problem, bits, snr_db_range, trials, csi } => {
            if let Some(p) = problem {
                cfg.problems = p.clone();
            }
            if let Some(b) = bits {
                cfg.bits = b.clone();
            }
            cfg.snr_db = snr_db_range.unwrap_or(cfg.snr_db);
            cfg.trials = trials.unwrap_or(cfg.trials);
            cfg.csi = csi.unwrap_or(cfg.csi);
            harness::write_csv(&harness::pe_sweep(&cfg)?, open_out(out.as_deref())?)?;
        }
        Command::Beamform { problem, design, partition_file, diagnostics } => {
            let scene = cfg.load_scene()?;
            let chans = SceneChannels::synthesize(&scene)?;
            let opts = options(&scene, &cfg, design);
            let mut designer = Designer::new(&chans, opts, cfg.seed);
            let d = match partition_file {
                Some(path) => {
                    let part = harness::read_partition(File::open(path).with_context(|| format!("opening {}", path.display()))?, chans.ref_id())?;
                    let ctx = UtilityContext::new(&chans, *problem, opts);
                    let e = ctx.evaluate(&part);
                    if let Some(err) = &e.error {
                        bail!("{problem} failed on the given partition: {err}");
                    }
                    let solution = e.solution.clone().context("no solution")?;
                    harness::Design { problem: *problem, partition: e.partition, solution, u: e.u, c: e.c, feasible: e.feasible }
                }
                None => designer.design(*problem)?,
            };
            harness::write_vector(&d.solution.x, open_out(out.as_deref())?)?;
            let row = harness::summarize(&chans, &d)?;
            let diag = harness::SolutionRow {
                objective_db: row.objective_db,
                c_s_db: row.c_s_db,
                power: d.solution.power(),
                feasible: d.feasible,
            };
            let path = sidecar(out.as_deref(), diagnostics.as_ref(), "beamform_diagnostics.csv");
            harness::write_csv(&[diag], File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
        }
        Command::Partition { method, problem, design, diagnostics } => {
            let scene = cfg.load_scene()?;
            let chans = SceneChannels::synthesize(&scene)?;
            let ctx = UtilityContext::new(&chans, *problem, options(&scene, &cfg, design));
            let eval = match method {
                Method::Dp => ctx.evaluate(&dp_partition(&chans.link_gains(0)?, harness::DP_SCALE, chans.ref_id())?),
                Method::Coalition => run_ap_selection(&ctx, &GameConfig { seed: cfg.seed, ..Default::default() }, None)?.best,
                Method::Greedy => greedy_partition(&ctx, cfg.seed)?,
                Method::Exhaustive => exhaustive_partition(&ctx)?,
            };
            harness::write_partition(&eval.partition, open_out(out.as_deref())?)?;
            let row = PartitionRow {
                method: format!("{method:?}").to_lowercase(),
                problem: problem.to_string(),
                utility_db: pow_db(eval.u),
                c_s_db: pow_db(eval.c),
                feasible: eval.feasible,
            };
            let path = sidecar(out.as_deref(), diagnostics.as_ref(), "partition_diagnostics.csv");
            harness::write_csv(&[row], File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
        }
        Command::PgMap { problem, grid } => {
            if let Some(p) = problem {
                cfg.problems = vec![*p];
            }
            if let Some(g) = grid {
                cfg.grid = [g[0], g[1]];
            }
            harness::write_csv(&harness::pg_map_experiment(&cfg)?, open_out(out.as_deref())?)?;
        }
        Command::TableSummary { problem } => {
            if let Some(p) = problem {
                cfg.problems = p.clone();
            }
            harness::write_csv(&harness::table_summary(&cfg)?, open_out(out.as_deref())?)?;
        }
        Command::Calibrate { trials } => {
            let c = harness::snr_calibration(&cfg.load_scene()?, *trials, cfg.seed)?;
            harness::write_csv(&[c], open_out(out.as_deref())?)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
