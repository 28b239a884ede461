use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rfcap::captioner::DecodeMode;
use rfcap::encoders::{FloormapMode, SkeletonMode};
use rfcap::experiment::{prefetch_suite, run_ablation_suite, ExperimentConfig, Suite, TestCondition, Variant, Workspace};
use rfcap::metrics::{evaluate_corpus, read_jsonl, write_jsonl};
use rfcap::simulator::{generate_dataset, SimulatorConfig};
use rfcap::{Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "rfcap", version, about = "Synthetic RF daily-life captioning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        /// Simulator settings (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train the skeletonizer of a workspace and cache its predictions.
    TrainSkeleton(WorkspaceArgs),
    /// Report skeletonizer MPJPE of a workspace.
    EvalSkeleton(WorkspaceArgs),
    /// Train one captioning variant for one seed.
    Train(RunArgs),
    /// Caption the test split with a trained run.
    Caption {
        #[command(flatten)]
        run: RunArgs,
        /// Write JSONL predictions here instead of stdout.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Decode with beam search of this width instead of greedily.
        #[arg(long)]
        beam: Option<usize>,
        /// Caption these episode directories, printing one caption per line.
        #[arg(long)]
        episode: Vec<PathBuf>,
    },
    /// Score a trained run on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Evaluate on re-synthesized occluded heatmaps.
        #[arg(long)]
        occluded: bool,
    },
    /// Score prediction JSONL against reference JSONL.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        /// Number of trials cycling through multiple predictions per episode.
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run an ablation suite and report orderings.
    Ablate {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[command(flatten)]
        ws: WorkspaceArgs,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Train up to this many runs at once.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
}

#[derive(Args)]
struct WorkspaceArgs {
    /// Dataset root written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// Workspace directory for models, caches and reports.
    #[arg(long)]
    out: PathBuf,
    /// Experiment settings (TOML); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    ws: WorkspaceArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train without the paired L2 alignment loss.
    #[arg(long)]
    no_l2: bool,
    /// Train without the discriminators.
    #[arg(long)]
    no_discrim: bool,
    #[arg(long, value_enum, default_value_t = SkeletonArg::Predicted)]
    skeleton_mode: SkeletonArg,
    /// Shorthand for `--skeleton-mode oracle`.
    #[arg(long)]
    oracle_skeletons: bool,
    #[arg(long, value_enum, default_value_t = FloormapArg::PersonCentric)]
    floormap_mode: FloormapArg,
    /// Perturb test-time floormaps with the configured noise.
    #[arg(long)]
    floormap_noise: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SkeletonArg {
    Predicted,
    Oracle,
    #[value(name = "2d")]
    TwoD,
    Location,
}

#[derive(Clone, Copy, ValueEnum)]
enum FloormapArg {
    PersonCentric,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Table3,
    Table4,
    Table5,
    Noise,
    Occlusion,
}

impl SuiteArg {
    fn suite(self) -> Suite {
        match self {
            SuiteArg::Table3 => Suite::Table3,
            SuiteArg::Table4 => Suite::Table4,
            SuiteArg::Table5 => Suite::Table5,
            SuiteArg::Noise => Suite::Noise,
            SuiteArg::Occlusion => Suite::Occlusion,
        }
    }
}

impl WorkspaceArgs {
    fn open(&self) -> Result<Workspace> {
        let config = match &self.config {
            Some(p) => ExperimentConfig::from_toml(&read_text(p)?)?,
            None => ExperimentConfig::default(),
        };
        Workspace::open(&self.data, &self.out, config)
    }
}

impl RunArgs {
    fn variant(&self) -> Variant {
        let skeleton = match (self.oracle_skeletons, self.skeleton_mode) {
            (true, _) | (_, SkeletonArg::Oracle) => SkeletonMode::Oracle,
            (_, SkeletonArg::Predicted) => SkeletonMode::Predicted,
            (_, SkeletonArg::TwoD) => SkeletonMode::TwoD,
            (_, SkeletonArg::Location) => SkeletonMode::Location,
        };
        let floormap = match self.floormap_mode {
            FloormapArg::PersonCentric => FloormapMode::PersonCentric,
            FloormapArg::None => FloormapMode::None,
        };
        variant_for(skeleton, floormap, self.no_l2, self.no_discrim)
    }

    fn condition(&self, occluded: bool) -> TestCondition {
        match (occluded, self.floormap_noise) {
            (true, _) => TestCondition::Occluded,
            (_, true) => TestCondition::NoisyFloormap,
            _ => TestCondition::Clean,
        }
    }
}

/// The named variant for these settings, or a composed name for other combinations.
fn variant_for(skeleton: SkeletonMode, floormap: FloormapMode, no_l2: bool, no_discrim: bool) -> Variant {
    let known = ["full", "no-l2", "no-discrim", "2d", "location", "no-floormap", "oracle"];
    let wanted = Variant { name: "", skeleton, floormap, no_l2, no_discrim };
    let same = |v: &Variant| (v.skeleton, v.floormap, v.no_l2, v.no_discrim) == (skeleton, floormap, no_l2, no_discrim);
    if let Some(v) = known.iter().filter_map(|n| Variant::parse(n)).find(same) {
        return v;
    }
    let mut parts = vec![skeleton.name()];
    if floormap == FloormapMode::None {
        parts.push("no-floormap");
    }
    if no_l2 {
        parts.push("no-l2");
    }
    if no_discrim {
        parts.push("no-discrim");
    }
    // one name per process; the CLI never builds more than one
    let name: &'static str = Box::leak(parts.join("+").into_boxed_str());
    Variant { name, ..wanted }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Contract(e.to_string()))?;
    println!("{text}");
    Ok(text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let cfg = match &config {
                Some(p) => SimulatorConfig::from_toml(&read_text(p)?)?,
                None => SimulatorConfig::default(),
            };
            let manifest = generate_dataset(&cfg, seed, &out)?;
            let echo = serde_json::json!({ "version": VERSION, "seed": seed, "config": cfg });
            write_text(&out.join("simulate.json"), &(echo.to_string() + "\n"))?;
            println!(
                "{} paired and {} unpaired episodes written to {}",
                manifest.paired_episodes,
                manifest.unpaired_episodes,
                out.display()
            );
        }
        Command::TrainSkeleton(ws) | Command::EvalSkeleton(ws) => {
            let ws = ws.open()?;
            print_json(&ws.skeleton_eval)?;
        }
        Command::Train(args) => {
            let ws = args.ws.open()?;
            let result = ws.run(&args.variant(), args.seed)?;
            print_json(&result)?;
        }
        Command::Caption { run, pred, beam, episode } => {
            let ws = run.ws.open()?;
            let mode = beam.map_or(DecodeMode::Greedy, DecodeMode::Beam);
            if !episode.is_empty() {
                for r in ws.caption_episodes(&run.variant(), run.seed, &episode, mode)? {
                    println!("{}", r.captions.join("\n"));
                }
                return Ok(());
            }
            let records = ws.caption_run(&run.variant(), run.seed, run.condition(false), mode)?;
            match pred {
                Some(p) => write_jsonl(&p, &records)?,
                None => {
                    for r in &records {
                        println!("{}", serde_json::to_string(r).map_err(|e| Error::Contract(e.to_string()))?);
                    }
                }
            }
        }
        Command::Eval { run, occluded } => {
            let ws = run.ws.open()?;
            let metrics = ws.evaluate_condition(&run.variant(), run.seed, run.condition(occluded))?;
            print_json(&metrics)?;
        }
        Command::Metrics { pred, refs, trials, report } => {
            let r = evaluate_corpus(&read_jsonl(&pred)?, &read_jsonl(&refs)?, trials)?;
            let text = print_json(&r)?;
            if let Some(p) = report {
                write_text(&p, &(text + "\n"))?;
            }
        }
        Command::Ablate { suite, ws, seeds, parallel } => {
            let ws = ws.open()?;
            if parallel > 1 {
                prefetch_suite(&ws, suite.suite(), seeds, parallel)?;
            }
            let report = run_ablation_suite(&ws, suite.suite(), seeds)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Contract(e.to_string()))?;
            let path = ws.out.join("suites").join(format!("{}.json", report.suite.name()));
            write_text(&path, &(text + "\n"))?;
            for row in &report.rows {
                println!("{:<16} CIDEr-D {:.4} ± {:.4}", row.row, row.mean.cider_d, row.sd.cider_d);
            }
            for c in &report.comparisons {
                println!(
                    "{} > {}: gap {:.4}, sd {:.4}, ordered {}, separated {}",
                    c.better, c.worse, c.gap, c.sd, c.ordered, c.separated
                );
            }
            if let Some(d) = report.relative_degradation {
                println!("relative degradation {:.2}%", 100.0 * d);
            }
            println!("report written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
