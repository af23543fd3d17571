//! `demerge` command-line frontend.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or format
//! error, 4 evaluator error. Errors go to stderr as one line,
//! `ERROR <kind>: <detail>`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use demerge_core::search::{default_grid, SearchStrategy, DEFAULT_SEED};
use demerge_core::{MergeMode, WeightConfig};
use serde::Deserialize;

use crate::analytics::{analytics_report, LayerPattern};
use crate::checkpoint::TensorSource;
use crate::error::{Error, Result};
use crate::format::{self, CheckpointReader, CheckpointWriter};
use crate::merge::{compose_dem_into, extract_dv_into, interpolate_into};
use crate::search::{grid_search, random_search, report_to_json, CommandEvaluator, SearchOptions};
use crate::{cost, fsutil, weights};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (DEMCKPT format version 1)");

/// Trials drawn by `search random` when `-k` is not given.
pub const DEFAULT_RANDOM_TRIALS: usize = 50;
/// Coefficient applied to every vector for the DEM row of `analyze` when no
/// weights are given.
pub const DEFAULT_DEM_COEFFICIENT: f64 = 0.25;

#[derive(Parser, Debug)]
#[command(name = "demerge", version = VERSION)]
#[command(about = "Build distribution edited models from fine-tuned checkpoints")]
struct Cli {
    /// JSON file with defaults for flags (explicit flags win)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log verbosity
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract a distribution vector: FINETUNED - BASE
    Diff {
        base: PathBuf,
        finetuned: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compose BASE + sum(w_i * dv_i)
    Merge {
        base: PathBuf,
        /// Distribution vector as LABEL=PATH (repeatable)
        #[arg(long = "dv", value_name = "LABEL=PATH", value_parser = parse_labeled, required = true)]
        dvs: Vec<(String, PathBuf)>,
        /// Weight config as inline JSON, a JSON file, or a search report
        #[arg(long)]
        weights: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Interpolate models: sum(w_i * model_i) with sum(w_i) = 1
    Interp {
        /// Model as LABEL=PATH (repeatable)
        #[arg(long = "model", value_name = "LABEL=PATH", value_parser = parse_labeled, required = true)]
        models: Vec<(String, PathBuf)>,
        #[arg(long)]
        weights: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Search merge weights against an external evaluator
    Search {
        #[command(subcommand)]
        strategy: SearchCommand,
    },
    /// Distances, cosine similarities and layer-wise profiles
    Analyze {
        base: PathBuf,
        #[arg(long = "model", value_name = "LABEL=PATH", value_parser = parse_labeled)]
        models: Vec<(String, PathBuf)>,
        #[arg(long = "dv", value_name = "LABEL=PATH", value_parser = parse_labeled)]
        dvs: Vec<(String, PathBuf)>,
        /// Weights for the DEM row; defaults to 0.25 for every vector
        #[arg(long)]
        weights: Option<String>,
        /// Regex whose first capture group names the layer
        #[arg(long)]
        layer_pattern: Option<String>,
        /// Report JSON path; CSV mirrors are written beside it
        #[arg(short, long)]
        output: PathBuf,
    },
    /// GPU-hour accounting for a cost scenario
    Cost {
        #[arg(long)]
        scenario: PathBuf,
        /// Search-space comparison for n,m,T,V
        #[arg(long, value_name = "N,M,T,V")]
        complexity: Option<String>,
        /// Print JSON instead of a table
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand, Debug)]
enum SearchCommand {
    /// One shared coefficient for all vectors over a grid
    Grid {
        #[command(flatten)]
        common: SearchArgs,
        /// Comma-separated coefficients (default 0.05,0.10,...,0.50)
        #[arg(long)]
        grid: Option<String>,
    },
    /// Per-vector weights drawn uniformly from [0, 1)
    Random {
        #[command(flatten)]
        common: SearchArgs,
        /// Number of trials
        #[arg(short = 'k', long = "trials")]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = ModeArg::Dem)]
        mode: ModeArg,
    },
}

#[derive(Args, Debug)]
struct SearchArgs {
    base: PathBuf,
    #[arg(long = "dv", value_name = "LABEL=PATH", value_parser = parse_labeled, required = true)]
    dvs: Vec<(String, PathBuf)>,
    /// Evaluator command; the candidate path is appended as last argument
    #[arg(long)]
    evaluator: Option<String>,
    /// Concurrent trials
    #[arg(long)]
    jobs: Option<usize>,
    /// Keep candidate checkpoints
    #[arg(long)]
    keep: bool,
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Report path
    #[arg(short, long, default_value = "search-report.json")]
    output: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Dem,
    Interpolation,
}

impl From<ModeArg> for MergeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dem => MergeMode::Dem,
            ModeArg::Interpolation => MergeMode::Interpolation,
        }
    }
}

/// Defaults read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    evaluator: Option<String>,
    jobs: Option<usize>,
    keep: Option<bool>,
    work_dir: Option<PathBuf>,
    grid: Option<Vec<f64>>,
    trials: Option<usize>,
    seed: Option<u64>,
    layer_pattern: Option<String>,
}

fn parse_labeled(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => {
            Ok((label.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected LABEL=PATH, got '{s}'")),
    }
}

fn check_unique(items: &[(String, PathBuf)]) -> Result<()> {
    for (i, (label, _)) in items.iter().enumerate() {
        if items[..i].iter().any(|(l, _)| l == label) {
            return Err(Error::config(format!("label '{label}' given twice")));
        }
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::config(format!("bad grid value '{v}'")))
        })
        .collect()
}

fn parse_complexity(s: &str) -> Result<cost::SearchParams> {
    let v: Vec<u64> = s
        .split(',')
        .map(|x| x.trim().parse::<u64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("expected N,M,T,V integers, got '{s}'")))?;
    match v[..] {
        [sources, weights_per_source, train_steps, validation_steps] => Ok(cost::SearchParams {
            sources,
            weights_per_source,
            train_steps,
            validation_steps,
        }),
        _ => Err(Error::config(format!("expected N,M,T,V integers, got '{s}'"))),
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("invalid config {}: {e}", path.display())))
}

fn open_all(items: &[(String, PathBuf)]) -> Result<Vec<(String, CheckpointReader<std::fs::File>)>> {
    items
        .iter()
        .map(|(label, path)| Ok((label.clone(), format::open(path)?)))
        .collect()
}

fn check_weight_labels(w: &WeightConfig, items: &[(String, PathBuf)]) -> Result<()> {
    let labels: Vec<&str> = items.iter().map(|(l, _)| l.as_str()).collect();
    w.align(&labels).map(|_| ())?;
    Ok(())
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return 2;
            }
            let msg = e.to_string();
            let line = msg
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("ERROR UsageError: {line}");
            return 2;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .try_init();

    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let detail = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("ERROR {}: {detail}", e.kind());
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Diff {
            base,
            finetuned,
            output,
        } => {
            let base = format::open(&base)?;
            let tuned = format::open(&finetuned)?;
            let mut w = CheckpointWriter::create(&output, demerge_core::CheckpointKind::Delta)?;
            extract_dv_into(&base, &tuned, &mut w)?;
            w.finish()
        }
        Command::Merge {
            base,
            dvs,
            weights,
            output,
        } => {
            check_unique(&dvs)?;
            let w = weights::load(&weights)?;
            check_weight_labels(&w, &dvs)?;
            let base = format::open(&base)?;
            let opened = open_all(&dvs)?;
            let labeled: Vec<(&str, &dyn TensorSource)> = opened
                .iter()
                .map(|(l, r)| (l.as_str(), r as &dyn TensorSource))
                .collect();
            let mut out = CheckpointWriter::create(&output, demerge_core::CheckpointKind::Model)?;
            compose_dem_into(&base, &labeled, &w, &mut out)?;
            out.finish()
        }
        Command::Interp {
            models,
            weights,
            output,
        } => {
            check_unique(&models)?;
            let w = weights::load(&weights)?;
            check_weight_labels(&w, &models)?;
            let opened = open_all(&models)?;
            let labeled: Vec<(&str, &dyn TensorSource)> = opened
                .iter()
                .map(|(l, r)| (l.as_str(), r as &dyn TensorSource))
                .collect();
            let mut out = CheckpointWriter::create(&output, demerge_core::CheckpointKind::Model)?;
            interpolate_into(&labeled, &w, &mut out)?;
            out.finish()
        }
        Command::Search { strategy } => run_search(strategy, &config),
        Command::Analyze {
            base,
            models,
            dvs,
            weights,
            layer_pattern,
            output,
        } => {
            let mut all = models.clone();
            all.extend(dvs.iter().cloned());
            check_unique(&all)?;
            let pattern = match layer_pattern.or(config.layer_pattern) {
                Some(p) => LayerPattern::new(&p)?,
                None => LayerPattern::default(),
            };
            let dem = match weights {
                Some(w) => {
                    let w = weights::load(&w)?;
                    check_weight_labels(&w, &all)?;
                    Some(w)
                }
                None if !all.is_empty() => Some(WeightConfig::uniform(
                    MergeMode::Dem,
                    all.iter().map(|(l, _)| l.as_str()),
                    DEFAULT_DEM_COEFFICIENT,
                )?),
                None => None,
            };
            let base = format::open(&base)?;
            let models = open_all(&models)?;
            let dvs = open_all(&dvs)?;
            let m: Vec<(&str, &dyn TensorSource)> = models
                .iter()
                .map(|(l, r)| (l.as_str(), r as &dyn TensorSource))
                .collect();
            let d: Vec<(&str, &dyn TensorSource)> = dvs
                .iter()
                .map(|(l, r)| (l.as_str(), r as &dyn TensorSource))
                .collect();
            let report = analytics_report(&base, &m, &d, dem.as_ref(), &pattern)?;
            report.write(&output)
        }
        Command::Cost {
            scenario,
            complexity,
            json,
        } => {
            let extra = complexity.as_deref().map(parse_complexity).transpose()?;
            let mut s = cost::load_scenario(&scenario)?;
            if extra.is_some() {
                s.search = extra;
            }
            let report = cost::evaluate(&s)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report.to_json()).expect("report serializes")
                );
            } else {
                print!("{}", report.render(&s));
            }
            Ok(())
        }
    }
}

fn run_search(cmd: SearchCommand, config: &ConfigFile) -> Result<()> {
    let (common, plan) = match cmd {
        SearchCommand::Grid { common, grid } => {
            let grid = match grid {
                Some(g) => parse_grid(&g)?,
                None => config.grid.clone().unwrap_or_else(default_grid),
            };
            if grid.is_empty() || grid.iter().any(|g| !g.is_finite()) {
                return Err(Error::config("grid must hold finite values"));
            }
            (common, Plan::Grid(grid))
        }
        SearchCommand::Random {
            common,
            k,
            seed,
            mode,
        } => {
            let k = k.or(config.trials).unwrap_or(DEFAULT_RANDOM_TRIALS);
            if k == 0 {
                return Err(Error::config("-k must be at least 1"));
            }
            let seed = seed.or(config.seed).unwrap_or(DEFAULT_SEED);
            (common, Plan::Random(k, seed, mode.into()))
        }
    };
    check_unique(&common.dvs)?;
    let evaluator = common
        .evaluator
        .clone()
        .or_else(|| config.evaluator.clone())
        .ok_or_else(|| Error::config("--evaluator is required"))?;
    let evaluator = CommandEvaluator::parse(&evaluator)?;
    let options = SearchOptions {
        jobs: common.jobs.or(config.jobs).unwrap_or(1).max(1),
        keep: common.keep || config.keep.unwrap_or(false),
        work_dir: common.work_dir.clone().or_else(|| config.work_dir.clone()),
    };

    let base = format::open(&common.base)?;
    let opened = open_all(&common.dvs)?;
    let dvs: Vec<(&str, &(dyn TensorSource + Sync))> = opened
        .iter()
        .map(|(l, r)| (l.as_str(), r as &(dyn TensorSource + Sync)))
        .collect();
    let report = match plan {
        Plan::Grid(grid) => grid_search(&base, &dvs, &grid, &evaluator, &options)?,
        Plan::Random(k, seed, mode) => random_search(&base, &dvs, k, seed, mode, &evaluator, &options)?,
    };
    let json = report_to_json(&report);
    fsutil::write_atomic(
        &common.output,
        &serde_json::to_vec_pretty(&json).expect("report serializes"),
    )?;
    let best = report.best();
    println!(
        "best trial {} of {}: objective {} weights {}",
        report.best_index,
        report.trials.len(),
        best.objective().unwrap_or(f64::NAN),
        weights::to_json(&best.weights)
    );
    if report.strategy == SearchStrategy::Grid {
        if let Some(e) = best.weights.entries.first() {
            println!("best coefficient: {}", e.weight);
        }
    }
    Ok(())
}

enum Plan {
    Grid(Vec<f64>),
    Random(usize, u64, MergeMode),
}
