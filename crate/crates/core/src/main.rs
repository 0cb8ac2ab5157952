use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use empathy_bench::models::BackendRegistry;
use empathy_bench::runner::{
    ablation_cells, ablation_matrix, context_sweep, emit_report, run_experiment, search_hyperparameters, CellResult,
    Experiment, ExperimentConfig, ResultsStore, SearchOutcome, SearchSettings, SearchSpace,
};

#[derive(Parser)]
#[command(name = "empathy-bench", version, about = "Subject-aware empathy detection benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the config's output directory (the results store).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides both the model seed and the split seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Foundation-model checkpoint cache.
    #[arg(long, env = "EMPATHY_BENCH_CACHE")]
    cache_dir: Option<PathBuf>,
    /// Concurrent folds; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Hyperparameter override, `key=value`; values parse as JSON when possible.
    #[arg(long = "params", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Applies `best_hyperparameters` from a saved search result.
    #[arg(long, value_name = "SEARCH_JSON")]
    params_from: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Checks a config and prints it fully resolved.
    ValidateConfig(Common),
    /// Runs one experiment and appends it to the results store.
    Run(Common),
    /// Tunes the backend's hyperparameters by mean cross-validated accuracy.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Evaluates an in-context backend at several context proportions.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
        proportions: Vec<f64>,
    },
    /// Runs the fine-tuning ablation matrix.
    Ablate(Common),
    /// Writes tables and plots for stored runs.
    Report {
        /// Results store directory.
        #[arg(long)]
        store: PathBuf,
        /// Run ids; all runs when omitted.
        #[arg(long, value_delimiter = ',')]
        runs: Vec<String>,
        /// Report directory; defaults to `<store>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::from(raw))
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut config =
        ExperimentConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(dir) = &c.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(seed) = c.seed {
        config.seed = seed;
        config.protocol.seed = seed;
        config.finetune.seed = seed;
    }
    if let Some(dir) = &c.cache_dir {
        config.tfm.cache_dir = Some(dir.clone());
    }
    if let Some(w) = c.workers {
        config.workers = w;
    }
    if let Some(path) = &c.params_from {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let outcome: SearchOutcome = serde_json::from_str(&text).context("parsing search result")?;
        if outcome.backend != config.model.backend {
            bail!(
                "search result is for {:?} but the config uses {:?}",
                outcome.backend,
                config.model.backend
            );
        }
        config.model.hyperparameters.extend(outcome.best_hyperparameters);
    }
    for p in &c.params {
        let (k, v) = p.split_once('=').with_context(|| format!("--params expects KEY=VALUE, got {p:?}"))?;
        config.model.hyperparameters.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    Ok(config)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn report_cells(store: &ResultsStore, cells: &[CellResult], name: &str) -> Result<()> {
    let ids: Vec<String> = cells.iter().filter_map(|c| c.run_id.clone()).collect();
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    println!("{} cells, {failed} failed", cells.len());
    for c in cells.iter().filter(|c| c.error.is_some()) {
        println!("  failed {:?}: {}", c.tags, c.error.as_deref().unwrap_or_default());
    }
    let path = store.root().join(format!("{name}.json"));
    write_json(&path, &cells)?;
    if !ids.is_empty() {
        let files = emit_report(store, &ids, &store.root().join(format!("report-{name}")))?;
        println!("summary: {}", files.summary_md.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let registry = BackendRegistry::with_defaults();
    match cli.command {
        Command::ValidateConfig(c) => {
            let config = load_config(&c)?;
            config.validate(&registry)?;
            print!("{}", config.to_toml()?);
            eprintln!("config ok (hash {})", config.hash());
        }
        Command::Run(c) => {
            let config = load_config(&c)?;
            let store = ResultsStore::open(&config.output_dir)?;
            let record = run_experiment(config, &registry, &store)?;
            let s = &record.report.scores;
            println!(
                "{} {} {}: accuracy {:.3} auc {:.3} precision {:.3} recall {:.3} f1 {:.3}",
                record.run_id,
                record.backend,
                record.protocol.name(),
                s.accuracy,
                s.auc,
                s.precision,
                s.recall,
                s.f1
            );
            if let Some(std) = &record.report.std {
                println!("  std: accuracy {:.3} auc {:.3}", std.accuracy, std.auc);
            }
        }
        Command::Search { common, trials } => {
            let config = load_config(&common)?;
            let space = SearchSpace::for_backend(&config.model.backend)?;
            let settings = SearchSettings {
                n_trials: trials,
                sampler: empathy_bench::runner::search::TpeSettings {
                    seed: config.seed,
                    ..Default::default()
                },
                ..SearchSettings::default()
            };
            fs::create_dir_all(&config.output_dir)?;
            let out = config.output_dir.join(format!("search-{}.json", config.model.backend));
            let experiment = Experiment::prepare(config, &registry)?;
            let outcome = search_hyperparameters(&experiment, &space, &settings)?;
            write_json(&out, &outcome)?;
            println!(
                "best trial {} accuracy {:.4}: {}",
                outcome.best_trial,
                outcome.best_value,
                serde_json::to_string(&outcome.best_hyperparameters)?
            );
            println!("saved {}", out.display());
        }
        Command::Sweep { common, proportions } => {
            let config = load_config(&common)?;
            let store = ResultsStore::open(&config.output_dir)?;
            let experiment = Experiment::prepare(config, &registry)?;
            let cells = context_sweep(&experiment, &proportions, &store)?;
            report_cells(&store, &cells, "sweep")?;
        }
        Command::Ablate(c) => {
            let config = load_config(&c)?;
            let store = ResultsStore::open(&config.output_dir)?;
            let experiment = Experiment::prepare(config, &registry)?;
            let cells = ablation_matrix(&experiment, &ablation_cells(), &store)?;
            report_cells(&store, &cells, "ablation")?;
        }
        Command::Report { store, runs, out } => {
            if !store.join(empathy_bench::runner::store::RUNS_FILE).exists() {
                bail!("{} holds no results store", store.display());
            }
            let s = ResultsStore::open(&store)?;
            let out = out.unwrap_or_else(|| store.join("report"));
            let files = emit_report(&s, &runs, &out)?;
            println!("{}", files.results_csv.display());
            println!("{}", files.summary_md.display());
            for p in files.plots {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
