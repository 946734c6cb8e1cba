use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use foltr_core::experiment::{
    read_run_log, run_experiment, run_sweep, summarize, unlearn_from_history, write_run_log, DatasetSource,
    ExperimentConfig, ExperimentError, ExperimentOutput, RunLog, Summary, SweepGrid,
};
use foltr_core::synthetic::{generate, SyntheticConfig};
use foltr_core::{ClickModelName, DatasetKind, FeatureDataset, ScenarioKind};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Parser)]
#[command(
    name = "foltr",
    version,
    about = "Federated online learning to rank with client unlearning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scenario (and unlearn, for `--scenario unlearn`) over every fold and repeat.
    Run(RunArgs),
    /// Train 9h-0m and 9h-1m once, then unlearn for every (n', dt) cell.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Unlearning local steps to try.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        unlearn_steps: Vec<usize>,
        /// History intervals to try.
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        delta_ts: Vec<usize>,
    },
    /// Average run logs (files or directories of `.jsonl` logs) into curves and tables.
    Summarize {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Directory for the summary files; prints the table when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unlearn the target client from a stored history file.
    Unlearn {
        /// `config.toml` of the run that wrote the history.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        history: PathBuf,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        #[arg(long, default_value_t = 0)]
        repeat: usize,
        #[arg(long)]
        unlearn_local_steps: Option<usize>,
        /// Run log to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset as LETOR `train.txt` and `test.txt`.
    GenerateSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        max_grade: u8,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Start from a TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mq2007, mslr10k, yahoo, istella or synthetic.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    click_model: Option<ClickModelName>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    local_steps: Option<usize>,
    #[arg(long)]
    global_steps: Option<usize>,
    /// History interval, shared by training and unlearning.
    #[arg(long)]
    delta_t: Option<usize>,
    #[arg(long)]
    unlearn_local_steps: Option<usize>,
    /// 9h-1m, 10h-0m, 9h-0m or unlearn.
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// Poison strength.
    #[arg(long)]
    z: Option<f64>,
    /// Defaults to the last client.
    #[arg(long)]
    target_client: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Per-query min-max feature normalization (default depends on the dataset).
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn dataset_source(&self) -> Result<DatasetSource, CliError> {
        let name = self.dataset.as_deref().unwrap_or("synthetic");
        if name.eq_ignore_ascii_case("synthetic") {
            if self.data_root.is_some() {
                return Err(CliError::Usage(
                    "--data-root does not apply to the synthetic dataset".into(),
                ));
            }
            return Ok(DatasetSource::Synthetic(SyntheticConfig::default()));
        }
        let kind: DatasetKind = name
            .parse()
            .map_err(|e: foltr_core::dataset::DatasetError| CliError::Usage(e.to_string()))?;
        let root = self
            .data_root
            .clone()
            .ok_or_else(|| CliError::Usage(format!("--data-root is required for {kind}")))?;
        Ok(DatasetSource::Letor {
            kind,
            root,
            normalize: self.normalize,
        })
    }

    fn into_config(self) -> Result<ExperimentConfig, CliError> {
        let from_file = self.config.is_some();
        let mut c = match &self.config {
            Some(p) => {
                let mut c = ExperimentConfig::load(p)?;
                if self.dataset.is_some() || self.data_root.is_some() {
                    c.dataset = self.dataset_source()?;
                }
                c
            }
            None => ExperimentConfig::new(self.dataset_source()?),
        };
        if let (Some(n), DatasetSource::Letor { normalize, .. }) = (self.normalize, &mut c.dataset) {
            *normalize = Some(n);
        }
        if let Some(v) = self.click_model {
            c.click_model = v;
        }
        if let Some(v) = self.clients {
            c.federation.num_clients = v;
            if !from_file && self.target_client.is_none() {
                c.scenario.target_client = v.saturating_sub(1);
            }
        }
        if let Some(v) = self.local_steps {
            c.federation.local_steps = v;
        }
        if let Some(v) = self.global_steps {
            c.federation.global_rounds = v;
        }
        if let Some(v) = self.delta_t {
            c.federation.delta_t = v;
            c.unlearn.delta_t = v;
        }
        if let Some(v) = self.unlearn_local_steps {
            c.unlearn.local_steps = v;
        }
        if let Some(v) = self.scenario {
            c.scenario.kind = v;
        }
        if let Some(v) = self.z {
            c.scenario.z = v;
        }
        if let Some(v) = self.target_client {
            c.scenario.target_client = v;
        }
        if let Some(v) = self.seed {
            c.federation.seed = v;
        }
        if let Some(v) = self.repeats {
            c.repeats = v;
        }
        if let Some(v) = self.eval_every {
            c.eval_every = v;
        }
        if self.out.is_some() {
            c.out_dir = self.out;
        }
        Ok(c)
    }
}

fn report(out: &ExperimentOutput) {
    print!("{}", out.summary.finals_tsv());
    if let Some(e) = out.logs.iter().find_map(|l| l.efficiency.as_ref()) {
        println!(
            "stored records per client: {} ({} values each)",
            e.stored_records_per_client, e.values_per_record
        );
        println!(
            "aggregations: retrain {} vs unlearn {} ({:.1}x fewer)",
            e.retrain_aggregations, e.unlearn_aggregations, e.communication_reduction
        );
        println!(
            "local updates per client: retrain {} vs unlearn {} ({:.1}x fewer)",
            e.retrain_local_updates_per_client, e.unlearn_local_updates_per_client, e.local_update_reduction
        );
    }
}

fn collect_logs(paths: &[PathBuf]) -> Result<Vec<RunLog>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let dir = if p.join("runs").is_dir() {
                p.join("runs")
            } else {
                p.clone()
            };
            let entries = std::fs::read_dir(&dir).map_err(|source| CliError::Io {
                path: dir.clone(),
                source,
            })?;
            for e in entries {
                let e = e.map_err(|source| CliError::Io {
                    path: dir.clone(),
                    source,
                })?;
                if e.path().extension().is_some_and(|x| x == "jsonl") {
                    files.push(e.path());
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    files.sort();
    Ok(files.iter().map(|f| read_run_log(f)).collect::<Result<_, _>>()?)
}

fn write_synthetic(out: &Path, seed: u64, max_grade: u8) -> Result<(), CliError> {
    if max_grade != 2 && max_grade != 4 {
        return Err(CliError::Usage("--max-grade must be 2 or 4".into()));
    }
    let (train, test) = generate(&SyntheticConfig {
        seed,
        max_grade,
        ..Default::default()
    });
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.into(),
        source,
    })?;
    let write = |name: &str, d: &FeatureDataset| {
        let path = out.join(name);
        let text: String = d
            .queries()
            .iter()
            .flat_map(|q| q.to_letor_lines())
            .map(|l| l + "\n")
            .collect();
        std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })
    };
    write("train.txt", &train)?;
    write("test.txt", &test)
}

fn print_summary(summary: &Summary, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(dir) => summary.write_files(dir)?,
        None => {
            print!("{}", summary.table_tsv());
            print!("{}", summary.gap_tsv());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => report(&run_experiment(&args.into_config()?)?),
        Command::Sweep {
            run,
            unlearn_steps,
            delta_ts,
        } => {
            let out = run_sweep(
                &run.into_config()?,
                &SweepGrid {
                    unlearn_steps,
                    delta_ts,
                },
            )?;
            report(&out);
            print!("{}", out.summary.table_tsv());
        }
        Command::Summarize { logs, out } => print_summary(&summarize(&collect_logs(&logs)?)?, out.as_deref())?,
        Command::Unlearn {
            config,
            history,
            fold,
            repeat,
            unlearn_local_steps,
            out,
        } => {
            let mut c = ExperimentConfig::load(&config)?;
            if let Some(n) = unlearn_local_steps {
                c.unlearn.local_steps = n;
            }
            let log = unlearn_from_history(&c, fold, repeat, &history)?;
            write_run_log(&out, &log)?;
            if let Some(v) = log.final_ndcg() {
                println!("final nDCG@10 after unlearning: {v:.6}");
            }
        }
        Command::GenerateSynthetic { seed, max_grade, out } => write_synthetic(&out, seed, max_grade)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
