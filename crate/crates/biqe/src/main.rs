use std::path::PathBuf;
use std::process::ExitCode;

use biqe::config::{ModelChoice, ENV_PREFIX};
use biqe::{commands, CliError, CliResult, RunConfig};
use biqe_core::synthetic::SyntheticConfig;
use clap::{Args, Parser, Subcommand};

const AFTER_HELP: &str = "\
Configuration is resolved in order: built-in defaults, the --config file
(key=value lines, # comments), environment variables, then flags. Any key
can be set from the environment as BIQE_<KEY>, e.g. BIQE_EPOCHS=5 or
BIQE_BATCH_SIZE=32. Unknown keys are rejected. The resolved configuration
is written to config.txt in every output directory.

Exit codes: 0 success, 1 user error, 2 internal error.";

#[derive(Parser)]
#[command(name = "biqe", version, about = "Bidirectional query encoder for conjunctive queries over knowledge graphs")]
#[command(after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine paths and star queries from a triples file (or a directory with
    /// train.tsv, dev.tsv and test.tsv) into a dataset directory.
    Generate(RunArgs),
    /// Train the encoder or the GQE-MP baseline on a dataset directory.
    Train(RunArgs),
    /// Filtered ranking reports for the CQ and Paths queries of a split.
    Eval(RunArgs),
    /// Non-relative attention share and the no-future ablation table.
    Analyze(RunArgs),
    /// Write a small clustered synthetic triples file.
    Synth(SynthArgs),
}

#[derive(Args)]
#[command(after_help = AFTER_HELP)]
struct RunArgs {
    /// key=value configuration file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// Input triples (generate) or dataset directory (other commands)
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    #[arg(long, value_name = "N")]
    max_len: Option<usize>,
    /// Use no-future attention for the encoder
    #[arg(long)]
    ablation: bool,
    /// Model checkpoint for eval and analyze
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Split to evaluate: train, dev or test
    #[arg(long, value_name = "NAME")]
    split: Option<String>,
    /// Score with the ground-truth answer sets (eval only)
    #[arg(long)]
    oracle: bool,
    /// Set any configuration key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut flags: Vec<(&str, String)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::user(format!("--set {kv}: expected KEY=VALUE")))?;
            flags.push((k.trim(), v.to_string()));
        }
        let path = |p: &PathBuf| p.display().to_string();
        let named = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("model", self.model.map(|v| v.name().to_string())),
            ("data", self.data.as_ref().map(path)),
            ("out", self.out.as_ref().map(path)),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("max_len", self.max_len.map(|v| v.to_string())),
            ("ablation", self.ablation.then(|| "true".to_string())),
            ("checkpoint", self.checkpoint.as_ref().map(path)),
            ("split", self.split.clone()),
            ("oracle", self.oracle.then(|| "true".to_string())),
        ];
        flags.extend(named.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
        let env = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX));
        RunConfig::resolve(self.config.as_deref(), env, &flags)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    entities: usize,
    #[arg(long, default_value_t = 8)]
    relations: usize,
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 600)]
    triples: usize,
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a.resolve()?),
        Command::Train(a) => commands::train(&a.resolve()?),
        Command::Eval(a) => commands::eval(&a.resolve()?),
        Command::Analyze(a) => commands::analyze(&a.resolve()?),
        Command::Synth(a) => {
            let cfg = SyntheticConfig {
                entities: a.entities,
                relations: a.relations,
                clusters: a.clusters,
                triples: a.triples,
                seed: a.seed,
                ..Default::default()
            };
            commands::synth(&cfg, &a.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
