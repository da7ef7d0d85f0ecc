use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod run;

#[derive(Parser, Debug)]
#[command(name = "clicksim", version, about = "Click-model training, evaluation and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config file and CLICKSIM_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory holding train.tsv, valid.tsv, test.tsv and optionally annotations.tsv.
    #[arg(long)]
    pub data: PathBuf,
    /// Results per list.
    #[arg(long, default_value_t = 10)]
    pub list_len: usize,
}

/// Typed shortcuts for the most used training keys.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub g_step: Option<usize>,
    /// `m,n`: m sampled batches, n critic updates each.
    #[arg(long)]
    pub d_step: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub emb_size: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset statistics.
    Stats {
        /// Dataset directory.
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        list_len: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a probabilistic click model and evaluate it on the test split.
    FitPgm {
        #[arg(long)]
        model: String,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Maximum-likelihood pretraining of the neural click model.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Adversarial training; pretrains first unless --init is given.
    TrainGail {
        /// Checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// LL, PPL and NDCG of a neural or PGM checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Sample synthetic click logs from a model.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 7)]
        repeats: usize,
        #[arg(long, default_value = "none")]
        permute: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Reverse/forward PPL between synthetic and real logs.
    Coverage {
        /// Synthetic sessions, e.g. synthetic.tsv from `generate`.
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long, default_value = "ubm")]
        surrogate: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a dataset from a known click model and report its PPL floor.
    SynthOracle {
        #[arg(long, default_value = "pbm")]
        family: String,
        /// Examination probabilities per rank (PBM); sets the list length.
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.8,0.6,0.4,0.2")]
        exam: Vec<f64>,
        /// List length for SDBN.
        #[arg(long, default_value_t = 5)]
        list_len: usize,
        #[arg(long, default_value_t = 20)]
        queries: usize,
        #[arg(long, default_value_t = 10)]
        docs_per_query: usize,
        #[arg(long, default_value_t = 3)]
        verticals: usize,
        #[arg(long, default_value_t = 5000)]
        train_sessions: usize,
        #[arg(long, default_value_t = 1000)]
        valid_sessions: usize,
        #[arg(long, default_value_t = 1000)]
        test_sessions: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Check the cloning and adversarial imitation bounds on random tiny MDPs.
    TheoryAudit {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        /// Horizons to audit; repeatable or comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4])]
        horizon: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Embedding tables (or initial hidden states) as `token<TAB>v1...`.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        /// query, doc, vertical, click or hidden.
        #[arg(long, default_value = "doc")]
        table: String,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(run::exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<u8> {
    use commands::*;
    match cmd {
        Command::Stats { data, list_len, common } => stats(&data, list_len, &common),
        Command::FitPgm { model, data, common } => fit_pgm(&model, &data, &common),
        Command::Pretrain { data, train, common } => pretrain(&data, &train, &common),
        Command::TrainGail { init, data, train, common } => train_gail(init.as_deref(), &data, &train, &common),
        Command::Eval { model, split, data, common } => eval(&model, &split, &data, &common),
        Command::Generate {
            model,
            repeats,
            permute,
            split,
            data,
            common,
        } => generate(&model, repeats, &permute, &split, &data, &common),
        Command::Coverage {
            synthetic,
            surrogate,
            split,
            data,
            train,
            common,
        } => coverage(&synthetic, &surrogate, &split, &data, &train, &common),
        Command::SynthOracle {
            family,
            exam,
            list_len,
            queries,
            docs_per_query,
            verticals,
            train_sessions,
            valid_sessions,
            test_sessions,
            common,
        } => synth_oracle(
            &OracleArgs {
                family,
                exam,
                list_len,
                queries,
                docs_per_query,
                verticals,
                sessions: [train_sessions, valid_sessions, test_sessions],
            },
            &common,
        ),
        Command::TheoryAudit {
            instances,
            horizon,
            common,
        } => theory_audit(instances, &horizon, &common),
        Command::ExportEmbeddings {
            model,
            table,
            data,
            common,
        } => export_embeddings(&model, &table, &data, &common),
    }
}
