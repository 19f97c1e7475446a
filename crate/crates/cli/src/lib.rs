//! `spancause`: prepare, train, predict, eval and crossval runs driven by a
//! flat `key = value` config file with command-line overrides.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_crossval, cmd_eval, cmd_predict, cmd_prepare, cmd_train, exit_code};
pub use config::{resolve, RunConfig, UsageError};

/// Declares one optional `--key VALUE` flag per config key.
macro_rules! overrides {
    ($($key:ident),* $(,)?) => {
        #[derive(Debug, Default, Args)]
        pub struct Overrides {
            $(
                #[arg(long = stringify!($key), value_name = "VALUE")]
                pub $key: Option<String>,
            )*
        }

        impl Overrides {
            pub fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$key {
                        out.push((stringify!($key), v.clone()));
                    }
                )*
                out
            }
        }
    };
}

overrides!(
    input,
    train_file,
    test_file,
    gold_file,
    predictions_file,
    vectors_file,
    checkpoint,
    vocab_file,
    output_dir,
    ordering,
    context_dim,
    pos_dim,
    recurrent,
    min_count,
    learning_rate,
    epochs,
    batch_size,
    grad_clip_norm,
    seed,
    max_decode_steps,
    max_span_len,
    dedup,
    k,
    checkpoint_format,
);

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a FinCausal file into the canonical corpus format.
    Prepare(Common),
    /// Train a model and write checkpoint, vocabulary and loss history.
    Train(Common),
    /// Decode causality tuples for every segment of a corpus.
    Predict(Common),
    /// Score predictions against gold tuples.
    Eval(Common),
    /// k-fold cross-validation; `ordering = both` adds a paired t-test.
    Crossval {
        #[command(flatten)]
        common: Common,
        /// Folds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "spancause",
    version,
    about = "Cause/effect span extraction with pointer networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn config_of(c: &Common) -> anyhow::Result<RunConfig> {
    resolve(c.config.as_deref(), &c.overrides.pairs())
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Prepare(c) => cmd_prepare(&config_of(c)?).map(drop),
        Command::Train(c) => cmd_train(&config_of(c)?).map(drop),
        Command::Predict(c) => cmd_predict(&config_of(c)?).map(drop),
        Command::Eval(c) => {
            let r = cmd_eval(&config_of(c)?)?;
            println!("token_f1\t{:.6}\nem_f1\t{:.6}", r.token.weighted_f1, r.exact.f1);
            Ok(())
        }
        Command::Crossval { common, jobs } => {
            let out = cmd_crossval(&config_of(common)?, *jobs)?;
            print!("{}", commands::crossval_text(&out));
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
