//! Command-line pipelines: toy data generation, training, evaluation,
//! inference, caption graphs, retrieval and attribute enrichment.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod provenance;

use args::{Cli, Command};
use config::{Overrides, RunConfig};
use error::CliResult;

/// Runs one parsed invocation and returns what should go to stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    let overrides = Overrides {
        seed: cli.seed,
        model: cli.model.clone(),
        keep_after_nms: cli.keep_after_nms,
    };
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::GenToy(a) => commands::gen_toy(&mut cfg, a),
        Command::Train(a) => commands::train(&mut cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Infer(a) => commands::infer(&cfg, a),
        Command::Graph(a) => commands::graph(&mut cfg, a),
        Command::Retrieve(a) => commands::retrieve(&mut cfg, a),
        Command::Enrich(a) => commands::enrich(&cfg, a),
    }
}
