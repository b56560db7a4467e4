mod args;
mod commands;
mod errors;
mod models;
mod reports;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Score(args) => commands::cmd_score(args),
        Command::Metaeval(args) => commands::cmd_metaeval(args),
        Command::Perturb(args) => commands::cmd_perturb(args),
        Command::Rank(args) => commands::cmd_rank(args),
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Stability(args) => commands::cmd_stability(args),
        Command::MatcherServe(args) => commands::cmd_matcher_serve(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.kind.code());
    }
}
