use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use mppde_cli::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            let mut cmd = Cli::command();
            cmd.build();
            let sub = std::env::args().skip(1).find(|a| !a.starts_with('-'));
            let usage = match sub.as_deref().and_then(|s| cmd.find_subcommand_mut(s)) {
                Some(s) => s.render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("\n{usage}");
            return ExitCode::from(2);
        }
    };
    match mppde_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
