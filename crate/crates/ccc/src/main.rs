use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ccc::cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match ccc::cli::execute(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
