use clap::Parser;

use retrograph::cli::{run, Cli, UsageError};

fn main() {
    // clap exits 0 for --help/--version and 2 for usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            };
            std::process::exit(code);
        }
    }
}
