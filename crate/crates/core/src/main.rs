use clap::Parser;

use sm_arena::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("sm-arena: {e}");
        std::process::exit(e.exit_code());
    }
}
