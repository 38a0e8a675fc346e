use clap::Parser;
use dsl_cli::commands::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.globals.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
