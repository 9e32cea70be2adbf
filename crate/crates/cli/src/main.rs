use clap::Parser;
use mapforge_cli::{exit_code, run, Cli, EXIT_IO};

fn main() {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("MAPFORGE_THREADS") {
        let pool = n
            .parse::<usize>()
            .map_err(anyhow::Error::from)
            .and_then(|n| Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?));
        if let Err(e) = pool {
            eprintln!("error: invalid MAPFORGE_THREADS={n:?}: {e}");
            std::process::exit(EXIT_IO);
        }
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
