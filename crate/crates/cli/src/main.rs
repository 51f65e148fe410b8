use clap::Parser;

fn main() {
    let result = pmn_cli::common::init_threads().and_then(|_| pmn_cli::run(pmn_cli::Cli::parse()));
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
