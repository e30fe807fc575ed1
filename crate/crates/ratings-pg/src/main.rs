use clap::Parser;

fn main() {
    let cli = ratings_pg::cli::Cli::parse();
    if let Err(e) = ratings_pg::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
