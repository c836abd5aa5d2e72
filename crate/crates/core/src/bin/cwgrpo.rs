use clap::Parser;

fn main() {
    let cli = cwgrpo::cli::Cli::parse();
    if let Err(e) = cwgrpo::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
