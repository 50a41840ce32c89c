use clap::Parser;

fn main() {
    let cli = sdehgnn::cli::Cli::parse();
    if let Err(e) = sdehgnn::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
