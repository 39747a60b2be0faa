use clap::Parser;

fn main() {
    let cli = jobmatch_cli::Cli::parse();
    if let Err(err) = jobmatch_cli::run(cli) {
        eprintln!("{}", jobmatch_cli::error_line(&err));
        std::process::exit(1);
    }
}
