use clap::Parser;

fn main() {
    let cli = seqsearch_cli::Cli::parse();
    if let Err(err) = seqsearch_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
