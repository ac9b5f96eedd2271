use clap::Parser;

fn main() {
    kgrl::numcore::tune_allocator();
    let cli = kgrl::cli::Cli::parse();
    if let Err(e) = kgrl::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
