use clap::Parser;

fn main() {
    let cli = pmp_cli::Cli::parse();
    if let Err(e) = pmp_cli::run(cli) {
        eprintln!("error: {}", e.msg);
        std::process::exit(e.code);
    }
}
