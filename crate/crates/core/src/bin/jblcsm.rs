use clap::Parser;

fn main() {
    let cli = jblcsm::io::Cli::parse();
    std::process::exit(jblcsm::io::run(cli));
}
