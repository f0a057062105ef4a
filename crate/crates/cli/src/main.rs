use clap::Parser;

fn main() {
    let args = auscult_cli::Cli::parse();
    let level = if args.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = auscult_cli::run(args) {
        eprintln!("error: {e:#}");
        std::process::exit(auscult_cli::exit_code(&e));
    }
}
