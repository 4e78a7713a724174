use clap::Parser;
use sparkle_cli::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage errors count as configuration errors (exit 1), not clap's default 2
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = sparkle_cli::run(cli) {
        eprintln!("sparkle: {e}");
        std::process::exit(e.exit_code());
    }
}
