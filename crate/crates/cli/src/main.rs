use clap::Parser;
use cos3d_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("COS3D_LOG").init();
    if let Err(f) = run(cli) {
        eprintln!("{}", f.report());
        std::process::exit(f.code);
    }
}
