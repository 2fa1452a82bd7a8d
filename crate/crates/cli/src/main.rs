mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use lfcrypt_core::{Error, RunConfig};

use args::{Cli, Command};

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => EXIT_USAGE,
        Error::Sampling { .. } | Error::Config(_) | Error::CapExceeded { .. } => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } | Error::Image(_) => EXIT_IO,
        Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("LFCRYPT_THREADS") else {
        return Ok(());
    };
    let n: usize =
        v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Argument(format!("LFCRYPT_THREADS must be a positive integer, got '{v}'"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Error> {
    init_threads()?;
    let cfg = load_config(&cli)?;
    if cli.print_defaults {
        print!("{}", RunConfig::default().to_text());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::Argument("no command given".into()));
    };
    match command {
        Command::Keygen(a) => commands::keygen(cfg, a),
        Command::Encrypt(a) => commands::encrypt_cmd(cfg, a),
        Command::Decrypt(a) => commands::decrypt_cmd(cfg, a),
        Command::Digitize(a) => commands::digitize_cmd(a),
        Command::Reassemble(a) => commands::reassemble_cmd(a),
        Command::Demo(a) => commands::demo(cfg, a),
        Command::Attack(a) => commands::attack(cfg, a),
        Command::Correlate(a) => commands::correlate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Sampling { threshold, .. } = &e {
                eprintln!(
                    "the sampling interval must be at least {:.2} µm for this lenslet focal length",
                    threshold * 1e6
                );
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
