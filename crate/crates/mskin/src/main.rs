use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mskin::config::parse_config;
use mskin::scenario::run_scenario;
use mskin::verify::verify_all;
use mskin_core::diffusion_coefficients::build_delta;
use mskin_core::numerics::fmt_f64;

#[derive(Parser)]
#[command(name = "mskin", version, about = "Maxwell-Stefan / Boltzmann mixture verification runs")]
struct Cli {
    /// output directory (default: the config's output.dir, else ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// override the seed of every scenario
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// run one scenario
    Run { config: PathBuf },
    /// run every *.toml in a directory
    Verify { dir: PathBuf },
    /// print Δ_ij and k_ij(T=1) from the closed form
    PrintCoeffs { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    mskin::init_threads();
    let code = match &cli.cmd {
        Cmd::Run { config } => run(&cli, config),
        Cmd::Verify { dir } => verify(&cli, dir),
        Cmd::PrintCoeffs { config } => print_coeffs(config),
    };
    ExitCode::from(code)
}

fn run(cli: &Cli, path: &PathBuf) -> u8 {
    let mut cfg = match parse_config(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if cli.seed.is_some() {
        cfg.numerics.seed = cli.seed;
    }
    let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&stem));
    match run_scenario(&cfg, &cfg.name_or(&stem), &dir) {
        Ok(m) => {
            if !cli.quiet {
                for a in &m.assertions {
                    println!("{} {}: {}", if a.passed { "pass" } else { "FAIL" }, a.name, a.detail);
                }
                println!("artifacts in {} ({:.1} s)", dir.display(), m.wall_seconds);
            }
            if m.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}

fn verify(cli: &Cli, dir: &PathBuf) -> u8 {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let quiet = cli.quiet;
    let res = verify_all(dir, &out, cli.seed, |s| {
        if !quiet {
            eprintln!("{}: {:?}", s.name, s.status);
        }
    });
    match res {
        Ok(summary) => {
            if !quiet {
                print!("{}", summary.table());
            }
            if summary.all_passed() {
                0
            } else if summary.has_config_errors() {
                2
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", dir.display());
            2
        }
    }
}

fn print_coeffs(path: &PathBuf) -> u8 {
    let cfg = match parse_config(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let Some(block) = &cfg.mixture else {
        eprintln!("error: {}: no [mixture] block", path.display());
        return 2;
    };
    let spec = match block.build() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let model = build_delta(&spec);
    println!("i,j,mu_red,delta,k_t1");
    for i in 0..spec.n_species() {
        for j in i..spec.n_species() {
            println!("{i},{j},{},{},{}", fmt_f64(model.mu_red[i][j]), fmt_f64(model.delta[i][j]), fmt_f64(model.k(i, j, 1.0)));
        }
    }
    0
}
