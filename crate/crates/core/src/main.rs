use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chemowave::harness::{
    decay_report, emit_plotdata, prepare, run_check, run_experiment, write_decay_report, ExperimentConfig, SnapshotTable,
    CONFIG_KEYS,
};
use chemowave::Result;

#[derive(Parser)]
#[command(name = "chemowave", version, about = "Diffusion waves of a damped chemotaxis system", after_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Flat key=value config file (see keys below); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Final time (overrides `t_end`).
    #[arg(long, global = true)]
    t_end: Option<f64>,
    /// Number of cells (overrides `nx`).
    #[arg(long, global = true)]
    nx: Option<usize>,
    /// Number of log-spaced snapshots (overrides `snapshots`).
    #[arg(long, global = true)]
    snapshots: Option<usize>,
    /// Seed for randomized probes (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the wave profile and write profile.csv.
    Profile,
    /// Run the full experiment.
    Run,
    /// Re-fit decay exponents from an existing snapshots.csv.
    Fit,
    /// Report admissibility and quadratic-form bounds.
    Check,
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            if text.lines().any(|l| l.trim() == "[config]") {
                ExperimentConfig::from_manifest(&text)?
            } else {
                ExperimentConfig::parse(&text)?
            }
        }
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = cli.t_end {
        cfg.t_end = t;
    }
    if let Some(n) = cli.nx {
        cfg.nx = n;
    }
    if let Some(n) = cli.snapshots {
        cfg.snapshots = n;
        cfg.snapshot_times.clear();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_decay(rows: &[chemowave::harness::DecayRow]) {
    println!("{:<14} {:>10} {:>8} {:>8}  status", "series", "exponent", "r2", "theory");
    for r in rows {
        println!("{:<14} {:>10.4} {:>8.4} {:>8.2}  {}", r.series, r.exponent, r.r2, r.theory_exponent, r.status);
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    match cli.cmd {
        Cmd::Profile => {
            let setup = prepare(&cfg)?;
            fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join("profile.csv");
            let wp = setup.wave.profile();
            wp.write_csv(fs::File::create(&path)?)?;
            println!("xi_max={} n_pts={}", wp.xi_max, wp.n_pts);
            println!("ode_residual={:e}", wp.ode_residual());
            println!("monotone={}", wp.is_strictly_monotone());
            match wp.tail_check() {
                Ok(t) => println!("tail_c={} tail_r2={} tail_ok={}", t.c_fit, t.r2, t.ok),
                Err(e) => println!("tail: {e}"),
            }
            println!("wrote {}", path.display());
        }
        Cmd::Run => {
            let out = run_experiment(&cfg)?;
            println!("snapshots={} x0={:e}", out.table.rows.len(), out.manifest.x0.unwrap_or(0.0));
            print_decay(&out.decay);
            println!("wrote {}", cfg.out_dir.display());
        }
        Cmd::Fit => {
            let table = SnapshotTable::read(&cfg.out_dir.join("snapshots.csv"))?;
            let rows = decay_report(&table, cfg.fit_window())?;
            write_decay_report(&rows, &cfg.out_dir.join("decay_report.csv"))?;
            if let Err(e) = emit_plotdata(&table, &cfg.out_dir) {
                eprintln!("plot data skipped: {e}");
            }
            print_decay(&rows);
        }
        Cmd::Check => print!("{}", run_check(&cfg)?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
