mod cache;
mod grid;
mod pipeline;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use diqkd::behavior::{singlet_behavior, Behavior, MeasurementAngles};
use diqkd::guess::{solve_bit_distance, DualCertificate, KeyFunction};
use diqkd::npa::Level;
use diqkd::protocol::{key_rate, Transcript};
use rayon::prelude::*;

use cache::CertCache;

#[derive(Parser)]
#[command(name = "diqkd", version, about = "Device-independent QKD bounds and protocol simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the behavior of a noisy singlet measured at preset angles.
    Behavior(BehaviorArgs),
    /// Guessing-probability bound over a noise grid, as CSV `rho,pguess`.
    PguessSweep(SweepArgs),
    /// Asymptotic key rate over a noise grid, as CSV `rho,q`.
    KeyrateSweep(KeyrateArgs),
    /// Run the protocol on simulated rounds and report its security figures.
    Simulate(pipeline::SimulateArgs),
    /// Solve and write one dual certificate.
    Certificate(CertificateArgs),
    /// Check a behavior, certificate or transcript JSON file.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Alice {45, 0} and Bob {22.5, 67.5, 45} degrees.
    Ekert,
    /// The first two inputs of each party only.
    Chsh,
}

#[derive(Args, Clone)]
pub struct SourceArgs {
    #[arg(long, value_enum, default_value = "ekert")]
    preset: Preset,
    /// Keep Bob's raw outcome instead of inverting it.
    #[arg(long)]
    no_flip: bool,
}

impl SourceArgs {
    pub fn angles(&self) -> MeasurementAngles {
        let a = match self.preset {
            Preset::Ekert => MeasurementAngles::ekert(),
            Preset::Chsh => MeasurementAngles::ekert_chsh(),
        };
        if self.no_flip {
            a.without_flip()
        } else {
            a
        }
    }

    pub fn behavior(&self, rho: f64) -> Result<Behavior> {
        Ok(singlet_behavior(rho, &self.angles())?)
    }
}

#[derive(Args)]
struct BehaviorArgs {
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Inclusive grid `a:b:step`.
    #[arg(long, conflicts_with = "rho")]
    grid: Option<String>,
    /// Single noise values; may repeat.
    #[arg(long)]
    rho: Vec<f64>,
    #[arg(long, default_value = "2", value_parser = parse_level)]
    level: Level,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "DIQKD_CERT_DIR")]
    cert_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeltaMode {
    /// `delta = rho`.
    Figure,
    /// `delta` is the QBER of the noise model on the key inputs.
    Model,
}

#[derive(Args)]
struct KeyrateArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, value_enum, default_value = "figure")]
    delta_mode: DeltaMode,
}

#[derive(Clone, Copy, ValueEnum)]
enum CertKind {
    Guess,
    Bit,
}

#[derive(Args)]
struct CertificateArgs {
    #[arg(long, conflicts_with = "behavior")]
    rho: Option<f64>,
    /// Behavior JSON file to solve for instead of a preset.
    #[arg(long)]
    behavior: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value = "2", value_parser = parse_level)]
    level: Level,
    #[arg(long, value_enum, default_value = "guess")]
    kind: CertKind,
    /// Alice's key input.
    #[arg(long, default_value_t = 0)]
    input: usize,
    /// Box radius for a robust guessing certificate; 0 gives the plain one.
    #[arg(long, default_value_t = 0.0)]
    radius: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "DIQKD_CERT_DIR")]
    cert_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    path: PathBuf,
}

fn parse_level(s: &str) -> std::result::Result<Level, String> {
    Level::parse(s).map_err(|e| e.to_string())
}

/// Writes to `path`, or to stdout without one.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn read_behavior(path: &Path) -> Result<Behavior> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let b = Behavior::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let report = b.validate();
    if !report.is_valid() {
        bail!("{} is not a valid behavior: {report}", path.display());
    }
    Ok(b)
}

fn cmd_behavior(args: &BehaviorArgs) -> Result<()> {
    let b = args.source.behavior(args.rho)?;
    emit(args.out.as_deref(), &(b.to_json()? + "\n"))
}

fn sweep_grid(args: &SweepArgs) -> Result<Vec<f64>> {
    let grid = match (&args.grid, args.rho.is_empty()) {
        (Some(g), _) => grid::parse_grid(g)?,
        (None, false) => args.rho.clone(),
        (None, true) => bail!("give --grid or --rho"),
    };
    grid::check_rhos(&grid)?;
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        bail!("noise values must be strictly increasing");
    }
    Ok(grid)
}

/// One value per grid point, solved in parallel and returned in grid order.
/// Failed points are reported on stderr and come back as `None`.
fn sweep<F>(args: &SweepArgs, value: F) -> Result<Vec<(f64, Option<f64>)>>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    let grid = sweep_grid(args)?;
    let cache = CertCache::new(args.cert_dir.clone())?;
    let f = KeyFunction::identity(0, 2);
    Ok(grid
        .par_iter()
        .map(|&rho| {
            let out = args
                .source
                .behavior(rho)
                .and_then(|b| cache.guess(&b, &f, args.level, 0.0))
                .and_then(|g| value(rho, g.p_guess));
            match out {
                Ok(v) => (rho, Some(v)),
                Err(e) => {
                    eprintln!("rho = {rho}: {e:#}");
                    (rho, None)
                }
            }
        })
        .collect())
}

fn write_csv(path: Option<&Path>, header: &str, rows: &[(f64, Option<f64>)]) -> Result<bool> {
    let mut text = format!("{header}\n");
    for (rho, v) in rows {
        match v {
            Some(v) => text.push_str(&format!("{rho:.6},{v:.6}\n")),
            None => text.push_str(&format!("{rho:.6},nan\n")),
        }
    }
    emit(path, &text)?;
    Ok(rows.iter().all(|(_, v)| v.is_some()))
}

fn cmd_pguess(args: &SweepArgs) -> Result<bool> {
    let rows = sweep(args, |_, p| Ok(p))?;
    write_csv(args.out.as_deref(), "rho,pguess", &rows)
}

fn model_delta(rho: f64) -> Result<f64> {
    // Key bits come from Alice's first and Bob's third input.
    let q = singlet_behavior(rho, &MeasurementAngles::ekert())?.qber(0, 2)?;
    Ok(q.min(1.0 - q))
}

fn cmd_keyrate(args: &KeyrateArgs) -> Result<bool> {
    let mode = args.delta_mode;
    let rows = sweep(&args.sweep, |rho, p| {
        let delta = match mode {
            DeltaMode::Figure => rho.min(0.5),
            DeltaMode::Model => model_delta(rho)?,
        };
        Ok(key_rate(p, delta)?)
    })?;
    write_csv(args.sweep.out.as_deref(), "rho,q", &rows)
}

fn cmd_certificate(args: &CertificateArgs) -> Result<()> {
    let b = match (&args.behavior, args.rho) {
        (Some(p), _) => read_behavior(p)?,
        (None, Some(rho)) => args.source.behavior(rho)?,
        (None, None) => bail!("give --rho or --behavior"),
    };
    let a = b.alphabets();
    if args.input >= a.nu {
        bail!("key input {} outside Alice's {} inputs", args.input, a.nu);
    }
    let f = KeyFunction::identity(args.input, a.nx);
    let (cert, value) = match args.kind {
        CertKind::Guess => {
            let g = CertCache::new(args.cert_dir.clone())?.guess(&b, &f, args.level, args.radius)?;
            (g.certificate, g.p_guess)
        }
        CertKind::Bit => {
            if args.radius != 0.0 {
                bail!("--radius applies to guessing certificates only");
            }
            let d = solve_bit_distance(&b, &f, args.level)?;
            (d.certificate, d.distance)
        }
    };
    eprintln!(
        "{} bound {value:.8} (l1 norm {:.4}, slack min eigenvalue {:.2e})",
        cert.kind.name(),
        cert.l1_norm,
        cert.meta.slack_min_eigenvalue
    );
    emit(args.out.as_deref(), &(cert.to_json()? + "\n"))
}

fn cmd_validate(args: &ValidateArgs) -> Result<bool> {
    let text = fs::read_to_string(&args.path)
        .with_context(|| format!("reading {}", args.path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not JSON", args.path.display()))?;
    let kind = if value.get("lambda").is_some() {
        "certificate"
    } else if value.get("rounds").is_some() {
        "transcript"
    } else if value.get("table").is_some() {
        "behavior"
    } else {
        return Err(anyhow!("{} is not a behavior, certificate or transcript", args.path.display()));
    };
    let problem = match kind {
        "certificate" => DualCertificate::from_json(&text).err().map(|e| e.to_string()),
        "transcript" => Transcript::from_json(&text).err().map(|e| e.to_string()),
        _ => match Behavior::from_json(&text) {
            Err(e) => Some(e.to_string()),
            Ok(b) => {
                let r = b.validate();
                (!r.is_valid()).then(|| r.to_string())
            }
        },
    };
    match problem {
        None => {
            println!("{kind}: valid");
            Ok(true)
        }
        Some(p) => {
            println!("{kind}: invalid: {p}");
            Ok(false)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let ok = |b: bool| if b { ExitCode::SUCCESS } else { ExitCode::from(1) };
    match cli.command {
        Command::Behavior(a) => cmd_behavior(&a).map(|_| ExitCode::SUCCESS),
        Command::PguessSweep(a) => cmd_pguess(&a).map(ok),
        Command::KeyrateSweep(a) => cmd_keyrate(&a).map(ok),
        Command::Simulate(a) => pipeline::cmd_simulate(&a),
        Command::Certificate(a) => cmd_certificate(&a).map(|_| ExitCode::SUCCESS),
        Command::Validate(a) => cmd_validate(&a).map(ok),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
