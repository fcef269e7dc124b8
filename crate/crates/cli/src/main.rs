use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use smile_core::config::ExperimentConfig;
use smile_core::experiments::{self, Acquired, Scene};
use smile_core::io::{export_mosaic, write_text};
use smile_core::Error;

const RESOLVED: &str = "config.resolved.toml";

#[derive(Parser)]
#[command(name = "smile", version, about = "Simultaneous multislice experiments on an extended field of view")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel-existence sweep over coil count, map support and kernel size.
    TheorySweep(Common),
    /// Masks, PSFs, g-factor maps and GA-optimized masks.
    SamplingStudy(Common),
    /// SMILE against CAIPI with slice-GRAPPA on one simulated scene.
    Compare(Common),
    /// Write the phantom slices and coil maps.
    Phantom(Common),
    /// Simulate both acquisitions from a scene written by `phantom`.
    Simulate(WithInput),
    /// Reconstruct and score data written by `simulate`.
    Recon(WithInput),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overriding the config [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct WithInput {
    #[command(flatten)]
    common: Common,
    /// Directory produced by the previous pipeline stage.
    #[arg(long)]
    input: PathBuf,
}

/// Failures that map to exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: Error) -> anyhow::Error {
    match e {
        Error::InvalidArgument(_) | Error::InvalidPlacement(_) => Usage(e.to_string()).into(),
        other => other.into(),
    }
}

fn resolve(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).map_err(usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(usage)?;
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let text = cfg.to_toml()?;
    write_text(&c.out.join(RESOLVED), &text)?;
    println!("{text}");
    Ok(cfg)
}

fn require_dir(p: &Path) -> anyhow::Result<()> {
    if !p.is_dir() {
        return Err(Usage(format!("input directory {} does not exist", p.display())).into());
    }
    Ok(())
}

/// Input files missing from an earlier stage are usage errors.
fn read_input<T>(r: smile_core::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Usage(format!("missing input file: {io}")).into(),
        other => usage(other),
    })
}

fn copy_files(from: &Path, to: &Path, names: &[&str]) -> anyhow::Result<()> {
    for name in names {
        let bytes = fs::read(from.join(name)).with_context(|| format!("reading {}", from.join(name).display()))?;
        smile_core::io::write_atomic(&to.join(name), &bytes)?;
    }
    Ok(())
}

fn theory_sweep(c: &Common) -> anyhow::Result<bool> {
    let cfg = resolve(c)?;
    let table = experiments::theory_sweep(&cfg.theory, cfg.seed)?;
    write_text(&c.out.join("sweep.csv"), &table.to_csv())?;
    let summary = table.summary();
    write_text(&c.out.join("summary.txt"), &summary)?;
    eprint!("{summary}");
    Ok(table.violations().is_empty())
}

fn sampling_study(c: &Common) -> anyhow::Result<bool> {
    let cfg = resolve(c)?;
    let study = experiments::sampling_study(&cfg)?;
    study.write(&c.out, cfg.export.images)?;
    eprint!("{}", study.summary());
    Ok(true)
}

fn finish_compare(out: &Path, cfg: &ExperimentConfig, outcome: &experiments::CompareOutcome) -> anyhow::Result<bool> {
    outcome.write(out, cfg)?;
    eprint!("{}", outcome.summary());
    Ok(outcome.failures().is_empty())
}

fn compare(c: &Common) -> anyhow::Result<bool> {
    let cfg = resolve(c)?;
    let outcome = experiments::compare(&cfg)?;
    finish_compare(&c.out, &cfg, &outcome)
}

fn phantom(c: &Common) -> anyhow::Result<bool> {
    let cfg = resolve(c)?;
    let scene = Scene::generate(&cfg)?;
    scene.write(&c.out)?;
    if cfg.export.images {
        export_mosaic(&c.out.join("slices.pgm"), &scene.slices.magnitude(), cfg.export.window)?;
    }
    Ok(true)
}

fn simulate(w: &WithInput) -> anyhow::Result<bool> {
    require_dir(&w.input)?;
    let cfg = resolve(&w.common)?;
    let scene = read_input(Scene::read(&w.input, &cfg))?;
    let sigma = experiments::noise_sigma(&cfg, &scene)?;
    let acquired = Acquired::simulate(&cfg, &scene.slices, &scene.maps, sigma)?;
    acquired.write(&w.common.out)?;
    copy_files(&w.input, &w.common.out, &["slices.smle", "maps.smle"])?;
    Ok(true)
}

fn recon(w: &WithInput) -> anyhow::Result<bool> {
    require_dir(&w.input)?;
    let cfg = resolve(&w.common)?;
    let scene = read_input(Scene::read(&w.input, &cfg))?;
    let acquired = read_input(Acquired::read(&w.input, &cfg))?;
    let sigma = experiments::noise_sigma(&cfg, &scene)?;
    let outcome = experiments::evaluate(&cfg, scene, &acquired, sigma)?;
    finish_compare(&w.common.out, &cfg, &outcome)
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("SMILE_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Usage(format!("SMILE_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Usage("SMILE_THREADS must be a positive integer".into()).into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    init_threads()?;
    match &cli.command {
        Command::TheorySweep(c) => theory_sweep(c),
        Command::SamplingStudy(c) => sampling_study(c),
        Command::Compare(c) => compare(c),
        Command::Phantom(c) => phantom(c),
        Command::Simulate(w) => simulate(w),
        Command::Recon(w) => recon(w),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = run(&cli);
    eprintln!("elapsed {:.2?}", start.elapsed());
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: experiment reported failures");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
