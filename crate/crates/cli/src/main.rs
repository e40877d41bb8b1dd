use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dzof_core::config::Config;
use dzof_core::features::HourWindow;
use dzof_core::pipeline::{self, Stage};
use dzof_core::synth::{self, CitySpec};
use dzof_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dzof",
    version,
    about = "Discover functional zones from transit smart-card flows and POIs"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core); never changes outputs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of mixture components.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Smoothing constant of the boarding/alighting ratio.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// POI service-area radius in metres.
    #[arg(long = "radius-m", global = true)]
    radius_m: Option<f64>,
    /// Kept hours of the day, inclusive, as A:B.
    #[arg(long = "hour-window", global = true)]
    hour_window: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write the manifest.
    Run,
    /// Parse, filter and aggregate swipes into hourly platform flows.
    Ingest,
    /// Build weekday/weekend ratio features.
    Features,
    /// Fit the Gaussian mixture and assign platforms.
    Cluster,
    /// Count POIs and build cluster profiles.
    Profile,
    /// Label clusters with urban functions.
    Label,
    /// Vote zone labels and compute the summary and accuracy tables.
    Aggregate,
    /// Regenerate report.md from existing artifacts.
    Report,
    /// Generate a synthetic city and a config that runs on it.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// City specification (TOML); defaults to the desk-scale city.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Multiplier on every flow intensity.
    #[arg(long)]
    scale: Option<f64>,
    /// Malformed lines to slip into the SCD file.
    #[arg(long = "corrupt-lines")]
    corrupt_lines: Option<usize>,
}

fn load_config(g: &Global) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(out) = &g.out {
        cfg.out_dir = Some(std::path::absolute(out).map_err(|e| Error::io(out, e))?);
    }
    if let Some(k) = g.k {
        cfg.em.k = k;
    }
    if let Some(e) = g.epsilon {
        cfg.features.epsilon = e;
    }
    if let Some(r) = g.radius_m {
        cfg.poi.radius_m = r;
    }
    if let Some(w) = &g.hour_window {
        cfg.features.hour_window = HourWindow::parse(w)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_outcome(outcome: &pipeline::RunOutcome) -> Result<()> {
    println!("stages: {}", outcome.stages.join(", "));
    println!("output: {}", outcome.out_dir.display());
    for c in &outcome.manifest.clusters {
        println!(
            "  C{}: {} ({} platforms) [{}]",
            c.cluster,
            c.label,
            c.platforms,
            c.rationale.join(", ")
        );
    }
    if let Some(r) = pipeline::read_recovery(&outcome.out_dir)? {
        println!(
            "recovery: {}/{} non-sparse zones ({:.1}%), {}/{} sparse zones, platform ARI {:.3}",
            r.recovered,
            r.non_sparse_zones,
            100.0 * r.rate,
            r.sparse_recovered,
            r.sparse_zones,
            r.platform_ari
        );
    }
    Ok(())
}

fn synth_city(g: &Global, args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            CitySpec::from_toml(&text)?
        }
        None => CitySpec::default(),
    };
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    if let Some(s) = args.scale {
        spec.scale = s;
    }
    if let Some(c) = args.corrupt_lines {
        spec.corrupt_lines = c;
    }
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("city"));
    let city = pipeline::with_workers(g.workers.unwrap_or(0), || synth::generate(&spec))??;
    let files = synth::write_city(&city, &dir)?;
    let cfg_path = dir.join("dzof.toml");
    std::fs::write(&cfg_path, pipeline::config_for_city(&spec).to_toml())
        .map_err(|e| Error::io(&cfg_path, e))?;
    println!(
        "city: {} zones, {} platforms, {} POIs, {} swipes",
        city.zones.len(),
        city.platforms.len(),
        city.pois.len(),
        city.records.len()
    );
    println!("scd: {}", files.scd.display());
    println!("config: {}", cfg_path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let stage = match &cli.command {
        Command::Synth(args) => return synth_city(&cli.global, args),
        Command::Run => None,
        Command::Ingest => Some(Stage::Ingest),
        Command::Features => Some(Stage::Features),
        Command::Cluster => Some(Stage::Cluster),
        Command::Profile => Some(Stage::Profile),
        Command::Label => Some(Stage::Label),
        Command::Aggregate => Some(Stage::Aggregate),
        Command::Report => Some(Stage::Report),
    };
    let cfg = load_config(&cli.global)?;
    let outcome = match stage {
        None => pipeline::run_pipeline(&cfg)?,
        Some(s) => pipeline::run_stages(&cfg, &[s])?,
    };
    print_outcome(&outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
