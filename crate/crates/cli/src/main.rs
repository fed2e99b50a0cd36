use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lunabell_core::analysis::time_to_violation;
use lunabell_core::linkbudget::{
    geometric_loss_db, preset_arms, scenario_total, ApertureLink, PRESET_TABLE1,
};
use lunabell_core::session::{
    kv_hash, parse_override, persist, run_headless, run_replay, SessionConfig, PRESET_LAB_103DB,
    REPORT_KV_FILE,
};
use lunabell_core::spacetime::{admissible_window, GeometryConfig, Loophole, TimingBudget};
use lunabell_core::tagstream::{
    match_streams, read_tags, CoincidenceConfig, DeltaHistogram, TagFileError, TagReader,
    DEFAULT_WINDOW_PS,
};
use lunabell_service::{live_config, ServiceConfig};

#[derive(Parser)]
#[command(name = "lunabell", version, about = "Earth-Moon Bell test simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file. Its `preset` key picks the base preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset when no config file is given.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set link.arms.0.geometric_db=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, default_preset: &str) -> Result<SessionConfig> {
        let mut overrides = self
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        let config = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => bail!("use either --config or --preset"),
            (Some(path), None) => SessionConfig::load(path, &overrides)?,
            (None, preset) => {
                SessionConfig::from_preset(preset.as_deref().unwrap_or(default_preset), &overrides)?
            }
        };
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a headless simulation and print its report.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the run directory here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the machine-readable report instead of the table.
        #[arg(long)]
        kv: bool,
    },
    /// Recompute a run from its directory and compare report hashes.
    Replay {
        dir: PathBuf,
        #[arg(long)]
        kv: bool,
    },
    /// Start the live session service.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Persist finished sessions under this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 250)]
        tick_ms: u64,
    },
    /// Print a link budget.
    Budget {
        /// paper_table1 or paper_lab_103db.
        #[arg(long, default_value = PRESET_TABLE1)]
        preset: String,
        #[arg(long)]
        kv: bool,
        /// Also compute a geometric loss: full divergence, rad.
        #[arg(long, requires_all = ["distance_m", "aperture_m"])]
        divergence_rad: Option<f64>,
        #[arg(long)]
        distance_m: Option<f64>,
        #[arg(long)]
        aperture_m: Option<f64>,
    },
    /// Light times and validity windows for the Earth-Moon triangle.
    Spacetime {
        /// Choice-to-setting delay budget, s.
        #[arg(long, default_value_t = 0.5)]
        delta_t: f64,
        #[arg(long, default_value_t = lunabell_core::spacetime::EARTH_MOON_SIDE_KM)]
        side_km: f64,
        /// Use side/c instead of the rounded 1.28 s.
        #[arg(long)]
        exact: bool,
    },
    /// Match two tag files and write the pairs.
    Coincide {
        alice: PathBuf,
        bob: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW_PS)]
        window_ps: u64,
        /// Pair file to write; only counts are printed without it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CHSH analysis of a run directory, or the time-to-violation planner.
    Analyze {
        /// Run directory to analyse.
        dir: Option<PathBuf>,
        /// Plan instead: time needed for a k-sigma violation.
        #[arg(long)]
        plan: bool,
        #[arg(long, default_value_t = 0.806)]
        visibility: f64,
        #[arg(long, default_value_t = 1e9)]
        pair_rate: f64,
        #[arg(long, default_value_t = 103.0)]
        loss_db: f64,
        #[arg(long, default_value_t = 3.0)]
        k: f64,
    },
    /// Arrival-time difference histogram of two tag files, as CSV.
    Histogram {
        alice: PathBuf,
        bob: PathBuf,
        #[arg(long, default_value_t = 4)]
        bin_ps: u64,
        #[arg(long, default_value_t = 1000)]
        span_ps: u64,
        /// Histogram matched pairs only instead of every combination.
        #[arg(long)]
        matched: bool,
        #[arg(long, default_value_t = DEFAULT_WINDOW_PS)]
        window_ps: u64,
    },
}

fn simulate(config: SessionConfig, out: Option<PathBuf>, kv: bool) -> Result<()> {
    let output = run_headless(&config)?;
    if let Some(dir) = &out {
        persist(&output, dir).with_context(|| format!("writing {}", dir.display()))?;
    }
    if kv {
        print!("{}", output.report.to_kv());
    } else {
        print!("{}", output.report.to_text());
        println!("report hash {}", output.report.hash());
        if let Some(dir) = out {
            println!("run written to {}", dir.display());
        }
    }
    Ok(())
}

fn replay(dir: &Path, kv: bool) -> Result<()> {
    let output = run_replay(dir)?;
    let stored_path = dir.join(REPORT_KV_FILE);
    let stored = std::fs::read_to_string(&stored_path)
        .with_context(|| format!("reading {}", stored_path.display()))?;
    let hash = output.report.hash();
    if kv {
        print!("{}", output.report.to_kv());
    } else {
        print!("{}", output.report.to_text());
        println!("report hash {hash}");
    }
    if kv_hash(&stored) != hash {
        bail!("replayed report differs from {}", stored_path.display());
    }
    Ok(())
}

async fn serve(config: SessionConfig, addr: SocketAddr, out: Option<PathBuf>, tick_ms: u64) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .init();
    let mut service = ServiceConfig::new(live_config(config)?);
    service.tick = Duration::from_millis(tick_ms.max(1));
    service.runs_dir = out;
    lunabell_service::serve(service, addr).await?;
    Ok(())
}

fn budget(preset: &str, kv: bool, link: Option<ApertureLink>) -> Result<()> {
    let scenario = scenario_total(preset_arms(preset)?)?;
    if kv {
        print!("{}", scenario.render_kv());
    } else {
        print!("{}", scenario.render());
    }
    if let Some(link) = link {
        let loss = geometric_loss_db(&link)?;
        println!(
            "geometric loss {loss:.2} dB (spot {:.1} m into {} m)",
            link.spot_diameter_m(),
            link.aperture_diameter_m
        );
    }
    Ok(())
}

fn spacetime(delta_t: f64, side_km: f64, exact: bool) -> Result<()> {
    let geometry = GeometryConfig {
        side_length_km: side_km,
        use_rounded_light_time: !exact,
        ..GeometryConfig::default()
    };
    geometry.validate()?;
    let timing = TimingBudget {
        delta_t,
        ..TimingBudget::default()
    };
    timing.validate()?;
    println!("side               {side_km} km");
    println!("light time         {:.6} s (side/c)", geometry.exact_light_time());
    println!("window basis       {:.6} s", geometry.one_way_light_time());
    println!("delta_t            {delta_t} s");
    for loophole in Loophole::ALL {
        let w = admissible_window(loophole, &timing, &geometry);
        println!("{:<19}{:.6} s", loophole.name(), w.window);
    }
    Ok(())
}

fn coincide(alice: &Path, bob: &Path, window_ps: u64, out: Option<PathBuf>) -> Result<()> {
    let started = Instant::now();
    let a = TagReader::open(alice)?;
    let b = TagReader::open(bob)?;
    let mut writer = match &out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "# alice_ps alice_channel bob_ps bob_channel delta_ps")?;
            Some(w)
        }
        None => None,
    };
    let mut io_error = None;
    let stats = match_streams::<_, _, TagFileError>(a, b, CoincidenceConfig::new(window_ps)?, |p| {
        if let Some(w) = writer.as_mut() {
            if let Err(e) = writeln!(
                w,
                "{} {} {} {} {}",
                p.alice.time, p.alice.channel, p.bob.time, p.bob.channel, p.delta_ps
            ) {
                io_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    let secs = started.elapsed().as_secs_f64();
    let tags = stats.tags[0] + stats.tags[1];
    println!("tags            {} alice, {} bob", stats.tags[0], stats.tags[1]);
    println!("pairs           {} (window ±{window_ps} ps)", stats.pairs);
    println!("throughput      {:.3e} tags/s", tags as f64 / secs.max(1e-9));
    Ok(())
}

fn analyze(dir: Option<&Path>, plan: bool, v: f64, rate: f64, loss: f64, k: f64) -> Result<()> {
    if plan {
        let p = time_to_violation(v, rate, loss, k)?;
        println!("visibility      {v}");
        println!("|E| per setting {:.4}", p.correlation);
        println!("S - 2           {:.4}", p.margin);
        println!("pairs/setting   {:.1}", p.pairs_per_setting);
        println!("pairs total     {:.1}", p.total_pairs);
        println!("coincidences    {:.4e} /s at {loss} dB", p.coincidence_rate);
        println!("time needed     {:.0} s ({:.2} h) for {k} sigma", p.seconds, p.seconds / 3600.0);
        return Ok(());
    }
    let Some(dir) = dir else {
        bail!("give a run directory or --plan");
    };
    let output = run_replay(dir)?;
    print!("{}", output.report.to_text());
    Ok(())
}

fn histogram(alice: &Path, bob: &Path, bin: u64, span: u64, matched: bool, window: u64) -> Result<()> {
    let a = read_tags(alice)?;
    let b = read_tags(bob)?;
    let h = if matched {
        let pairs = lunabell_core::tagstream::find_coincidences(&a, &b, CoincidenceConfig::new(window)?)?;
        DeltaHistogram::from_pairs(&pairs, bin, span)?
    } else {
        DeltaHistogram::from_streams(&a, &b, bin, span)?
    };
    print!("{}", h.to_csv());
    match h.fwhm_ps() {
        Ok(f) => eprintln!("FWHM {f:.2} ps over {} entries", h.total()),
        Err(e) => eprintln!("no FWHM: {e}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, out, kv } => simulate(config.load(PRESET_LAB_103DB)?, out, kv),
        Command::Replay { dir, kv } => replay(&dir, kv),
        Command::Serve {
            config,
            addr,
            out,
            tick_ms,
        } => {
            let config = config.load(lunabell_core::session::PRESET_INTERACTIVE_90DB)?;
            tokio::runtime::Runtime::new()?.block_on(serve(config, addr, out, tick_ms))
        }
        Command::Budget {
            preset,
            kv,
            divergence_rad,
            distance_m,
            aperture_m,
        } => {
            let link = divergence_rad.map(|d| ApertureLink {
                divergence_rad: d,
                distance_m: distance_m.unwrap_or_default(),
                aperture_diameter_m: aperture_m.unwrap_or_default(),
            });
            budget(&preset, kv, link)
        }
        Command::Spacetime {
            delta_t,
            side_km,
            exact,
        } => spacetime(delta_t, side_km, exact),
        Command::Coincide {
            alice,
            bob,
            window_ps,
            out,
        } => coincide(&alice, &bob, window_ps, out),
        Command::Analyze {
            dir,
            plan,
            visibility,
            pair_rate,
            loss_db,
            k,
        } => analyze(dir.as_deref(), plan, visibility, pair_rate, loss_db, k),
        Command::Histogram {
            alice,
            bob,
            bin_ps,
            span_ps,
            matched,
            window_ps,
        } => histogram(&alice, &bob, bin_ps, span_ps, matched, window_ps),
    }
}
