use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use geosteer::harness::{self, ExperimentConfig, Method, Preset};
use geosteer::stratigraphy::generate_realization;

#[derive(Parser)]
#[command(name = "geosteer", version, about = "Geosteering decision experiments")]
struct Cli {
    /// TOML experiment configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scale preset applied on top of the configuration
    #[arg(long, global = true, value_parser = ["desk", "full"])]
    preset: Option<String>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write evaluation realizations and the offset log as CSV
    Generate {
        /// Number of realizations (defaults to the evaluation set size)
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a learned method on every configured seed
    Train {
        /// Method to train; every learned method when omitted and --all is set
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        all: bool,
    },
    /// Evaluate one method on the shared evaluation set
    Evaluate {
        #[arg(long)]
        method: Option<String>,
    },
    /// Particle-count and best-estimate sweeps of the boundary filter
    PfSweep,
    /// Evaluate every method and write comparison tables and charts
    Benchmark,
    /// Render charts from existing artifacts
    Report {
        /// Artifact directory (defaults to the output directory)
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print the resolved configuration
    Config,
}

fn resolve(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &cli.preset {
        cfg.apply_preset(p.parse::<Preset>()?);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn method_or(cfg: &ExperimentConfig, m: &Option<String>) -> anyhow::Result<Method> {
    Ok(match m {
        Some(s) => s.parse()?,
        None => cfg.method,
    })
}

fn generate(cfg: &ExperimentConfig, count: usize) -> anyhow::Result<()> {
    let dir = cfg.output_dir.join("realizations");
    std::fs::create_dir_all(&dir).map_err(|e| geosteer::Error::io(&dir, e))?;
    let eval_seed = cfg.eval_seed();
    for r in 0..count {
        let seeds = harness::EpisodeSeeds::evaluation(eval_seed, r);
        let real = generate_realization(&cfg.env.stratigraphy, seeds.realization)?;
        let path = dir.join(format!("eval_{r:04}.csv"));
        let file = std::fs::File::create(&path).map_err(|e| geosteer::Error::io(&path, e))?;
        real.write_csv(std::io::BufWriter::new(file))?;
    }
    let log = cfg.load_log()?;
    let path = cfg.output_dir.join("offset_log.csv");
    let mut text = String::from("rel_depth_ft,gamma\n");
    for (d, g) in log.rel_depth().iter().zip(log.gamma()) {
        text.push_str(&format!("{d},{g}\n"));
    }
    std::fs::write(&path, text).map_err(|e| geosteer::Error::io(&path, e))?;
    println!("wrote {count} realizations to {} (eval set sha256 {})", dir.display(), harness::eval_set_hash(cfg)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    if !matches!(cli.command, Command::Config | Command::Report { .. }) {
        std::fs::create_dir_all(&cfg.output_dir).map_err(|e| geosteer::Error::io(&cfg.output_dir, e))?;
    }
    match &cli.command {
        Command::Generate { count } => generate(&cfg, count.unwrap_or(cfg.eval_realizations))?,
        Command::Train { method, all } => {
            let methods: Vec<Method> = if *all {
                Method::learned().collect()
            } else {
                vec![method_or(&cfg, method)?]
            };
            for m in methods {
                for s in harness::train_all(&cfg, m)? {
                    println!("{} seed {}: last-100 mean reward {:.2} ({})", s.method, s.seed, s.final_reward, s.dir.display());
                }
            }
        }
        Command::Evaluate { method } => {
            let m = method_or(&cfg, method)?;
            let (_, s) = harness::evaluate(&cfg, m)?;
            println!("{m}: median reward {:.2}, contact {:.2}%", s.median_reward, s.contact);
        }
        Command::PfSweep => {
            let r = harness::pf_sweep(&cfg)?;
            println!("n_par,median_gamma_mae,median_boundary_mae");
            for row in &r.by_n_par {
                println!("{},{:.5},{:.3}", row.n_par, row.median_gamma_mae, row.median_boundary_mae);
            }
            println!("n_best,mean_gamma_mae,mean_boundary_mae");
            for row in &r.by_n_best {
                println!("{},{:.5},{:.3}", row.n_best, row.mean_gamma_mae, row.mean_boundary_mae);
            }
        }
        Command::Benchmark => {
            let r = harness::benchmark(&cfg, &Method::ALL)?;
            println!("eval set sha256 {}", r.eval_set_sha256);
            for s in &r.summaries {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
                println!(
                    "{:<17} reward {:>8.2}  contact {:>6.2}%  faults>=1 {:>6}  faults>=2 {:>6}",
                    s.method.name(),
                    s.median_reward,
                    s.contact,
                    f(s.contact_by_faults[1]),
                    f(s.contact_by_faults[2])
                );
            }
        }
        Command::Report { dir } => {
            let dir: &Path = dir.as_deref().unwrap_or(&cfg.output_dir);
            for p in harness::report(dir, cfg.env.scored_stations())? {
                println!("{}", p.display());
            }
        }
        Command::Config => print!("{}", cfg.to_toml().context("serializing configuration")?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<geosteer::Error>())
                .map_or(2, |g| g.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
