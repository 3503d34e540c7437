//! Command-line front end: simulation studies, single fits, the rolling
//! forecast evaluation, and store summarization. All heavy lifting lives in
//! the library; outputs are CSV/JSON files under `--out`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use bvar::data::{build_panel, PipelineConfig};
use bvar::engine::{self, SamplerConfig, Scheme};
use bvar::error::Result;
use bvar::experiments::{
    self, emit_forecast_reports, run_forecast_study, run_simulation_study, ForecastConfig,
    RunManifest, SimDesign,
};
use bvar::model::VarShape;
use bvar::store::ChainStore;

#[derive(Parser)]
#[command(
    name = "bvar",
    version,
    about = "Bayesian VAR with shrinkage/sparsity priors and stochastic volatility"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SamplerOverrides {
    /// Total MCMC iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Burn-in iterations (adaptation happens here).
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep every thin-th post-burn-in draw.
    #[arg(long)]
    thin: Option<usize>,
    /// Particle count for the volatility update.
    #[arg(long)]
    particles: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic system and fit it, reporting shrinkage behavior.
    Simulate {
        /// Coefficient design: 1 (sparse), 2 (dense), 3 (clustered).
        #[arg(long)]
        design: String,
        /// Prior scheme: hs or dm.
        #[arg(long)]
        scheme: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sampler: SamplerOverrides,
    },
    /// Fit one chain on a panel assembled from a pipeline config.
    Fit {
        /// Prior scheme: hs, dm, t, lap, or ridge.
        #[arg(long)]
        scheme: String,
        /// Pipeline config (key=value; see README).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        sampler: SamplerOverrides,
    },
    /// Rolling one-step-ahead forecast study against the OLS baseline.
    Forecast {
        /// Comma-separated scheme list, e.g. hs,dm,ridge.
        #[arg(long)]
        schemes: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of rolling origins (default 50 or config value).
        #[arg(long)]
        origins: Option<usize>,
        #[command(flatten)]
        sampler: SamplerOverrides,
    },
    /// Summarize a stored chain into CSV/JSON reports.
    Summarize {
        /// Chain-store directory (frames.bin + manifest.json).
        #[arg(long)]
        store: PathBuf,
        /// Output directory (defaults to <store>/summary).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply_overrides(config: &mut SamplerConfig, pipeline: Option<&PipelineConfig>, cli: &SamplerOverrides) {
    if let Some(p) = pipeline {
        if let Some(v) = p.iterations {
            config.iterations = v;
        }
        if let Some(v) = p.burn_in {
            config.burn_in = v;
        }
        if let Some(v) = p.thin {
            config.thin = v;
        }
        if let Some(v) = p.particles {
            config.particles = v;
        }
        if let Some(v) = p.seed {
            config.seed = v;
        }
    }
    if let Some(v) = cli.iterations {
        config.iterations = v;
    }
    if let Some(v) = cli.burn_in {
        config.burn_in = v;
    }
    if let Some(v) = cli.thin {
        config.thin = v;
    }
    if let Some(v) = cli.particles {
        config.particles = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            design,
            scheme,
            seed,
            out,
            sampler,
        } => {
            let design = SimDesign::from_str(&design)?;
            let scheme = Scheme::from_str(&scheme)?;
            let mut config = SamplerConfig::simulation(scheme);
            config.seed = seed;
            apply_overrides(&mut config, None, &sampler);
            let report = run_simulation_study(design, scheme, &config, &out)?;
            experiments::write_run_manifest(
                &out,
                &RunManifest {
                    tool: "bvar",
                    version: env!("CARGO_PKG_VERSION"),
                    command: format!("simulate --design {design} --scheme {scheme}"),
                    seed,
                    config: serde_json::json!({
                        "iterations": config.iterations,
                        "burn_in": config.burn_in,
                        "thin": config.thin,
                        "particles": config.particles,
                        "design": design.index(),
                        "scheme": scheme.as_str(),
                        "redraws": report.redraws,
                        "stabilized": report.stabilized,
                    }),
                },
            )?;
            eprintln!(
                "design {design} / {scheme}: {} redraws{}; zero coverage (score > 0.9): {:.3}; \
                 large-signal release (|theta| > 0.3, score < 0.5): {:.3}",
                report.redraws,
                if report.stabilized { " (stabilized)" } else { "" },
                report.zero_coverage(0.9),
                report.large_signal_release(0.3, 0.5),
            );
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Fit {
            scheme,
            config,
            out,
            seed,
            sampler,
        } => {
            let scheme = Scheme::from_str(&scheme)?;
            let pipeline = PipelineConfig::from_file(&config)?;
            let panel = build_panel(&pipeline)?;
            let standardized = panel.standardize()?;
            let lags = pipeline.lags.unwrap_or(4);
            let shape = VarShape::new(standardized.n_series(), lags, standardized.len() - lags)?;
            let mut sampler_config = SamplerConfig::new(scheme);
            apply_overrides(&mut sampler_config, Some(&pipeline), &sampler);
            if let Some(s) = seed {
                sampler_config.seed = s;
            }
            std::fs::create_dir_all(&out)?;
            standardized.write_csv(&out.join("panel.csv"))?;
            let store = engine::run_chain(&standardized, &shape, &sampler_config, &out.join("chain"))?;
            let summary = engine::summarize(&store)?;
            engine::write_summary(&summary, Some(standardized.series_ids()), &out.join("summary"))?;
            experiments::write_run_manifest(
                &out,
                &RunManifest {
                    tool: "bvar",
                    version: env!("CARGO_PKG_VERSION"),
                    command: format!("fit --scheme {scheme}"),
                    seed: sampler_config.seed,
                    config: serde_json::json!({
                        "iterations": sampler_config.iterations,
                        "burn_in": sampler_config.burn_in,
                        "thin": sampler_config.thin,
                        "particles": sampler_config.particles,
                        "lags": lags,
                        "series": standardized.series_ids(),
                        "rows": standardized.len(),
                    }),
                },
            )?;
            eprintln!(
                "fit {scheme}: {} retained frames under {}",
                store.manifest.frames,
                out.display()
            );
            Ok(())
        }
        Command::Forecast {
            schemes,
            config,
            out,
            seed,
            origins,
            sampler,
        } => {
            let scheme_list: Vec<Scheme> = schemes
                .split(',')
                .map(|s| Scheme::from_str(s.trim()))
                .collect::<Result<_>>()?;
            let pipeline = PipelineConfig::from_file(&config)?;
            let panel = build_panel(&pipeline)?;
            let mut fc = ForecastConfig {
                schemes: scheme_list,
                lags: pipeline.lags.unwrap_or(4),
                ..ForecastConfig::default()
            };
            if let Some(v) = pipeline.origins {
                fc.origins = v;
            }
            if let Some(v) = pipeline.origin_iterations {
                fc.iterations = v;
            }
            if let Some(v) = pipeline.origin_burn_in {
                fc.burn_in = v;
            }
            if let Some(v) = pipeline.forecast_draws {
                fc.draws = v;
            }
            if let Some(v) = pipeline.particles {
                fc.particles = v;
            }
            if let Some(v) = pipeline.seed {
                fc.seed = v;
            }
            if let Some(v) = seed {
                fc.seed = v;
            }
            if let Some(v) = origins {
                fc.origins = v;
            }
            if let Some(v) = sampler.iterations {
                fc.iterations = v;
            }
            if let Some(v) = sampler.burn_in {
                fc.burn_in = v;
            }
            if let Some(v) = sampler.particles {
                fc.particles = v;
            }
            let report = run_forecast_study(&panel, &fc)?;
            emit_forecast_reports(&report, &out)?;
            experiments::write_run_manifest(
                &out,
                &RunManifest {
                    tool: "bvar",
                    version: env!("CARGO_PKG_VERSION"),
                    command: format!("forecast --schemes {schemes}"),
                    seed: fc.seed,
                    config: serde_json::json!({
                        "origins": fc.origins,
                        "lags": fc.lags,
                        "iterations": fc.iterations,
                        "burn_in": fc.burn_in,
                        "draws": fc.draws,
                        "particles": fc.particles,
                    }),
                },
            )?;
            for (mi, name) in report.methods.iter().enumerate() {
                eprintln!("{name}: average relative RMSFE {:.4}", report.average_ratio[mi]);
            }
            let flags = std::fs::read_to_string(out.join("rmsfe_flags.txt"))?;
            if !flags.is_empty() {
                eprint!("{flags}");
            }
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Summarize { store, out } => {
            let store_dir = store;
            let chain = ChainStore::open(&store_dir)?;
            chain.verify_checksum()?;
            let summary = engine::summarize(&chain)?;
            let out = out.unwrap_or_else(|| store_dir.join("summary"));
            engine::write_summary(&summary, None, &out)?;
            eprintln!(
                "summarized {} frames ({}) into {}",
                summary.frames, summary.scheme, out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
