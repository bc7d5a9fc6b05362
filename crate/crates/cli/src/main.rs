//! `surfmc` — configuration-driven runner for the surface-measure
//! verification suites.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use surfmc_cli::config::{ExperimentConfig, OutputFormat};
use surfmc_cli::suites::{emit_sample, print_suite, Harness};
use surfmc_core::report::AcceptanceReport;
use surfmc_core::surface::LevelKind;

#[derive(Parser)]
#[command(
    name = "surfmc",
    version,
    about = "Monte Carlo verification of surface measures on level sets of product measures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Path to a TOML experiment configuration; defaults are used if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the batch seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format for data artifacts.
    #[arg(long, value_parser = parse_format)]
    format: Option<OutputFormat>,
    /// Worker threads for sharded estimators (0 = library default).
    /// Changes throughput, never results.
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "json" => Ok(OutputFormat::Json),
        other => Err(format!("unknown format '{other}' (expected csv or json)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every enabled suite in dependency order and write the report.
    Run(CommonArgs),
    /// Draw a sample batch from the configured law and persist it.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of rows (defaults to the configured batch count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Moment identities of the one-dimensional laws.
    Moments(CommonArgs),
    /// Whole-space integration-by-parts residuals.
    Ibp(CommonArgs),
    /// Adjoint certification of the sphere and hyperplane fields.
    Divergence(CommonArgs),
    /// Surface densities, cross-method agreement, co-area and positivity.
    Surface {
        #[command(flatten)]
        common: CommonArgs,
        /// Print the density grid against the closed form for this kind.
        #[arg(long, value_parser = parse_kind)]
        kind: Option<LevelKind>,
        /// Exponent parameter for the closed-form print.
        #[arg(long)]
        m: Option<u32>,
    },
    /// Perimeter variational identity.
    Perimeter(CommonArgs),
    /// Gradient-system dynamics: invariance, moments, comparison bound.
    Sde {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the stepping scheme (tamed_explicit | exact_ou).
        #[arg(long)]
        scheme: Option<String>,
        /// Override the exponent parameter of the configured measure.
        #[arg(long)]
        m: Option<u32>,
    },
    /// Fejér approximation suite.
    Fejer(CommonArgs),
    /// Aggregate previously written suite artifacts into a report.
    Report(CommonArgs),
}

fn parse_kind(s: &str) -> Result<LevelKind, String> {
    match s {
        "sphere" => Ok(LevelKind::Sphere),
        "hyperplane" => Ok(LevelKind::Hyperplane),
        other => Err(format!("unknown kind '{other}' (expected sphere or hyperplane)")),
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_toml(&text).map_err(|e| anyhow::anyhow!(e))?
        }
        None => {
            if let Ok(dir) = std::env::var("SURFMC_OUT_DIR") {
                let mut c = ExperimentConfig::default();
                c.output.dir = dir;
                c
            } else {
                ExperimentConfig::default()
            }
        }
    };
    if let Some(seed) = common.seed {
        cfg.batch.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Some(format) = common.format {
        cfg.output.format = format;
    }
    if let Some(workers) = common.workers {
        cfg.output.workers = workers;
    }
    if let Err(errors) = cfg.validate() {
        anyhow::bail!("invalid configuration:\n  - {}", errors.join("\n  - "));
    }
    Ok(cfg)
}

fn install_workers(cfg: &ExperimentConfig) {
    if cfg.output.workers > 0 {
        // affects throughput only; results are sharded deterministically
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.output.workers)
            .build_global();
    }
}

fn run_one_suite(common: &CommonArgs, name: &str) -> Result<bool> {
    let cfg = load_config(common)?;
    install_workers(&cfg);
    let out = PathBuf::from(&cfg.output.dir);
    let mut harness = Harness::new(cfg, &out)?;
    let suite = harness.run_suite(name)?;
    print_suite(&suite);
    Ok(suite.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = dispatch(cli);
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load_config(&common)?;
            install_workers(&cfg);
            let out = PathBuf::from(&cfg.output.dir);
            let mut harness = Harness::new(cfg, &out)?;
            let report = harness.run_all()?;
            for suite in &report.suites {
                print_suite(suite);
            }
            println!(
                "overall: {} (report at {})",
                if report.all_pass { "PASS" } else { "FAIL" },
                out.join("report.json").display()
            );
            Ok(report.all_pass)
        }
        Command::Sample { common, count } => {
            let cfg = load_config(&common)?;
            install_workers(&cfg);
            let out = PathBuf::from(&cfg.output.dir);
            let n = count.unwrap_or(cfg.batch.count);
            let path = emit_sample(&cfg, &out, n, cfg.batch.seed, cfg.output.format)?;
            println!("wrote {n} samples to {}", path.display());
            Ok(true)
        }
        Command::Moments(common) => run_one_suite(&common, "moments"),
        Command::Ibp(common) => run_one_suite(&common, "ibp"),
        Command::Divergence(common) => run_one_suite(&common, "divergence"),
        Command::Surface { common, kind, m } => {
            let cfg = load_config(&common)?;
            install_workers(&cfg);
            let out = PathBuf::from(&cfg.output.dir);
            let mut harness = Harness::new(cfg, &out)?;
            if let (Some(kind), Some(m)) = (kind, m) {
                print_closed_form_grid(&mut harness, kind, m)?;
            }
            let suite = harness.run_suite("surface")?;
            print_suite(&suite);
            Ok(suite.all_pass())
        }
        Command::Perimeter(common) => run_one_suite(&common, "perimeter"),
        Command::Sde { common, scheme, m } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = m {
                cfg.measure.m = m;
                if cfg.measure.weight_s <= m as f64 {
                    cfg.measure.weight_s = m as f64 + 1.0;
                }
            }
            if let Some(s) = scheme {
                cfg.sde.scheme = match s.as_str() {
                    "tamed_explicit" => surfmc_core::dynamics::Scheme::TamedExplicit,
                    "exact_ou" => surfmc_core::dynamics::Scheme::ExactOu,
                    other => anyhow::bail!("unknown scheme '{other}'"),
                };
            }
            if let Err(errors) = cfg.validate() {
                anyhow::bail!("invalid configuration:\n  - {}", errors.join("\n  - "));
            }
            install_workers(&cfg);
            let out = PathBuf::from(&cfg.output.dir);
            let mut harness = Harness::new(cfg, &out)?;
            let suite = harness.run_suite("sde")?;
            print_suite(&suite);
            Ok(suite.all_pass())
        }
        Command::Fejer(common) => run_one_suite(&common, "fejer"),
        Command::Report(common) => {
            let cfg = load_config(&common)?;
            let out = PathBuf::from(&cfg.output.dir);
            let mut suites = Vec::new();
            if out.is_dir() {
                let mut names: Vec<_> = std::fs::read_dir(&out)?
                    .filter_map(|e| e.ok())
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .filter(|n| n.starts_with("suite_") && n.ends_with(".json"))
                    .collect();
                names.sort();
                for name in names {
                    let text = std::fs::read_to_string(out.join(&name))?;
                    suites.push(serde_json::from_str(&text)?);
                }
            }
            if suites.is_empty() {
                println!("empty report: no suite artifacts found under {}", out.display());
                return Ok(true);
            }
            let report = AcceptanceReport::from_suites(cfg.batch.seed, suites);
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("report.json"), report.to_json())?;
            println!(
                "aggregated {} suites: {} (report at {})",
                report.suites.len(),
                if report.all_pass { "PASS" } else { "FAIL" },
                out.join("report.json").display()
            );
            Ok(report.all_pass)
        }
    }
}

/// Print the density grid against the exact closed form where one exists
/// (hyperplane with m = 1: Gaussian marginal; sphere with unit weights at
/// n = 2: chi-square).
fn print_closed_form_grid(harness: &mut Harness, kind: LevelKind, m: u32) -> Result<()> {
    use surfmc_core::calculus::CylFunction;
    use surfmc_core::special::gaussian_pdf;
    use surfmc_core::surface::{self, LevelValues};
    let (lf, batch) = harness.closed_form_setup(kind, m)?;
    let levels = LevelValues::new(&lf, &batch);
    let one = CylFunction::constant(lf.ctx().dim(), 1.0);
    println!("r,q1_estimate,q1_closed_form");
    for r in levels.quantile_grid(harness.cfg.grid.points) {
        let est = surface::q_divergence(&lf, &one, r, &batch)?;
        let exact = match (kind, m) {
            (LevelKind::Hyperplane, 1) => gaussian_pdf(r, lf.rb_norm() * lf.rb_norm()),
            (LevelKind::Sphere, 1) if lf.ctx().dim() == 2 => 0.5 * (-r / 2.0).exp(),
            _ => f64::NAN,
        };
        if exact.is_nan() {
            println!("{r},{},-", est.value);
        } else {
            println!("{r},{},{exact}", est.value);
        }
    }
    Ok(())
}
