//! `cplab`: conformal prediction experiments from a JSON run config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cplab_core::config::{DataSource, RunConfig};
use cplab_core::data::{generate_synthetic, save_dataset, write_atomic, DataFormat, DomainTag};
use cplab_core::evaluation::{self, coverage_study, write_curve_csv, CoverageStudy};
use cplab_core::prediction::{predict_batch, write_predictions_csv};
use cplab_core::{calibrate, CalibratedPredictor, CpError};
use log::info;

#[derive(Parser)]
#[command(name = "cplab", version, about = "Conformal prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic logits, probabilities and features.
    Generate(Args),
    /// Score the calibration part and store the predictor.
    Calibrate(Args),
    /// Write prediction sets for the test part.
    Predict(Args),
    /// Coverage, set size and the set-size integral on one split.
    Evaluate(Args),
    /// `evaluate` over repeated splits with medians.
    Sweep(Args),
    /// Compare coverage over repeated splits with its beta law.
    VerifyCoverage(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Args {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::from_path(&self.config)
            .with_context(|| format!("reading config {}", self.config.display()))?;
        if let Some(alpha) = self.alpha {
            config.alpha = alpha;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        config.validate()?;
        std::fs::create_dir_all(&config.out)
            .with_context(|| format!("creating output directory {}", config.out.display()))?;
        Ok(config)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn extension(format: DataFormat) -> &'static str {
    match format {
        DataFormat::Csv => "csv",
        DataFormat::Binary => "cpmx",
    }
}

fn generate(config: &RunConfig) -> Result<()> {
    let DataSource::Synthetic(spec) = &config.data else {
        bail!(CpError::Invalid(
            "generate needs a synthetic data source".into()
        ));
    };
    let synth = generate_synthetic(spec)?;
    let ext = extension(config.format);
    save_dataset(
        &synth.logits,
        &config.out.join(format!("logits.{ext}")),
        config.format,
    )?;
    let probs = synth.view(DomainTag::Probability)?;
    save_dataset(
        &probs,
        &config.out.join(format!("probabilities.{ext}")),
        config.format,
    )?;
    if let Some(features) = &synth.features {
        save_dataset(
            features,
            &config.out.join(format!("features.{ext}")),
            config.format,
        )?;
    }
    if let Some(tail) = &synth.tail {
        tail.save(&config.out.join("tail.json"))?;
    }
    info!("generated {} rows into {}", spec.n, config.out.display());
    Ok(())
}

fn fit(config: &RunConfig) -> Result<CalibratedPredictor> {
    let data = config.load_data()?;
    let (calib, _) = data.split(config.calib_fraction, config.seed)?;
    Ok(calibrate(
        &calib,
        &config.score,
        data.tail(),
        config.mode,
        config.alpha,
    )?)
}

fn run(command: &Command) -> Result<()> {
    match command {
        Command::Generate(args) => generate(&args.load()?),
        Command::Calibrate(args) => {
            let config = args.load()?;
            let predictor = fit(&config)?;
            let path = config.out.join("predictor.json");
            predictor.save(&path)?;
            info!("wrote {}", path.display());
            Ok(())
        }
        Command::Predict(args) => {
            let config = args.load()?;
            let predictor = match &config.predictor {
                Some(path) => CalibratedPredictor::load(path)?,
                None => fit(&config)?,
            };
            let data = config.load_data()?;
            let (_, test) = data.split(config.calib_fraction, config.seed)?;
            let sets = predict_batch(&test, &predictor)?;
            let path = config.out.join("predictions.csv");
            write_predictions_csv(&path, &sets)?;
            info!("wrote {} prediction sets to {}", sets.len(), path.display());
            Ok(())
        }
        Command::Evaluate(args) => {
            let config = args.load()?;
            let report = evaluation::evaluate(&config)?;
            write_json(&config.out.join("report.json"), &report)?;
            write_curve_csv(
                &config.out.join("curve.csv"),
                &report.alpha_grid,
                &report.curve,
            )?;
            println!(
                "coverage {:.4}  mean set size {:.4}  i_{} {:.4}",
                report.coverage, report.mean_set_size, report.k, report.i_k
            );
            Ok(())
        }
        Command::Sweep(args) => {
            let config = args.load()?;
            let report = evaluation::sweep(&config)?;
            write_json(&config.out.join("sweep.json"), &report)?;
            let curves = config.out.join("curves");
            std::fs::create_dir_all(&curves)?;
            for (r, rep) in report.repetitions.iter().enumerate() {
                write_curve_csv(
                    &curves.join(format!("rep_{r:03}.csv")),
                    &rep.alpha_grid,
                    &rep.curve,
                )?;
            }
            let m = &report.median;
            println!(
                "median over {} repetitions: coverage {:.4}  mean set size {:.4}  i_{} {:.4}",
                report.repetitions.len(),
                m.coverage,
                m.mean_set_size,
                m.k,
                m.i_k
            );
            Ok(())
        }
        Command::VerifyCoverage(args) => {
            let config = args.load()?;
            let settings = config.coverage.clone().ok_or_else(|| {
                CpError::Invalid("verify-coverage needs a coverage section".into())
            })?;
            let data = config.load_data()?;
            let pool = data.pool().ok_or_else(|| {
                CpError::Invalid("verify-coverage needs an unsplit data source".into())
            })?;
            let alphas = if settings.alphas.is_empty() {
                vec![config.alpha]
            } else {
                settings.alphas.clone()
            };
            let checks = coverage_study(&CoverageStudy {
                pool,
                tail: data.tail(),
                score: &config.score,
                mode: config.mode,
                n_calib: settings.n_calib,
                test_size: settings.test_size,
                trials: settings.trials,
                alphas: &alphas,
                seed: config.seed,
            })?;
            write_json(&config.out.join("coverage.json"), &checks)?;
            for c in &checks {
                println!(
                    "alpha {} a {} b {}: beta mean {:.6} var {:.3e}, empirical mean {:.6} var {:.3e} over {} trials",
                    c.alpha, c.a, c.b, c.beta_mean, c.beta_variance, c.empirical_mean, c.empirical_variance, c.trials
                );
            }
            Ok(())
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("CPLAB_THREADS") {
        let n: usize = value.parse().map_err(|_| {
            CpError::Invalid(format!(
                "CPLAB_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
        if n == 0 {
            bail!(CpError::Invalid("CPLAB_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CpError>() {
        Some(e) if !e.is_validation() => 2,
        Some(_) => 1,
        None if err.downcast_ref::<serde_json::Error>().is_some() => 1,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
