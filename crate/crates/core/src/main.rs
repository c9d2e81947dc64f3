use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use simcate::contrastive::{pairwise_linear_map, train_contrastive, ContrastiveConfig, Encoder};
use simcate::error::{Error, Result};
use simcate::estimators::{
    fit_mu_only_linear, fit_real_only_linear, fit_sim_only_linear, fit_simponet_linear, AltMinConfig, CateModel,
    EstimatorKind,
};
use simcate::harness::{
    format_report_table, generate_cell, generate_report, load_config, read_eval_csv, read_observational_csv,
    read_results_csv, read_simulator_csv, run_sweep, run_verification, write_eval_csv, write_json,
    write_observational_csv, write_report_csv, write_results_csv, write_simulator_csv, SweepConfig, VerifyConfig,
};
use simcate::metrics::{cate_error, factual_error};
use simcate::nn::{fit_heads_nn, simulator_as_factual, train_simponet_nn, TrainConfig};
use simcate::rng::{cell_seed, seeded};

#[derive(Parser)]
#[command(name = "simcate", about = "CATE estimation from post-treatment covariates with simulator data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train, simulator and test datasets for the first grid cell of a config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit one estimator from dataset files and write the model and its metrics.
    Fit {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        /// Optional test file with true effects.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        estimator: EstimatorKind,
        #[arg(long, value_enum, default_value_t = Heads::Linear)]
        heads: Heads,
        /// JSON with optional `train`, `altmin` and `contrastive` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full grid and write results.csv and report.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Replace the configured seeds with this one.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate a results file into per-cell means, p-values and ranks.
    Report {
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "simponet")]
        baseline: String,
    },
    /// Run the bound and analytic-error property suites; exits nonzero on any violation.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Heads {
    /// Closed-form linear heads over a cross-map extractor.
    Linear,
    /// Network heads; the extractor is learned contrastively.
    Mlp,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitFileConfig {
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    altmin: AltMinConfig,
    #[serde(default)]
    contrastive: ContrastiveConfig,
}

#[derive(Serialize)]
struct FitMetrics {
    estimator: String,
    train_factual_mse: f64,
    test_cate_mse: Option<f64>,
    test_cate_rmse: Option<f64>,
    test_factual_mse: Option<f64>,
}

fn gen(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config)?;
    let gaps = cfg.grid()?[0];
    let base = seed.unwrap_or(cfg.seeds[0]);
    let pool = cfg.latents_csv.as_deref().map(simcate::harness::load_latents_csv).transpose()?;
    let data = generate_cell(&cfg, &gaps, cell_seed(base, gaps.gamma_r, gaps.gamma_rs, gaps.gamma_tau), pool.as_ref())?;
    std::fs::create_dir_all(out)?;
    write_observational_csv(&out.join("train.csv"), &data.d_trn)?;
    write_simulator_csv(&out.join("sim.csv"), &data.d_syn)?;
    write_eval_csv(&out.join("test.csv"), &data.d_tst)?;
    if let Some(spec) = &data.linear_spec {
        write_json(&out.join("spec.json"), spec)?;
    }
    println!("wrote datasets for cell {gaps:?} to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit(
    train: &Path,
    sim: &Path,
    test: Option<&Path>,
    kind: EstimatorKind,
    heads: Heads,
    config: Option<&Path>,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let fc: FitFileConfig = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| Error::Config(format!("at `{}`: {}", e.path(), e.inner())))?
        }
        None => FitFileConfig::default(),
    };
    let d_trn = read_observational_csv(train)?;
    let d_syn = read_simulator_csv(sim)?;
    let rng = &mut seeded(seed);
    let model: CateModel = match heads {
        Heads::Linear => {
            let f = pairwise_linear_map(&d_syn)?;
            match kind {
                EstimatorKind::SimOnly => fit_sim_only_linear(&d_syn, &f)?,
                EstimatorKind::RealOnly => fit_real_only_linear(&d_trn)?,
                EstimatorKind::MuOnly => fit_mu_only_linear(&d_trn, &f)?,
                EstimatorKind::SimPONet => fit_simponet_linear(&d_trn, &d_syn, &f, &fc.altmin)?.0,
            }
        }
        Heads::Mlp => {
            let f = train_contrastive(&d_syn, &fc.contrastive, rng)?.encoder;
            match kind {
                EstimatorKind::SimOnly => fit_heads_nn(&simulator_as_factual(&d_syn)?, &f, kind, &fc.train, rng)?.0,
                EstimatorKind::RealOnly => fit_heads_nn(&d_trn, &Encoder::identity(d_trn.n_x()), kind, &fc.train, rng)?.0,
                EstimatorKind::MuOnly => fit_heads_nn(&d_trn, &f, kind, &fc.train, rng)?.0,
                EstimatorKind::SimPONet => train_simponet_nn(&d_trn, &d_syn, &f, &fc.train, rng)?.0,
            }
        }
    };
    let mut metrics = FitMetrics {
        estimator: kind.to_string(),
        train_factual_mse: factual_error(&model, &d_trn)?.0,
        test_cate_mse: None,
        test_cate_rmse: None,
        test_factual_mse: None,
    };
    if let Some(p) = test {
        let d = read_eval_csv(p)?;
        let (mse, rmse) = cate_error(&model.predict_cate(&d.x, &d.t)?, &d.tau)?;
        metrics.test_cate_mse = Some(mse);
        metrics.test_cate_rmse = Some(rmse);
        metrics.test_factual_mse = Some(factual_error(&model, &d.observed())?.0);
    }
    std::fs::create_dir_all(out)?;
    write_json(&out.join("model.json"), &model)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn sweep(config: &Path, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut cfg: SweepConfig = load_config(config)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let rows = run_sweep(&cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_results_csv(&rows, &cfg.output_dir.join("results.csv"))?;
    let report = generate_report(&rows, EstimatorKind::SimPONet.as_str())?;
    write_report_csv(&report, &cfg.output_dir.join("report.csv"))?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    print!("{}", format_report_table(&report));
    println!("{} rows ({failed} failed) written to {}", rows.len(), cfg.output_dir.display());
    Ok(())
}

fn report(results: &Path, out: &Path, baseline: &str) -> Result<()> {
    let rows = read_results_csv(results)?;
    let report = generate_report(&rows, baseline)?;
    std::fs::create_dir_all(out)?;
    write_report_csv(&report, &out.join("report.csv"))?;
    print!("{}", format_report_table(&report));
    Ok(())
}

fn verify(seed: u64, out: Option<&Path>) -> Result<bool> {
    let checks = run_verification(&VerifyConfig {
        seed,
        ..VerifyConfig::default()
    })?;
    for c in &checks {
        println!(
            "{} {:<22} instances={:<4} failures={:<3} worst={:e}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.instances,
            c.failures,
            c.worst
        );
    }
    if let Some(o) = out {
        std::fs::create_dir_all(o)?;
        write_json(&o.join("verify.json"), &checks)?;
    }
    Ok(checks.iter().all(|c| c.passed()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out, seed } => gen(&config, &out, seed).map(|_| true),
        Command::Fit {
            train,
            sim,
            test,
            estimator,
            heads,
            config,
            out,
            seed,
        } => fit(&train, &sim, test.as_deref(), estimator, heads, config.as_deref(), &out, seed).map(|_| true),
        Command::Sweep {
            config,
            out,
            threads,
            seed,
        } => sweep(&config, out, threads, seed).map(|_| true),
        Command::Report { results, out, baseline } => report(&results, &out, &baseline).map(|_| true),
        Command::Verify { seed, out } => verify(seed, out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
