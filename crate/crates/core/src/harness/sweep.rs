use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cell::{generate_cell, CellData};
use super::config::{DgpKind, SweepConfig};
use super::io::{fmt_f64, load_latents_csv};
use crate::contrastive::Encoder;
use crate::dgp::GapConfig;
use crate::error::{Error, Result};
use crate::estimators::{
    fit_mu_only_linear, fit_real_only_linear, fit_sim_only_linear, fit_simponet_linear, AltMinConfig, CateModel,
    EstimatorKind,
};
use crate::metrics::{cate_error, factual_error};
use crate::nn::{fit_heads_nn, select_lambda_f, simulator_as_factual, stratified_split, train_simponet_nn, TrainConfig};
use crate::rng::{cell_seed, derive, seeded};

/// One (cell, seed, estimator) measurement. Failed fits carry a message and NaN metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResultRow {
    pub dgp_kind: String,
    pub gamma_r: f64,
    pub gamma_rs: f64,
    pub gamma_tau: f64,
    pub seed: u64,
    pub estimator: String,
    pub cate_mse: f64,
    pub cate_rmse: f64,
    pub factual_mse: f64,
    pub fit_seconds: f64,
    pub lambda_f_used: f64,
    pub lambda_tau_used: f64,
    #[serde(default)]
    pub error: String,
}

impl SweepResultRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }

    fn failed(dgp: DgpKind, gaps: &GapConfig, seed: u64, kind: EstimatorKind, err: &Error) -> Self {
        Self {
            dgp_kind: dgp.as_str().into(),
            gamma_r: gaps.gamma_r,
            gamma_rs: gaps.gamma_rs,
            gamma_tau: gaps.gamma_tau,
            seed,
            estimator: kind.as_str().into(),
            cate_mse: f64::NAN,
            cate_rmse: f64::NAN,
            factual_mse: f64::NAN,
            fit_seconds: f64::NAN,
            lambda_f_used: f64::NAN,
            lambda_tau_used: f64::NAN,
            error: err.to_string(),
        }
    }
}

pub const RESULT_COLUMNS: [&str; 13] = [
    "dgp_kind",
    "gamma_r",
    "gamma_rs",
    "gamma_tau",
    "seed",
    "estimator",
    "cate_mse",
    "cate_rmse",
    "factual_mse",
    "fit_seconds",
    "lambda_f_used",
    "lambda_tau_used",
    "error",
];

struct Fitted {
    model: CateModel,
    lambda_f: f64,
    lambda_tau: f64,
}

fn plain(model: CateModel) -> Fitted {
    Fitted {
        model,
        lambda_f: 0.0,
        lambda_tau: 0.0,
    }
}

/// Per-cell fitting state; network baselines are cached because the extractor-weight test reuses them.
struct Fitter<'a> {
    cfg: &'a SweepConfig,
    data: &'a CellData,
    nn_seed: u64,
    real_only_nn: Option<CateModel>,
    mu_only_nn: Option<CateModel>,
}

impl<'a> Fitter<'a> {
    fn heads(&mut self, kind: EstimatorKind) -> Result<CateModel> {
        let cached = match kind {
            EstimatorKind::RealOnly => &self.real_only_nn,
            _ => &self.mu_only_nn,
        };
        if let Some(m) = cached {
            return Ok(m.clone());
        }
        let d = &self.data.d_trn;
        let identity = Encoder::identity(d.n_x());
        let extractor = if kind == EstimatorKind::RealOnly { &identity } else { &self.data.extractor };
        let (m, _) = fit_heads_nn(d, extractor, kind, &self.cfg.train, &mut seeded(self.nn_seed))?;
        match kind {
            EstimatorKind::RealOnly => self.real_only_nn = Some(m.clone()),
            _ => self.mu_only_nn = Some(m.clone()),
        }
        Ok(m)
    }

    fn choose_lambda_f(&mut self) -> Result<f64> {
        if let Some(v) = self.cfg.lambda_f {
            return Ok(v);
        }
        let real = self.heads(EstimatorKind::RealOnly)?;
        let mu = self.heads(EstimatorKind::MuOnly)?;
        let d = &self.data.d_trn;
        let (_, va) = stratified_split(&d.t, self.cfg.train.val_fraction, &mut seeded(self.nn_seed))?;
        let d_va = d.subset(&va);
        let (_, e_real) = factual_error(&real, &d_va)?;
        let (_, e_mu) = factual_error(&mu, &d_va)?;
        select_lambda_f(&e_real, &e_mu, self.cfg.lambda_f_alpha)
    }

    fn fit(&mut self, kind: EstimatorKind) -> Result<Fitted> {
        let CellData { d_trn, d_syn, extractor, .. } = self.data;
        if self.cfg.dgp_kind == DgpKind::Linear {
            return Ok(match kind {
                EstimatorKind::SimOnly => plain(fit_sim_only_linear(d_syn, extractor)?),
                EstimatorKind::RealOnly => plain(fit_real_only_linear(d_trn)?),
                EstimatorKind::MuOnly => plain(fit_mu_only_linear(d_trn, extractor)?),
                EstimatorKind::SimPONet => {
                    let am = AltMinConfig {
                        lambda_f: self.cfg.lambda_f.unwrap_or(1.0),
                        lambda_tau: self.cfg.lambda_tau,
                        ..self.cfg.altmin.clone()
                    };
                    let (model, _) = fit_simponet_linear(d_trn, d_syn, extractor, &am)?;
                    Fitted {
                        model,
                        lambda_f: am.lambda_f,
                        lambda_tau: am.lambda_tau,
                    }
                }
            });
        }
        Ok(match kind {
            EstimatorKind::SimOnly => {
                let stacked = simulator_as_factual(d_syn)?;
                let (m, _) = fit_heads_nn(&stacked, extractor, kind, &self.cfg.train, &mut seeded(self.nn_seed))?;
                plain(m)
            }
            EstimatorKind::RealOnly | EstimatorKind::MuOnly => plain(self.heads(kind)?),
            EstimatorKind::SimPONet => {
                let lambda_f = self.choose_lambda_f()?;
                let tc = TrainConfig {
                    lambda_f,
                    lambda_tau: self.cfg.lambda_tau,
                    ..self.cfg.train.clone()
                };
                let (model, _) = train_simponet_nn(d_trn, d_syn, extractor, &tc, &mut seeded(self.nn_seed))?;
                Fitted {
                    model,
                    lambda_f,
                    lambda_tau: tc.lambda_tau,
                }
            }
        })
    }
}

fn measure(fitted: &Fitted, data: &CellData) -> Result<(f64, f64, f64)> {
    let d = &data.d_tst;
    let pred = fitted.model.predict_cate(&d.x, &d.t)?;
    let (mse, rmse) = cate_error(&pred, &d.tau)?;
    let (fmse, _) = factual_error(&fitted.model, &d.observed())?;
    if !(mse.is_finite() && fmse.is_finite()) {
        return Err(Error::Numerical("non-finite test error".into()));
    }
    Ok((mse, rmse, fmse))
}

/// All rows for one (cell, seed), in the configured estimator order.
pub fn run_cell(cfg: &SweepConfig, gaps: &GapConfig, seed: u64, latent_pool: Option<&DMatrix<f64>>) -> Vec<SweepResultRow> {
    let cs = cell_seed(seed, gaps.gamma_r, gaps.gamma_rs, gaps.gamma_tau);
    let data = match generate_cell(cfg, gaps, cs, latent_pool) {
        Ok(d) => d,
        Err(e) => {
            return cfg
                .estimators
                .iter()
                .map(|&k| SweepResultRow::failed(cfg.dgp_kind, gaps, seed, k, &e))
                .collect()
        }
    };
    let mut fitter = Fitter {
        cfg,
        data: &data,
        nn_seed: derive(cs, "nn"),
        real_only_nn: None,
        mu_only_nn: None,
    };
    cfg.estimators
        .iter()
        .map(|&kind| {
            let start = Instant::now();
            let outcome = fitter.fit(kind).and_then(|f| {
                let elapsed = start.elapsed().as_secs_f64();
                measure(&f, &data).map(|m| (f, m, elapsed))
            });
            match outcome {
                Ok((f, (mse, rmse, fmse), elapsed)) => SweepResultRow {
                    dgp_kind: cfg.dgp_kind.as_str().into(),
                    gamma_r: gaps.gamma_r,
                    gamma_rs: gaps.gamma_rs,
                    gamma_tau: gaps.gamma_tau,
                    seed,
                    estimator: kind.as_str().into(),
                    cate_mse: mse,
                    cate_rmse: rmse,
                    factual_mse: fmse,
                    fit_seconds: if cfg.record_timing { elapsed } else { 0.0 },
                    lambda_f_used: f.lambda_f,
                    lambda_tau_used: f.lambda_tau,
                    error: String::new(),
                },
                Err(e) => SweepResultRow::failed(cfg.dgp_kind, gaps, seed, kind, &e),
            }
        })
        .collect()
}

/// Runs every (cell, seed) task on a pool of `cfg.threads` workers; rows come back grid-major, then seed, then estimator.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepResultRow>> {
    use rayon::prelude::*;

    cfg.validate()?;
    let grid = cfg.grid()?;
    let pool = cfg.latents_csv.as_deref().map(load_latents_csv).transpose()?;
    let tasks: Vec<(GapConfig, u64)> = grid
        .iter()
        .flat_map(|g| cfg.seeds.iter().map(move |&s| (*g, s)))
        .collect();
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_task: Vec<Vec<SweepResultRow>> =
        workers.install(|| tasks.par_iter().map(|(g, s)| run_cell(cfg, g, *s, pool.as_ref())).collect());
    Ok(per_task.into_iter().flatten().collect())
}

fn row_record(r: &SweepResultRow) -> Vec<String> {
    vec![
        r.dgp_kind.clone(),
        r.gamma_r.to_string(),
        r.gamma_rs.to_string(),
        r.gamma_tau.to_string(),
        r.seed.to_string(),
        r.estimator.clone(),
        fmt_f64(r.cate_mse),
        fmt_f64(r.cate_rmse),
        fmt_f64(r.factual_mse),
        fmt_f64(r.fit_seconds),
        fmt_f64(r.lambda_f_used),
        fmt_f64(r.lambda_tau_used),
        r.error.clone(),
    ]
}

pub fn write_results_csv(rows: &[SweepResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record(row_record(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<SweepResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e| Error::Parse(format!("{}: row {}: {e}", path.display(), i + 1)))?);
    }
    Ok(rows)
}
