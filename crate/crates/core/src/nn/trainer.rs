use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, DEFAULT_HIDDEN};
use crate::contrastive::Encoder;
use crate::dgp::{arm_indices, ObservationalDataset, SimulatorDataset};
use crate::error::{invalid, Error, Result};
use crate::estimators::{CateModel, EstimatorKind, Head};
use crate::linalg::lstsq;
use crate::metrics::paired_t_test_one_sided;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Gd,
    Adam,
}

fn default_one() -> f64 {
    1.0
}
fn default_steps() -> usize {
    5000
}
fn default_step_size() -> f64 {
    1e-3
}
fn default_eval_every() -> usize {
    50
}
fn default_patience() -> usize {
    10
}
fn default_val_fraction() -> f64 {
    0.3
}
fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_one")]
    pub lambda_f: f64,
    #[serde(default = "default_one")]
    pub lambda_tau: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_f: 1.0,
            lambda_tau: 1.0,
            steps: default_steps(),
            step_size: default_step_size(),
            eval_every: default_eval_every(),
            patience: default_patience(),
            val_fraction: default_val_fraction(),
            optimizer: Optimizer::Gd,
            hidden: default_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return invalid("val_fraction must lie in (0, 1)");
        }
        if self.steps == 0 || self.eval_every == 0 || self.patience == 0 || self.hidden == 0 {
            return invalid("steps, eval_every, patience and hidden must be positive");
        }
        if !(self.step_size > 0.0) || !(self.lambda_f >= 0.0) || !(self.lambda_tau >= 0.0) {
            return invalid("step_size must be positive and the loss weights nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnFitReport {
    /// Validation factual MSE at each evaluation.
    pub val_trace: Vec<f64>,
    /// Step index of each evaluation.
    pub eval_steps: Vec<usize>,
    pub best_step: usize,
    pub best_val_mse: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
}

/// Stratified split on treatment: returns (train, validation) row indices.
pub fn stratified_split<R: Rng + ?Sized>(t: &[u8], val_fraction: f64, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for arm in 0..2u8 {
        let mut idx = arm_indices(t, arm);
        if idx.len() < 2 {
            return invalid(format!("arm {arm} needs at least two rows to split"));
        }
        idx.shuffle(rng);
        let n_val = ((idx.len() as f64 * val_fraction).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

enum Extractor {
    /// Per-arm linear maps trained jointly with the heads.
    Trainable { x: [DMatrix<f64>; 2], f_tilde_x: [DMatrix<f64>; 2] },
    /// Precomputed representations of the training rows.
    Fixed { z: [DMatrix<f64>; 2] },
}

/// Loss of the gradient-trained estimators on one training split.
///
/// `L = mean_i (μ̂_{t_i}(f̂_{t_i}(x_i)) − y_i)² + λ_f · mean_i ‖f̂_{t_i}(x_i) − f̃_{t_i}(x_i)‖²
///      + λ_τ · mean_{i,t} (τ^S_i − (μ̂_1 − μ̂_0)(f̃_t(x_i^S(t))))²`
///
/// Parameters pack as `[F̂_0, F̂_1, μ̂_0, μ̂_1]` for a trainable extractor and `[μ̂_0, μ̂_1]` otherwise.
pub struct NnObjective {
    extractor: Extractor,
    y: [DVector<f64>; 2],
    n_rows: f64,
    sim_z: Option<[DMatrix<f64>; 2]>,
    sim_tau: DVector<f64>,
    lambda_f: f64,
    lambda_tau: f64,
    n_x: usize,
    n_z: usize,
    template: [Mlp; 2],
}

impl NnObjective {
    /// SimPONet objective with trainable linear extractors.
    pub fn simponet(
        d: &ObservationalDataset,
        d_syn: &SimulatorDataset,
        f_tilde: &Encoder,
        lambda_f: f64,
        lambda_tau: f64,
        heads: [Mlp; 2],
    ) -> Result<Self> {
        d.validate()?;
        let arms = [d.arm(0), d.arm(1)];
        let f_tilde_x = [f_tilde.transform(0, &arms[0].0)?, f_tilde.transform(1, &arms[1].0)?];
        let sim_z = [f_tilde.transform(0, &d_syn.x0)?, f_tilde.transform(1, &d_syn.x1)?];
        let [(x0, y0), (x1, y1)] = arms;
        Ok(Self {
            extractor: Extractor::Trainable {
                x: [x0, x1],
                f_tilde_x,
            },
            y: [y0, y1],
            n_rows: d.len() as f64,
            sim_z: Some(sim_z),
            sim_tau: d_syn.tau(),
            lambda_f,
            lambda_tau,
            n_x: d.n_x(),
            n_z: f_tilde.n_z,
            template: heads,
        })
    }

    /// Factual fit of heads over a fixed extractor.
    pub fn heads_only(d: &ObservationalDataset, extractor: &Encoder, heads: [Mlp; 2]) -> Result<Self> {
        d.validate()?;
        let arms = [d.arm(0), d.arm(1)];
        let z = [extractor.transform(0, &arms[0].0)?, extractor.transform(1, &arms[1].0)?];
        let [(_, y0), (_, y1)] = arms;
        Ok(Self {
            extractor: Extractor::Fixed { z },
            y: [y0, y1],
            n_rows: d.len() as f64,
            sim_z: None,
            sim_tau: DVector::zeros(0),
            lambda_f: 0.0,
            lambda_tau: 0.0,
            n_x: d.n_x(),
            n_z: extractor.n_z,
            template: heads,
        })
    }

    fn n_extractor_params(&self) -> usize {
        match self.extractor {
            Extractor::Trainable { .. } => 2 * self.n_x * self.n_z,
            Extractor::Fixed { .. } => 0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_extractor_params() + self.template[0].n_params() + self.template[1].n_params()
    }

    /// Packs extractor maps (ignored for a fixed extractor) and heads.
    pub fn pack(&self, maps: Option<&[DMatrix<f64>; 2]>, heads: &[Mlp; 2]) -> DVector<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        if let (Extractor::Trainable { .. }, Some(m)) = (&self.extractor, maps) {
            p.extend_from_slice(m[0].as_slice());
            p.extend_from_slice(m[1].as_slice());
        }
        heads[0].params_into(&mut p);
        heads[1].params_into(&mut p);
        DVector::from_vec(p)
    }

    pub fn unpack(&self, p: &DVector<f64>) -> (Option<[DMatrix<f64>; 2]>, [Mlp; 2]) {
        let s = p.as_slice();
        let mut off = 0;
        let maps = match self.extractor {
            Extractor::Trainable { .. } => {
                let k = self.n_x * self.n_z;
                let a = DMatrix::from_column_slice(self.n_x, self.n_z, &s[0..k]);
                let b = DMatrix::from_column_slice(self.n_x, self.n_z, &s[k..2 * k]);
                off = 2 * k;
                Some([a, b])
            }
            Extractor::Fixed { .. } => None,
        };
        let mut heads = self.template.clone();
        off += heads[0].set_params(&s[off..]);
        heads[1].set_params(&s[off..]);
        (maps, heads)
    }

    fn latents(&self, maps: &Option<[DMatrix<f64>; 2]>, t: usize) -> DMatrix<f64> {
        match (&self.extractor, maps) {
            (Extractor::Trainable { x, .. }, Some(m)) => &x[t] * &m[t],
            (Extractor::Fixed { z }, _) => z[t].clone(),
            _ => unreachable!("trainable extractor without maps"),
        }
    }

    /// The factual term alone.
    pub fn factual_mse(&self, p: &DVector<f64>) -> Result<f64> {
        let (maps, heads) = self.unpack(p);
        let mut sse = 0.0;
        for t in 0..2 {
            let z = self.latents(&maps, t);
            sse += (heads[t].forward(&z)? - &self.y[t]).norm_squared();
        }
        Ok(sse / self.n_rows)
    }

    pub fn loss_and_grad(&self, p: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (maps, heads) = self.unpack(p);
        let n = self.n_rows;
        let mut loss = 0.0;
        let mut d_maps = [DMatrix::zeros(self.n_x, self.n_z), DMatrix::zeros(self.n_x, self.n_z)];
        let mut head_grads: [Vec<f64>; 2] = [
            vec![0.0; self.template[0].n_params()],
            vec![0.0; self.template[1].n_params()],
        ];
        let add = |acc: &mut Vec<f64>, g: Vec<f64>, scale: f64| {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += scale * b;
            }
        };
        for t in 0..2 {
            let z = self.latents(&maps, t);
            let resid = heads[t].forward(&z)? - &self.y[t];
            loss += resid.norm_squared() / n;
            let (g, dz) = heads[t].backward(&z, &(&resid * (2.0 / n)))?;
            add(&mut head_grads[t], g.flat(), 1.0);
            if let (Extractor::Trainable { x, f_tilde_x }, Some(_)) = (&self.extractor, &maps) {
                d_maps[t] += x[t].transpose() * dz;
                if self.lambda_f > 0.0 {
                    let diff = &z - &f_tilde_x[t];
                    loss += self.lambda_f * diff.norm_squared() / n;
                    d_maps[t] += x[t].transpose() * diff * (2.0 * self.lambda_f / n);
                }
            }
        }
        if let (Some(sim_z), true) = (&self.sim_z, self.lambda_tau > 0.0) {
            let denom = 2.0 * self.sim_tau.len() as f64;
            for zt in sim_z {
                let pred = heads[1].forward(zt)? - heads[0].forward(zt)?;
                let resid = pred - &self.sim_tau;
                loss += self.lambda_tau * resid.norm_squared() / denom;
                let r = resid * (2.0 * self.lambda_tau / denom);
                add(&mut head_grads[1], heads[1].gradients(zt, &r)?.flat(), 1.0);
                add(&mut head_grads[0], heads[0].gradients(zt, &r)?.flat(), -1.0);
            }
        }
        let mut g = Vec::with_capacity(self.n_params());
        if matches!(self.extractor, Extractor::Trainable { .. }) {
            g.extend_from_slice(d_maps[0].as_slice());
            g.extend_from_slice(d_maps[1].as_slice());
        }
        g.extend(head_grads[0].iter());
        g.extend(head_grads[1].iter());
        Ok((loss, DVector::from_vec(g)))
    }
}

struct Adam {
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, g: &DVector<f64>, lr: f64) -> DVector<f64> {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        self.m = &self.m * B1 + g * (1.0 - B1);
        self.v = &self.v * B2 + g.component_mul(g) * (1.0 - B2);
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        DVector::from_fn(g.len(), |i, _| lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8))
    }
}

/// Gradient descent with periodic validation and best-checkpoint restore.
fn optimise(
    objective: &NnObjective,
    validation: impl Fn(&DVector<f64>) -> Result<f64>,
    init: DVector<f64>,
    cfg: &TrainConfig,
) -> Result<(DVector<f64>, NnFitReport)> {
    let mut p = init;
    let mut best = p.clone();
    let mut best_val = validation(&p)?;
    let mut best_step = 0;
    let mut val_trace = vec![best_val];
    let mut eval_steps = vec![0];
    let mut bad = 0;
    let mut stopped_early = false;
    let mut adam = Adam {
        m: DVector::zeros(p.len()),
        v: DVector::zeros(p.len()),
        t: 0,
    };
    let mut steps_run = 0;
    for step in 1..=cfg.steps {
        let (loss, g) = objective.loss_and_grad(&p)?;
        if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training {
                step,
                msg: "loss or gradient is not finite".into(),
            });
        }
        match cfg.optimizer {
            Optimizer::Gd => p.axpy(-cfg.step_size, &g, 1.0),
            Optimizer::Adam => p -= adam.step(&g, cfg.step_size),
        }
        steps_run = step;
        if step % cfg.eval_every == 0 {
            let v = validation(&p)?;
            if !v.is_finite() {
                return Err(Error::Training {
                    step,
                    msg: "validation error is not finite".into(),
                });
            }
            val_trace.push(v);
            eval_steps.push(step);
            if v < best_val {
                best_val = v;
                best = p.clone();
                best_step = step;
                bad = 0;
            } else {
                bad += 1;
                if bad >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok((
        best,
        NnFitReport {
            val_trace,
            eval_steps,
            best_step,
            best_val_mse: best_val,
            steps_run,
            stopped_early,
        },
    ))
}

fn fresh_heads<R: Rng + ?Sized>(n_z: usize, hidden: usize, rng: &mut R) -> [Mlp; 2] {
    let a = Mlp::new(n_z, hidden, rng);
    let b = Mlp::new(n_z, hidden, rng);
    [a, b]
}

/// Factual MSE of `μ̂_t(x·F̂_t)` (or a fixed extractor) on validation rows.
fn validation_mse(
    d_val: &ObservationalDataset,
    maps: Option<&[DMatrix<f64>; 2]>,
    fixed: Option<&Encoder>,
    heads: &[Mlp; 2],
) -> Result<f64> {
    let mut sse = 0.0;
    for t in 0..2u8 {
        let (x, y) = d_val.arm(t);
        let z = match (maps, fixed) {
            (Some(m), _) => &x * &m[t as usize],
            (None, Some(enc)) => enc.transform(t, &x)?,
            _ => unreachable!("validation needs an extractor"),
        };
        sse += (heads[t as usize].forward(&z)? - y).norm_squared();
    }
    Ok(sse / d_val.len() as f64)
}

pub fn train_simponet_nn<R: Rng + ?Sized>(
    d_trn: &ObservationalDataset,
    d_syn: &SimulatorDataset,
    f_tilde: &Encoder,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(CateModel, NnFitReport)> {
    cfg.validate()?;
    d_trn.validate()?;
    d_syn.validate()?;
    if d_trn.n_x() != f_tilde.n_x || d_syn.x0.ncols() != f_tilde.n_x {
        return invalid("datasets and extractor disagree on covariate width");
    }
    let (tr, va) = stratified_split(&d_trn.t, cfg.val_fraction, rng)?;
    let d_tr = d_trn.subset(&tr);
    let d_va = d_trn.subset(&va);
    let mut init_maps = Vec::with_capacity(2);
    for t in 0..2u8 {
        let (x, _) = d_tr.arm(t);
        let target = f_tilde.transform(t, &x)?;
        init_maps.push(match f_tilde.linear_map(t) {
            Some(m) if !f_tilde.normalize => m.clone(),
            _ => lstsq(&x, &target, &format!("extractor init arm {t}"))?,
        });
    }
    let maps: [DMatrix<f64>; 2] = init_maps.try_into().expect("two maps");
    let heads = fresh_heads(f_tilde.n_z, cfg.hidden, rng);
    let objective = NnObjective::simponet(&d_tr, d_syn, f_tilde, cfg.lambda_f, cfg.lambda_tau, heads.clone())?;
    let init = objective.pack(Some(&maps), &heads);
    let val = |p: &DVector<f64>| {
        let (m, h) = objective.unpack(p);
        validation_mse(&d_va, m.as_ref(), None, &h)
    };
    let (best, report) = optimise(&objective, val, init, cfg)?;
    let (m, h) = objective.unpack(&best);
    let [m0, m1] = m.expect("trainable maps");
    let [h0, h1] = h;
    let model = CateModel::new(
        EstimatorKind::SimPONet,
        Encoder::linear([m0, m1], false)?,
        [Head::Mlp(h0), Head::Mlp(h1)],
    )
    .with_meta("lambda_f", cfg.lambda_f)
    .with_meta("lambda_tau", cfg.lambda_tau)
    .with_meta("best_step", report.best_step);
    Ok((model, report))
}

/// Fits network heads by factual loss over a fixed extractor, with the same split and stopping rule.
pub fn fit_heads_nn<R: Rng + ?Sized>(
    d: &ObservationalDataset,
    extractor: &Encoder,
    kind: EstimatorKind,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(CateModel, NnFitReport)> {
    cfg.validate()?;
    d.validate()?;
    let (tr, va) = stratified_split(&d.t, cfg.val_fraction, rng)?;
    let d_tr = d.subset(&tr);
    let d_va = d.subset(&va);
    let heads = fresh_heads(extractor.n_z, cfg.hidden, rng);
    let objective = NnObjective::heads_only(&d_tr, extractor, heads.clone())?;
    let init = objective.pack(None, &heads);
    let val = |p: &DVector<f64>| {
        let (_, h) = objective.unpack(p);
        validation_mse(&d_va, None, Some(extractor), &h)
    };
    let (best, report) = optimise(&objective, val, init, cfg)?;
    let (_, [h0, h1]) = objective.unpack(&best);
    let model = CateModel::new(kind, extractor.clone(), [Head::Mlp(h0), Head::Mlp(h1)]).with_meta("best_step", report.best_step);
    Ok((model, report))
}

/// Simulator rows stacked as a factual dataset: arm 0 rows from `(x_0^S, y_0^S)`, arm 1 from `(x_1^S, y_1^S)`.
pub fn simulator_as_factual(d_syn: &SimulatorDataset) -> Result<ObservationalDataset> {
    let m = d_syn.len();
    let n_x = d_syn.x0.ncols();
    let mut x = DMatrix::zeros(2 * m, n_x);
    x.rows_mut(0, m).copy_from(&d_syn.x0);
    x.rows_mut(m, m).copy_from(&d_syn.x1);
    let t = (0..2 * m).map(|i| u8::from(i >= m)).collect();
    let y = DVector::from_iterator(2 * m, d_syn.y0.iter().chain(d_syn.y1.iter()).copied());
    ObservationalDataset::new(x, t, y)
}

/// Lowers the extractor weight when MuOnly's validation error is significantly above RealOnly's.
///
/// Differences at round-off level relative to the error scale are treated as exact ties.
pub fn select_lambda_f(real_only_val_sq_errors: &DVector<f64>, mu_only_val_sq_errors: &DVector<f64>, alpha: f64) -> Result<f64> {
    if real_only_val_sq_errors.len() != mu_only_val_sq_errors.len() {
        return invalid("error vectors differ in length");
    }
    let scale = real_only_val_sq_errors
        .iter()
        .chain(mu_only_val_sq_errors.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let ties = real_only_val_sq_errors
        .iter()
        .zip(mu_only_val_sq_errors.iter())
        .all(|(a, b)| (a - b).abs() <= ROUNDOFF_TIE * scale.max(1.0));
    let p = if ties {
        0.5
    } else {
        paired_t_test_one_sided(real_only_val_sq_errors, mu_only_val_sq_errors)?
    };
    Ok(if p < alpha { 1e-4 } else { 1.0 })
}

pub const ROUNDOFF_TIE: f64 = 1e-12;
