use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use super::config::{DgpKind, ExtractorMode, SweepConfig};
use crate::contrastive::{oracle_linear_map, pairwise_linear_map, train_contrastive, Encoder};
use crate::dgp::{
    build_linear_pair, generate_eval, generate_observational, generate_simulator_cf, new_coupling_flow,
    sample_gp_outcome_functions, sample_latents, synthesize_semisynthetic_sim_outcomes, CouplingFlow, EvalDataset,
    GapConfig, LinearDgpPair, ObservationalDataset, SimulatorDataset,
};
use crate::error::{invalid, Result};
use crate::linalg::{gaussian_vector, select_rows};
use crate::rng::{derive, seeded};

/// Everything one grid cell needs before fitting.
#[derive(Clone, Debug)]
pub struct CellData {
    pub d_trn: ObservationalDataset,
    pub d_syn: SimulatorDataset,
    pub d_tst: EvalDataset,
    /// Covariate and outcome maps when the covariates are linear.
    pub linear_spec: Option<LinearDgpPair>,
    /// Simulator extractor estimate `f̃` used by SimOnly, MuOnly and SimPONet.
    pub extractor: Encoder,
}

struct Latents {
    trn: DMatrix<f64>,
    syn: DMatrix<f64>,
    tst: DMatrix<f64>,
}

impl Latents {
    fn all(&self) -> DMatrix<f64> {
        let (a, b, c) = (self.trn.nrows(), self.syn.nrows(), self.tst.nrows());
        let mut z = DMatrix::zeros(a + b + c, self.trn.ncols());
        z.rows_mut(0, a).copy_from(&self.trn);
        z.rows_mut(a, b).copy_from(&self.syn);
        z.rows_mut(a + b, c).copy_from(&self.tst);
        z
    }
}

fn draw_latents<R: Rng + ?Sized>(cfg: &SweepConfig, pool: Option<&DMatrix<f64>>, rng: &mut R) -> Result<Latents> {
    let sizes = [cfg.n_train, cfg.n_sim, cfg.n_test];
    let total: usize = sizes.iter().sum();
    let all = match pool {
        Some(p) => {
            if p.nrows() < total {
                return invalid(format!("latent file has {} rows, the sweep needs {total}", p.nrows()));
            }
            select_rows(p, &sample(rng, p.nrows(), total).into_vec())
        }
        None => sample_latents(total, cfg.n_z, rng, cfg.latent_mode)?,
    };
    Ok(Latents {
        trn: all.rows(0, sizes[0]).into_owned(),
        syn: all.rows(sizes[0], sizes[1]).into_owned(),
        tst: all.rows(sizes[0] + sizes[1], sizes[2]).into_owned(),
    })
}

fn assign_treatments<R: Rng + ?Sized>(z: &DMatrix<f64>, alpha: f64, rng: &mut R) -> Result<Vec<u8>> {
    let scale = 1.0 / (z.ncols() as f64).sqrt();
    let t: Vec<u8> = z
        .row_iter()
        .map(|row| {
            let p = 1.0 / (1.0 + (-alpha * row.sum() * scale).exp());
            u8::from(rng.random::<f64>() < p)
        })
        .collect();
    if !t.contains(&0) || !t.contains(&1) {
        return invalid("treatment assignment left an arm empty; resample with another seed");
    }
    Ok(t)
}

fn noisy(v: DVector<f64>, sd: f64, rng: &mut impl Rng) -> DVector<f64> {
    let e = gaussian_vector(rng, v.len());
    v + e * sd
}

/// Nonlinear outcomes shared by the GP and flow processes, split back into train, simulator and test rows.
struct Outcomes {
    mu: [DVector<f64>; 2],
    y_s: [DVector<f64>; 2],
}

fn gp_outcomes<R: Rng + ?Sized>(cfg: &SweepConfig, gaps: &GapConfig, z: &Latents, rng: &mut R) -> Result<[Outcomes; 3]> {
    let all = z.all();
    let gp = sample_gp_outcome_functions(&all, &cfg.gp, rng)?;
    let tau_s = synthesize_semisynthetic_sim_outcomes(&gp.tau_s, &all, gaps.gamma_tau, rng)?;
    let y1s = &gp.y0s + &tau_s;
    let (a, b, c) = (z.trn.nrows(), z.syn.nrows(), z.tst.nrows());
    let part = |start, len| Outcomes {
        mu: [gp.mu0.rows(start, len).into_owned(), gp.mu1.rows(start, len).into_owned()],
        y_s: [gp.y0s.rows(start, len).into_owned(), y1s.rows(start, len).into_owned()],
    };
    Ok([part(0, a), part(a, b), part(a + b, c)])
}

fn pick(arms: &[DVector<f64>; 2], t: &[u8]) -> DVector<f64> {
    DVector::from_fn(t.len(), |i, _| arms[t[i] as usize][i])
}

fn learned_or_oracle<R: Rng + ?Sized>(
    cfg: &SweepConfig,
    oracle: impl FnOnce() -> Result<Encoder>,
    d_syn: &SimulatorDataset,
    contrastive: bool,
    rng: &mut R,
) -> Result<Encoder> {
    match (cfg.extractor_mode, contrastive) {
        (ExtractorMode::Oracle, _) => oracle(),
        (ExtractorMode::Learned, false) => pairwise_linear_map(d_syn),
        (ExtractorMode::Learned, true) => Ok(train_contrastive(d_syn, &cfg.contrastive, rng)?.encoder),
    }
}

fn linear_cell(cfg: &SweepConfig, gaps: &GapConfig, seed: u64, pool: Option<&DMatrix<f64>>) -> Result<CellData> {
    let n_z = pool.map_or(cfg.n_z, |p| p.ncols());
    let spec = build_linear_pair(*gaps, n_z, (cfg.sigma_y, cfg.sigma_ys), &mut seeded(derive(seed, "dgp")))?
        .with_propensity_scale(cfg.propensity_scale);
    let z = draw_latents(cfg, pool, &mut seeded(derive(seed, "latents")))?;
    let d_trn = generate_observational(&spec, &z.trn, &mut seeded(derive(seed, "observational")))?;
    let d_syn = generate_simulator_cf(&spec, &z.syn, &mut seeded(derive(seed, "simulator")))?;
    let d_tst = generate_eval(&spec, &z.tst, &mut seeded(derive(seed, "eval")))?;
    let extractor = learned_or_oracle(
        cfg,
        || oracle_linear_map(&spec.s_inv),
        &d_syn,
        false,
        &mut seeded(derive(seed, "extractor")),
    )?;
    Ok(CellData {
        d_trn,
        d_syn,
        d_tst,
        linear_spec: Some(spec),
        extractor,
    })
}

fn gp_cell(cfg: &SweepConfig, gaps: &GapConfig, seed: u64, pool: Option<&DMatrix<f64>>) -> Result<CellData> {
    let n_z = pool.map_or(cfg.n_z, |p| p.ncols());
    let spec = build_linear_pair(*gaps, n_z, (0.0, 0.0), &mut seeded(derive(seed, "dgp")))?
        .with_propensity_scale(cfg.propensity_scale);
    let z = draw_latents(cfg, pool, &mut seeded(derive(seed, "latents")))?;
    let [o_trn, o_syn, o_tst] = gp_outcomes(cfg, gaps, &z, &mut seeded(derive(seed, "outcomes")))?;
    let rng = &mut seeded(derive(seed, "observational"));
    let base = generate_observational(&spec, &z.trn, rng)?;
    let y = noisy(pick(&o_trn.mu, &base.t), cfg.sigma_y, rng);
    let d_trn = ObservationalDataset::new(base.x, base.t, y)?;
    let rng = &mut seeded(derive(seed, "simulator"));
    let d_syn = SimulatorDataset::new(
        &z.syn * spec.s(0),
        &z.syn * spec.s(1),
        noisy(o_syn.y_s[0].clone(), cfg.sigma_ys, rng),
        noisy(o_syn.y_s[1].clone(), cfg.sigma_ys, rng),
    )?;
    let mut d_tst = generate_eval(&spec, &z.tst, &mut seeded(derive(seed, "eval")))?;
    d_tst.tau = &o_tst.mu[1] - &o_tst.mu[0];
    [d_tst.y0, d_tst.y1] = o_tst.mu;
    let extractor = learned_or_oracle(
        cfg,
        || oracle_linear_map(&spec.s_inv),
        &d_syn,
        false,
        &mut seeded(derive(seed, "extractor")),
    )?;
    Ok(CellData {
        d_trn,
        d_syn,
        d_tst,
        linear_spec: None,
        extractor,
    })
}

/// Real flows `g_0 = A`, `g_1 = blend(A, B, γ_R)`; simulator flows `g_t^S = blend(g_t, C_t, γ_RS)`.
fn flow_family<R: Rng + ?Sized>(n: usize, layers: usize, gaps: &GapConfig, rng: &mut R) -> Result<([CouplingFlow; 2], [CouplingFlow; 2])> {
    let a = new_coupling_flow(n, layers, rng)?;
    let b = new_coupling_flow(n, layers, rng)?;
    let c0 = new_coupling_flow(n, layers, rng)?;
    let c1 = new_coupling_flow(n, layers, rng)?;
    let g1 = a.blend(&b, gaps.gamma_r)?;
    let s0 = a.blend(&c0, gaps.gamma_rs)?;
    let s1 = g1.blend(&c1, gaps.gamma_rs)?;
    Ok(([a, g1], [s0, s1]))
}

fn render(flows: &[CouplingFlow; 2], z: &DMatrix<f64>, t: &[u8]) -> Result<DMatrix<f64>> {
    let x = [flows[0].apply(z)?, flows[1].apply(z)?];
    Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| x[t[i] as usize][(i, j)]))
}

fn flow_cell(cfg: &SweepConfig, gaps: &GapConfig, seed: u64, pool: Option<&DMatrix<f64>>) -> Result<CellData> {
    let n_z = pool.map_or(cfg.n_z, |p| p.ncols());
    let (real, sim) = flow_family(n_z, cfg.flow_layers, gaps, &mut seeded(derive(seed, "dgp")))?;
    let z = draw_latents(cfg, pool, &mut seeded(derive(seed, "latents")))?;
    let [o_trn, o_syn, o_tst] = gp_outcomes(cfg, gaps, &z, &mut seeded(derive(seed, "outcomes")))?;
    let rng = &mut seeded(derive(seed, "observational"));
    let t = assign_treatments(&z.trn, cfg.propensity_scale, rng)?;
    let y = noisy(pick(&o_trn.mu, &t), cfg.sigma_y, rng);
    let d_trn = ObservationalDataset::new(render(&real, &z.trn, &t)?, t, y)?;
    let rng = &mut seeded(derive(seed, "simulator"));
    let d_syn = SimulatorDataset::new(
        sim[0].apply(&z.syn)?,
        sim[1].apply(&z.syn)?,
        noisy(o_syn.y_s[0].clone(), cfg.sigma_ys, rng),
        noisy(o_syn.y_s[1].clone(), cfg.sigma_ys, rng),
    )?;
    let t_tst: Vec<u8> = {
        let rng = &mut seeded(derive(seed, "eval"));
        (0..z.tst.nrows()).map(|_| u8::from(rng.random::<bool>())).collect()
    };
    let [y0, y1] = o_tst.mu;
    let d_tst = EvalDataset {
        x: render(&real, &z.tst, &t_tst)?,
        t: t_tst,
        tau: &y1 - &y0,
        y0,
        y1,
        z: z.tst.clone(),
    };
    d_tst.validate()?;
    let extractor = learned_or_oracle(
        cfg,
        || Encoder::inverse_flows(sim.clone()),
        &d_syn,
        true,
        &mut seeded(derive(seed, "extractor")),
    )?;
    Ok(CellData {
        d_trn,
        d_syn,
        d_tst,
        linear_spec: None,
        extractor,
    })
}

/// Builds the processes and samples all datasets for one cell from its seed.
pub fn generate_cell(cfg: &SweepConfig, gaps: &GapConfig, cell_seed: u64, latent_pool: Option<&DMatrix<f64>>) -> Result<CellData> {
    gaps.validate()?;
    match cfg.dgp_kind {
        DgpKind::Linear => linear_cell(cfg, gaps, cell_seed, latent_pool),
        DgpKind::Gp => gp_cell(cfg, gaps, cell_seed, latent_pool),
        DgpKind::Flow => flow_cell(cfg, gaps, cell_seed, latent_pool),
    }
}
