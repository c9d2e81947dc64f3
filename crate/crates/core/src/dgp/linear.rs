use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::{EvalDataset, ObservationalDataset, SimulatorDataset};
use crate::error::{invalid, numerical, Result};
use crate::linalg::{condition_number, gaussian_matrix, gaussian_vector, inverse, serde_matrix};

pub const MAX_CONDITION: f64 = 1e8;
pub const MAX_RESAMPLES: usize = 20;

fn default_gamma_w() -> f64 {
    0.4
}

/// Gap dials between the real and simulator processes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    pub gamma_r: f64,
    pub gamma_rs: f64,
    pub gamma_tau: f64,
    #[serde(default = "default_gamma_w")]
    pub gamma_w: f64,
}

impl GapConfig {
    pub fn new(gamma_r: f64, gamma_rs: f64, gamma_tau: f64) -> Result<Self> {
        let g = Self {
            gamma_r,
            gamma_rs,
            gamma_tau,
            gamma_w: default_gamma_w(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_gamma_w(mut self, gamma_w: f64) -> Result<Self> {
        self.gamma_w = gamma_w;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, hi: f64| {
            if !(0.0..=hi).contains(&v) {
                invalid(format!("{name} = {v} outside [0, {hi}]"))
            } else {
                Ok(())
            }
        };
        check("gamma_r", self.gamma_r, 0.5)?;
        check("gamma_rs", self.gamma_rs, 0.5)?;
        check("gamma_tau", self.gamma_tau, 1.0)?;
        check("gamma_w", self.gamma_w, 1.0)
    }
}

/// Matched real and simulator linear processes: `x = z·R_t`, `y = z·w_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDgpPair {
    pub n_z: usize,
    #[serde(with = "pair_matrix")]
    pub r_inv: [DMatrix<f64>; 2],
    #[serde(with = "pair_matrix")]
    pub s_inv: [DMatrix<f64>; 2],
    #[serde(with = "pair_vector")]
    pub w: [DVector<f64>; 2],
    #[serde(with = "pair_vector")]
    pub w_s: [DVector<f64>; 2],
    pub sigma_y: f64,
    pub sigma_ys: f64,
    pub propensity_scale: f64,
    #[serde(skip)]
    r: [DMatrix<f64>; 2],
    #[serde(skip)]
    s: [DMatrix<f64>; 2],
}

impl LinearDgpPair {
    /// Assembles a pair from explicit parameters, enforcing invertibility and the condition gate.
    pub fn from_parts(
        r_inv: [DMatrix<f64>; 2],
        s_inv: [DMatrix<f64>; 2],
        w: [DVector<f64>; 2],
        w_s: [DVector<f64>; 2],
        noise: (f64, f64),
    ) -> Result<Self> {
        let n_z = w[0].len();
        if n_z == 0 {
            return invalid("n_z must be positive");
        }
        for m in r_inv.iter().chain(s_inv.iter()) {
            if m.nrows() != n_z || m.ncols() != n_z {
                return invalid(format!("covariate maps must be {n_z}x{n_z}"));
            }
            let c = condition_number(m);
            if !(c < MAX_CONDITION) {
                return numerical(format!("covariate map condition number {c:e} exceeds {MAX_CONDITION:e}"));
            }
        }
        if w.iter().chain(w_s.iter()).any(|v| v.len() != n_z) {
            return invalid(format!("outcome heads must have length {n_z}"));
        }
        if !(noise.0 >= 0.0 && noise.1 >= 0.0) {
            return invalid("noise scales must be nonnegative");
        }
        let r = [inverse(&r_inv[0], "R_0^-1")?, inverse(&r_inv[1], "R_1^-1")?];
        let s = [inverse(&s_inv[0], "S_0^-1")?, inverse(&s_inv[1], "S_1^-1")?];
        Ok(Self {
            n_z,
            r_inv,
            s_inv,
            w,
            w_s,
            sigma_y: noise.0,
            sigma_ys: noise.1,
            propensity_scale: 0.0,
            r,
            s,
        })
    }

    pub fn with_propensity_scale(mut self, alpha: f64) -> Self {
        self.propensity_scale = alpha;
        self
    }

    /// Recomputes the cached forward maps after deserialisation or manual edits.
    pub fn refresh(self) -> Result<Self> {
        let alpha = self.propensity_scale;
        Ok(Self::from_parts(self.r_inv, self.s_inv, self.w, self.w_s, (self.sigma_y, self.sigma_ys))?
            .with_propensity_scale(alpha))
    }

    /// Real covariate generator `R_t`.
    pub fn r(&self, t: u8) -> &DMatrix<f64> {
        &self.r[t as usize]
    }

    /// Simulator covariate generator `S_t`.
    pub fn s(&self, t: u8) -> &DMatrix<f64> {
        &self.s[t as usize]
    }

    pub fn w_tau(&self) -> DVector<f64> {
        &self.w[1] - &self.w[0]
    }

    pub fn w_tau_s(&self) -> DVector<f64> {
        &self.w_s[1] - &self.w_s[0]
    }

    fn propensity_direction(&self) -> DVector<f64> {
        DVector::from_element(self.n_z, 1.0 / (self.n_z as f64).sqrt())
    }

    fn check_latents(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.ncols() != self.n_z {
            return invalid(format!("latents have {} columns, expected {}", z.ncols(), self.n_z));
        }
        Ok(())
    }
}

pub fn build_linear_pair<R: Rng + ?Sized>(
    gaps: GapConfig,
    n_z: usize,
    noise: (f64, f64),
    rng: &mut R,
) -> Result<LinearDgpPair> {
    gaps.validate()?;
    if n_z == 0 {
        return invalid("n_z must be positive");
    }
    let mix = |a: &DMatrix<f64>, g: f64, b: DMatrix<f64>| a * (1.0 - g) + b * g;
    let mut last_err = None;
    for _ in 0..=MAX_RESAMPLES {
        let r0_inv = gaussian_matrix(rng, n_z, n_z);
        let w0 = gaussian_vector(rng, n_z);
        let r1_inv = mix(&r0_inv, gaps.gamma_r, gaussian_matrix(rng, n_z, n_z));
        let w1 = &w0 * gaps.gamma_w + gaussian_vector(rng, n_z) * (1.0 - gaps.gamma_w);
        let s0_inv = mix(&r0_inv, gaps.gamma_rs, gaussian_matrix(rng, n_z, n_z));
        let s1_inv = mix(&r1_inv, gaps.gamma_rs, gaussian_matrix(rng, n_z, n_z));
        let w_tau = &w1 - &w0;
        let w_tau_s = &w_tau * (1.0 - gaps.gamma_tau) + gaussian_vector(rng, n_z) * gaps.gamma_tau;
        let w1_s = &w0 + &w_tau_s;
        match LinearDgpPair::from_parts(
            [r0_inv, r1_inv],
            [s0_inv, s1_inv],
            [w0.clone(), w1],
            [w0, w1_s],
            noise,
        ) {
            Ok(p) => return Ok(p),
            Err(e) => last_err = Some(e),
        }
    }
    numerical(format!(
        "no well-conditioned draw after {MAX_RESAMPLES} resamples: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    ))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn generate_observational<R: Rng + ?Sized>(
    spec: &LinearDgpPair,
    z: &DMatrix<f64>,
    rng: &mut R,
) -> Result<ObservationalDataset> {
    spec.check_latents(z)?;
    let n = z.nrows();
    let wp = spec.propensity_direction();
    let logits = z * &wp;
    let t: Vec<u8> = (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            u8::from(u < sigmoid(spec.propensity_scale * logits[i]))
        })
        .collect();
    if !t.contains(&0) || !t.contains(&1) {
        return invalid("treatment assignment left an arm empty; resample with another seed");
    }
    let zr = [z * spec.r(0), z * spec.r(1)];
    let zw = [z * &spec.w[0], z * &spec.w[1]];
    let mut x = DMatrix::zeros(n, spec.n_z);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let a = t[i] as usize;
        x.row_mut(i).copy_from(&zr[a].row(i));
        let eps: f64 = rng.sample(StandardNormal);
        y[i] = zw[a][i] + spec.sigma_y * eps;
    }
    ObservationalDataset::new(x, t, y)
}

pub fn generate_simulator_cf<R: Rng + ?Sized>(
    spec: &LinearDgpPair,
    z: &DMatrix<f64>,
    rng: &mut R,
) -> Result<SimulatorDataset> {
    spec.check_latents(z)?;
    let m = z.nrows();
    let noise0 = gaussian_vector(rng, m);
    let noise1 = gaussian_vector(rng, m);
    SimulatorDataset::new(
        z * spec.s(0),
        z * spec.s(1),
        z * &spec.w_s[0] + noise0 * spec.sigma_ys,
        z * &spec.w_s[1] + noise1 * spec.sigma_ys,
    )
}

pub fn generate_eval<R: Rng + ?Sized>(
    spec: &LinearDgpPair,
    z: &DMatrix<f64>,
    rng: &mut R,
) -> Result<EvalDataset> {
    spec.check_latents(z)?;
    let m = z.nrows();
    let t: Vec<u8> = (0..m).map(|_| u8::from(rng.random::<bool>())).collect();
    let zr = [z * spec.r(0), z * spec.r(1)];
    let x = DMatrix::from_fn(m, spec.n_z, |i, j| zr[t[i] as usize][(i, j)]);
    let y0 = z * &spec.w[0];
    let y1 = z * &spec.w[1];
    let tau = &y1 - &y0;
    let d = EvalDataset {
        x,
        t,
        y0,
        y1,
        tau,
        z: z.clone(),
    };
    d.validate()?;
    Ok(d)
}

mod pair_matrix {
    use super::serde_matrix;
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &[DMatrix<f64>; 2], s: S) -> Result<S::Ok, S::Error> {
        [serde_matrix::to_rows(&p[0]), serde_matrix::to_rows(&p[1])].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[DMatrix<f64>; 2], D::Error> {
        let [a, b] = <[Vec<Vec<f64>>; 2]>::deserialize(d)?;
        let conv = |r: &[Vec<f64>]| serde_matrix::from_rows(r, 0).map_err(serde::de::Error::custom);
        Ok([conv(&a)?, conv(&b)?])
    }
}

mod pair_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &[DVector<f64>; 2], s: S) -> Result<S::Ok, S::Error> {
        [p[0].as_slice(), p[1].as_slice()].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[DVector<f64>; 2], D::Error> {
        let [a, b] = <[Vec<f64>; 2]>::deserialize(d)?;
        Ok([DVector::from_vec(a), DVector::from_vec(b)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_latents, LatentMode};
    use crate::rng::seeded;

    fn pair(g: (f64, f64, f64), seed: u64) -> LinearDgpPair {
        let gaps = GapConfig::new(g.0, g.1, g.2).unwrap();
        build_linear_pair(gaps, 4, (0.0, 0.0), &mut seeded(seed)).unwrap()
    }

    #[test]
    fn gap_validation() {
        assert!(GapConfig::new(0.6, 0.1, 0.1).is_err());
        assert!(GapConfig::new(0.1, -0.1, 0.1).is_err());
        assert!(GapConfig::new(0.1, 0.1, 1.0).is_ok());
        assert!(GapConfig::new(0.1, 0.1, 0.1).unwrap().with_gamma_w(1.5).is_err());
    }

    #[test]
    fn zero_gaps_degenerate() {
        let p = pair((0.0, 0.0, 0.0), 11);
        assert_eq!(p.r_inv[0], p.r_inv[1]);
        assert_eq!(p.s_inv[0], p.r_inv[0]);
        assert_eq!(p.s_inv[1], p.r_inv[1]);
        assert!((p.w_tau_s() - p.w_tau()).amax() < 1e-14);
    }

    #[test]
    fn gamma_w_one_copies_w0() {
        let gaps = GapConfig::new(0.1, 0.1, 0.1).unwrap().with_gamma_w(1.0).unwrap();
        let p = build_linear_pair(gaps, 3, (0.0, 0.0), &mut seeded(2)).unwrap();
        assert_eq!(p.w[0], p.w[1]);
    }

    #[test]
    fn observational_noiseless_identity() {
        let p = pair((0.3, 0.2, 0.1), 5);
        let mut rng = seeded(1);
        let z = sample_latents(200, 4, &mut rng, LatentMode::Gaussian).unwrap();
        let d = generate_observational(&p, &z, &mut rng).unwrap();
        for i in 0..d.len() {
            let t = d.t[i];
            let pred = (d.x.row(i) * &p.r_inv[t as usize] * &p.w[t as usize])[(0, 0)];
            assert!((pred - d.y[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn randomized_assignment_is_balanced() {
        let p = pair((0.3, 0.2, 0.1), 5);
        let mut rng = seeded(8);
        let z = sample_latents(10_000, 4, &mut rng, LatentMode::Gaussian).unwrap();
        let d = generate_observational(&p, &z, &mut rng).unwrap();
        let frac = d.t.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        assert!((frac - 0.5).abs() < 0.02);
    }

    #[test]
    fn propensity_shifts_assignment() {
        let p = pair((0.3, 0.2, 0.1), 5).with_propensity_scale(3.0);
        let mut rng = seeded(8);
        let z = sample_latents(4000, 4, &mut rng, LatentMode::Gaussian).unwrap();
        let d = generate_observational(&p, &z, &mut rng).unwrap();
        let wp = DVector::from_element(4, 0.5);
        let mut agree = 0usize;
        for i in 0..d.len() {
            let s = (z.row(i) * &wp)[(0, 0)];
            if (s > 0.0) == (d.t[i] == 1) {
                agree += 1;
            }
        }
        assert!(agree as f64 / d.len() as f64 > 0.75);
    }

    #[test]
    fn simulator_rows_share_latents() {
        let p = pair((0.3, 0.2, 0.4), 9);
        let mut rng = seeded(4);
        let z = sample_latents(50, 4, &mut rng, LatentMode::Gaussian).unwrap();
        let d = generate_simulator_cf(&p, &z, &mut rng).unwrap();
        let a = &d.x0 * &p.s_inv[0];
        let b = &d.x1 * &p.s_inv[1];
        assert!((a - b).amax() < 1e-9);
        assert!((d.tau() - &z * p.w_tau_s()).amax() < 1e-9);
    }

    #[test]
    fn simulator_equals_real_without_gap() {
        let p = pair((0.3, 0.0, 0.0), 9);
        let mut rng = seeded(4);
        let z = sample_latents(20, 4, &mut rng, LatentMode::Gaussian).unwrap();
        let d = generate_simulator_cf(&p, &z, &mut rng).unwrap();
        assert!((&d.x1 - &z * p.r(1)).amax() < 1e-9);
        assert!((&d.x0 - &z * p.r(0)).amax() < 1e-9);
    }

    #[test]
    fn eval_ground_truth() {
        let p = pair((0.3, 0.2, 0.4), 9);
        let z = sample_latents(60, 4, &mut seeded(3), LatentMode::Gaussian).unwrap();
        let d = generate_eval(&p, &z, &mut seeded(4)).unwrap();
        assert!((&d.tau - &z * p.w_tau()).amax() < 1e-9);
        assert_eq!(d.tau, &d.y1 - &d.y0);
        for i in 0..d.len() {
            let back = d.x.row(i) * &p.r_inv[d.t[i] as usize];
            assert!((back - z.row(i)).amax() < 1e-9);
        }
        assert_eq!(d, generate_eval(&p, &z, &mut seeded(4)).unwrap());
    }

    #[test]
    fn condition_gate_rejects_singular_parts() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let good = DMatrix::identity(2, 2);
        let w = DVector::from_element(2, 1.0);
        let r = LinearDgpPair::from_parts(
            [good.clone(), bad],
            [good.clone(), good],
            [w.clone(), w.clone()],
            [w.clone(), w],
            (0.0, 0.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = pair((0.1, 0.4, 0.1), 2);
        let s = serde_json::to_string(&p).unwrap();
        let q: LinearDgpPair = serde_json::from_str(&s).unwrap();
        assert_eq!(q.refresh().unwrap(), p);
    }
}
