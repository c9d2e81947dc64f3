use nalgebra::{DMatrix, DVector};

use super::encoder::{Encoder, EncoderArm, NORM_EPS};
use crate::dgp::SimulatorDataset;
use crate::error::{invalid, numerical, Result};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(NORM_EPS)
}

/// Loss of one anchor: `−log(exp(s⁺/T) / (exp(s⁺/T) + Σ exp(s⁻/T)))` with cosine similarities.
pub fn anchor_infonce(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], temperature: f64) -> f64 {
    let sp = cosine(anchor, positive) / temperature;
    let logits: Vec<f64> = std::iter::once(sp)
        .chain(negatives.iter().map(|n| cosine(anchor, n) / temperature))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - sp
}

/// Batch loss over raw embeddings of both arms, with gradients with respect to those embeddings.
///
/// Anchor `(i, t)` has positive `(i, 1 − t)`; every other row under either arm is a negative.
pub fn infonce_embeddings(
    u0: &DMatrix<f64>,
    u1: &DMatrix<f64>,
    temperature: f64,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let m = u0.nrows();
    if m < 2 {
        return invalid("InfoNCE needs at least two rows so that a negative exists");
    }
    if u1.shape() != u0.shape() {
        return invalid("embedding blocks differ in shape");
    }
    if !(temperature > 0.0) {
        return invalid("temperature must be positive");
    }
    let n = 2 * m;
    let d = u0.ncols();
    let mut u = DMatrix::zeros(n, d);
    u.rows_mut(0, m).copy_from(u0);
    u.rows_mut(m, m).copy_from(u1);
    let norms: Vec<f64> = u.row_iter().map(|r| r.norm()).collect();
    if let Some(i) = norms.iter().position(|&v| !(v >= NORM_EPS)) {
        return numerical(format!("embedding row {i} has (near) zero norm"));
    }
    let mut e = u.clone();
    for (i, mut row) in e.row_iter_mut().enumerate() {
        row /= norms[i];
    }
    // Logits are symmetric, so column `a` holds anchor `a`; each column is overwritten in place by its softmax.
    let mut p = (&e * e.transpose()) / temperature;
    let pos = |a: usize| if a < m { a + m } else { a - m };
    let mut loss = 0.0;
    for a in 0..n {
        let mut col = p.column_mut(a);
        let col = col.as_mut_slice();
        let max = col
            .iter()
            .enumerate()
            .filter(|&(b, _)| b != a)
            .fold(f64::NEG_INFINITY, |acc, (_, &v)| acc.max(v));
        loss += max - col[pos(a)];
        let mut z = 0.0;
        for (b, v) in col.iter_mut().enumerate() {
            *v = if b == a { 0.0 } else { (*v - max).exp() };
            z += *v;
        }
        loss += z.ln();
        col.iter_mut().for_each(|v| *v /= z);
        col[pos(a)] -= 1.0;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return numerical("InfoNCE loss is not finite");
    }
    let de = (&p * &e + p.tr_mul(&e)) / (n as f64 * temperature);
    let mut du = DMatrix::zeros(n, d);
    for i in 0..n {
        let ei = e.row(i);
        let dei = de.row(i);
        let proj = ei.dot(&dei);
        du.row_mut(i).copy_from(&((dei - ei * proj) / norms[i]));
    }
    Ok((loss, du.rows(0, m).into_owned(), du.rows(m, m).into_owned()))
}

/// Mean InfoNCE loss of the encoder on a paired batch and its gradient in [`Encoder::params`] layout.
pub fn infonce_loss(enc: &Encoder, batch: &SimulatorDataset, temperature: f64) -> Result<(f64, DVector<f64>)> {
    if batch.len() < 2 {
        return invalid("InfoNCE needs a batch of at least two rows");
    }
    let xs = [&batch.x0, &batch.x1];
    let mut raw = Vec::with_capacity(2);
    let mut caches = Vec::with_capacity(2);
    for t in 0..2u8 {
        let x = xs[t as usize];
        if x.ncols() != enc.n_x {
            return invalid(format!("encoder expects {} columns, got {}", enc.n_x, x.ncols()));
        }
        match &enc.arms[t as usize] {
            EncoderArm::Mlp(net) => {
                let (o, cache) = net.forward_cached(x);
                raw.push(o);
                caches.push(Some(cache));
            }
            _ => {
                raw.push(enc.raw(t, x)?);
                caches.push(None);
            }
        }
    }
    let (loss, du0, du1) = infonce_embeddings(&raw[0], &raw[1], temperature)?;
    let dus = [du0, du1];
    let mut grad = Vec::with_capacity(enc.n_params());
    for t in 0..2usize {
        match &enc.arms[t] {
            EncoderArm::Linear { .. } => grad.extend_from_slice((xs[t].transpose() * &dus[t]).as_slice()),
            EncoderArm::Mlp(net) => {
                let cache = caches[t].as_ref().expect("mlp cache");
                grad.extend(net.backward(xs[t], cache, &dus[t]));
            }
            EncoderArm::InverseFlow(_) => {}
        }
    }
    Ok((loss, DVector::from_vec(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use crate::rng::seeded;

    #[test]
    fn single_anchor_example() {
        let l = anchor_infonce(&[1.0, 0.0], &[1.0, 0.0], &[vec![0.0, 1.0]], 1.0);
        let e = std::f64::consts::E;
        assert!((l - (-(e / (e + 1.0)).ln())).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn identical_embeddings_give_uniform_softmax() {
        let u = DMatrix::from_element(3, 2, 1.0);
        let (l, _, _) = infonce_embeddings(&u, &u, 0.1).unwrap();
        let k = 2.0 * 3.0 - 2.0;
        assert!((l - (k + 1.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_matches_anchor_oracle() {
        let mut rng = seeded(2);
        let u0 = gaussian_matrix(&mut rng, 4, 3);
        let u1 = gaussian_matrix(&mut rng, 4, 3);
        let (l, _, _) = infonce_embeddings(&u0, &u1, 0.5).unwrap();
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|a| {
                let src = if a < 4 { &u0 } else { &u1 };
                src.row(a % 4).iter().copied().collect()
            })
            .collect();
        let mut total = 0.0;
        for a in 0..8 {
            let p = if a < 4 { a + 4 } else { a - 4 };
            let negs: Vec<Vec<f64>> = (0..8).filter(|&b| b != a && b != p).map(|b| rows[b].clone()).collect();
            total += anchor_infonce(&rows[a], &rows[p], &negs, 0.5);
        }
        assert!((l - total / 8.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_batches() {
        let one = DMatrix::from_element(1, 2, 1.0);
        assert!(infonce_embeddings(&one, &one, 0.1).is_err());
        let zero = DMatrix::zeros(2, 2);
        assert!(matches!(
            infonce_embeddings(&zero, &zero, 0.1),
            Err(crate::Error::Numerical(_))
        ));
    }
}
