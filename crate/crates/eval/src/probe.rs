//! How far the truncated network is from linear around a prompt.
//!
//! For a uniform perturbation `y` of the input embedding, compares the
//! output shift caused by `k·y` with the shift caused by `y`. A linear map
//! gives cosine 1 for every `k`.

use pia_core::model::{Model, TokenSequence};
use pia_core::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCell {
    pub depth: usize,
    pub k: f64,
    /// `None` when either difference vector has zero norm.
    pub cosine: Option<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `cos⟨F(E(x)+k·y) − F(E(x)), F(E(x)+y) − F(E(x))⟩` for each depth and `k`,
/// with `y ~ U[−noise, noise]` drawn once from `seed`. Cells are ordered by
/// depth, then `k`.
pub fn nonlinearity_probe<T: Real>(
    model: &Model<T>,
    x: &TokenSequence,
    noise: f64,
    ks: &[f64],
    depths: &[usize],
    seed: u64,
) -> Result<Vec<ProbeCell>, EvalError> {
    if let Some(&d) = depths.iter().find(|&&d| d == 0 || d > model.num_layers()) {
        return Err(EvalError::Config(format!(
            "depth {d} outside [1, {}]",
            model.num_layers()
        )));
    }
    if !(noise > 0.0 && noise.is_finite()) {
        return Err(EvalError::Config(format!("noise scale must be positive, got {noise}")));
    }
    let base = model.embed(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_data = (0..base.len())
        .map(|_| T::lit(rng.random_range(-noise..=noise)))
        .collect();
    let y = Tensor::new(base.shape().to_vec(), y_data)?;
    let shifted = |k: f64| -> Result<Tensor<T>, EvalError> { Ok(base.add(&y.scale(T::lit(k))?)?) };
    let mut cells = Vec::with_capacity(depths.len() * ks.len());
    for &depth in depths {
        let f0 = model.forward_to(&base, depth, None)?;
        let diff = |v: &Tensor<T>| -> Result<Vec<f64>, EvalError> {
            let f = model.forward_to(v, depth, None)?;
            Ok(f.data()
                .iter()
                .zip(f0.data())
                .map(|(a, b)| (*a - *b).as_f64())
                .collect())
        };
        let d1 = diff(&shifted(1.0)?)?;
        for &k in ks {
            let dk = diff(&shifted(k)?)?;
            cells.push(ProbeCell {
                depth,
                k,
                cosine: cosine(&dk, &d1),
            });
        }
    }
    Ok(cells)
}

/// Mean cosine per `(depth, k)` over many prompts, skipping null cells.
/// Prompt `i` uses seed `seed + i`.
pub fn mean_nonlinearity<T: Real>(
    model: &Model<T>,
    prompts: &[TokenSequence],
    noise: f64,
    ks: &[f64],
    depths: &[usize],
    seed: u64,
) -> Result<Vec<ProbeCell>, EvalError> {
    let mut sums = vec![(0.0, 0usize); depths.len() * ks.len()];
    for (i, x) in prompts.iter().enumerate() {
        let cells = nonlinearity_probe(model, x, noise, ks, depths, seed.wrapping_add(i as u64))?;
        for (s, c) in sums.iter_mut().zip(cells) {
            if let Some(v) = c.cosine {
                s.0 += v;
                s.1 += 1;
            }
        }
    }
    Ok(depths
        .iter()
        .flat_map(|&d| ks.iter().map(move |&k| (d, k)))
        .zip(sums)
        .map(|((depth, k), (sum, n))| ProbeCell {
            depth,
            k,
            cosine: (n > 0).then(|| sum / n as f64),
        })
        .collect())
}
