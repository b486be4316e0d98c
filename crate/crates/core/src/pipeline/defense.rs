use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// What a sender does to its activation before transmitting it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Defense {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
    Quantize {
        bits: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DefenseConfig {
    #[serde(flatten)]
    pub defense: Defense,
    #[serde(default)]
    pub seed: u64,
}

impl DefenseConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            defense: Defense::Gaussian { sigma },
            seed,
        }
    }

    pub fn quantize(bits: u32) -> Self {
        Self {
            defense: Defense::Quantize { bits },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match self.defense {
            Defense::None => Ok(()),
            Defense::Gaussian { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(()),
            Defense::Gaussian { sigma } => Err(PipelineError::Defense(format!(
                "sigma must be finite and >= 0, got {sigma}"
            ))),
            Defense::Quantize { bits: 4 | 8 } => Ok(()),
            Defense::Quantize { bits } => Err(PipelineError::Defense(format!("bits must be 4 or 8, got {bits}"))),
        }
    }

    /// Applies the defense. `stream` separates the noise of different senders
    /// sharing one seed.
    pub fn apply<T: Real>(&self, a: &Tensor<T>, stream: u64) -> Result<Tensor<T>, PipelineError> {
        self.validate()?;
        match self.defense {
            Defense::None => Ok(a.clone()),
            Defense::Gaussian { sigma } => apply_gaussian_stream(a, sigma, self.seed, stream),
            Defense::Quantize { bits } => {
                let q = quantize(a, bits)?;
                Ok(dequantize(&q))
            }
        }
    }

    pub fn label(&self) -> String {
        match self.defense {
            Defense::None => "none".into(),
            Defense::Gaussian { sigma } => format!("gaussian({sigma})"),
            Defense::Quantize { bits } => format!("quantize({bits})"),
        }
    }
}

/// `A + ε` with `ε ~ N(0, σ²)` elementwise. `σ = 0` returns `A` unchanged.
pub fn apply_gaussian<T: Real>(a: &Tensor<T>, sigma: f64, seed: u64) -> Result<Tensor<T>, PipelineError> {
    apply_gaussian_stream(a, sigma, seed, 0)
}

fn apply_gaussian_stream<T: Real>(
    a: &Tensor<T>,
    sigma: f64,
    seed: u64,
    stream: u64,
) -> Result<Tensor<T>, PipelineError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(PipelineError::Defense(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(a.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // Sampling unit normals and scaling keeps the noise direction identical
    // across σ for a fixed seed.
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data = a
        .data()
        .iter()
        .map(|&v| v + T::lit(sigma * normal.sample(&mut rng)))
        .collect();
    Ok(Tensor::new(a.shape().to_vec(), data)?)
}

/// Symmetric per-tensor integer codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized<T: Real = f64> {
    pub shape: Vec<usize>,
    pub codes: Vec<i8>,
    pub scale: T,
    pub bits: u32,
}

/// `scale = max|A| / (2^{bits−1} − 1)`, codes rounded to nearest, ties to even.
pub fn quantize<T: Real>(a: &Tensor<T>, bits: u32) -> Result<Quantized<T>, PipelineError> {
    if bits != 4 && bits != 8 {
        return Err(PipelineError::Defense(format!("bits must be 4 or 8, got {bits}")));
    }
    if !a.is_finite() {
        return Err(crate::error::TensorError::NonFinite { op: "quantize" }.into());
    }
    let qmax = ((1i32 << (bits - 1)) - 1) as f64;
    let max_abs = a.max_abs();
    let scale = max_abs / T::lit(qmax);
    let codes = if max_abs == T::zero() {
        vec![0; a.len()]
    } else {
        a.data()
            .iter()
            .map(|&v| (v / scale).as_f64().round_ties_even().clamp(-qmax, qmax) as i8)
            .collect()
    };
    Ok(Quantized {
        shape: a.shape().to_vec(),
        codes,
        scale,
        bits,
    })
}

pub fn dequantize<T: Real>(q: &Quantized<T>) -> Tensor<T> {
    let data = q.codes.iter().map(|&c| T::lit(c as f64) * q.scale).collect();
    Tensor::new(q.shape.clone(), data).expect("shape matches codes")
}

/// `‖A' − A‖ / ‖A‖`, zero when both are zero.
pub fn relative_distortion<T: Real>(original: &Tensor<T>, defended: &Tensor<T>) -> f64 {
    let num: f64 = original
        .data()
        .iter()
        .zip(defended.data())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum::<f64>()
        .sqrt();
    let den = original.l2_norm_sq().as_f64().sqrt();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor {
        Tensor::new(vec![2, 3], vec![0.5, -1.3, 0.0, 2.54, -0.01, 1.0]).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let a = sample();
        assert_eq!(apply_gaussian(&a, 0.0, 9).unwrap(), a);
        assert_eq!(DefenseConfig::gaussian(0.0, 9).apply(&a, 3).unwrap(), a);
    }

    #[test]
    fn noise_is_seeded() {
        let a = sample();
        let x = apply_gaussian(&a, 0.5, 1).unwrap();
        assert_eq!(x, apply_gaussian(&a, 0.5, 1).unwrap());
        assert_ne!(x, apply_gaussian(&a, 0.5, 2).unwrap());
        assert_ne!(x, a);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(apply_gaussian(&sample(), -1.0, 0).is_err());
        assert!(quantize(&sample(), 3).is_err());
        assert!(DefenseConfig::quantize(16).validate().is_err());
        let mut bad = sample();
        bad.data_mut()[0] = f64::NAN;
        assert!(quantize(&bad, 8).is_err());
    }

    #[test]
    fn zeros_round_trip_exactly() {
        let z = Tensor::<f64>::zeros(&[3, 4]);
        for bits in [4, 8] {
            let q = quantize(&z, bits).unwrap();
            assert_eq!(q.scale, 0.0);
            assert!(q.codes.iter().all(|&c| c == 0));
            assert_eq!(dequantize(&q), z);
        }
    }

    #[test]
    fn eight_bit_codes_and_error() {
        let a = sample();
        let q = quantize(&a, 8).unwrap();
        assert_eq!(q.scale, 2.54 / 127.0);
        assert_eq!(q.codes[3], 127);
        assert_eq!(q.codes[1], -65);
        let back = dequantize(&q);
        for (x, y) in a.data().iter().zip(back.data()) {
            assert!((x - y).abs() <= q.scale / 2.0 + f64::EPSILON * 4.0);
        }
    }

    #[test]
    fn ties_round_to_even() {
        // scale = 7/7 = 1, so 0.5 -> 0, 1.5 -> 2, 2.5 -> 2, -2.5 -> -2.
        let a = Tensor::new(vec![5], vec![7.0, 0.5, 1.5, 2.5, -2.5]).unwrap();
        let q = quantize(&a, 4).unwrap();
        assert_eq!(q.codes, vec![7, 0, 2, 2, -2]);
    }

    #[test]
    fn distortion() {
        let a = sample();
        assert_eq!(relative_distortion(&a, &a), 0.0);
        let z = Tensor::<f64>::zeros(&[2, 3]);
        assert_eq!(relative_distortion(&a, &z), 1.0);
        assert_eq!(relative_distortion(&z, &z), 0.0);
    }

    #[test]
    fn config_json() {
        let c = DefenseConfig::gaussian(0.5, 7);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"mode":"gaussian","sigma":0.5,"seed":7}"#);
        assert_eq!(serde_json::from_str::<DefenseConfig>(&s).unwrap(), c);
        let q: DefenseConfig = serde_json::from_str(r#"{"mode":"quantize","bits":4}"#).unwrap();
        assert_eq!(q, DefenseConfig::quantize(4));
    }
}
