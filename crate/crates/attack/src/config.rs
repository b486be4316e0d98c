use serde::{Deserialize, Serialize};

use crate::error::AttackError;

/// Hyperparameters of the white-box attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Weight of the vocabulary-proximity term.
    pub lambda: f64,
    /// Gradient-descent step size.
    pub lr: f64,
    pub iterations: usize,
    /// Embedding-nearest candidates per position.
    pub top_k: usize,
    /// Oracle-predicted candidates per position.
    pub top_y: usize,
    /// Softmax temperature of the relaxation baseline.
    pub temperature: f64,
    pub seed: u64,
    /// Token the attacker assumes at position 0, if any.
    pub bos: Option<u32>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            lr: 0.1,
            iterations: 2000,
            top_k: 10,
            top_y: 10,
            temperature: 1.0,
            seed: 0,
            bos: Some(0),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and > 0, got {}", self.lr));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.top_k + self.top_y == 0 {
            return bad("top_k + top_y must be >= 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be finite and > 0, got {}", self.temperature));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = AttackConfig::default();
        c.validate().unwrap();
        assert_eq!(
            (c.lambda, c.lr, c.iterations, c.top_k, c.top_y),
            (0.1, 0.1, 2000, 10, 10)
        );
    }

    #[test]
    fn rejects_invalid() {
        let base = AttackConfig::default();
        for c in [
            AttackConfig {
                lambda: -1.0,
                ..base.clone()
            },
            AttackConfig {
                lr: 0.0,
                ..base.clone()
            },
            AttackConfig {
                iterations: 0,
                ..base.clone()
            },
            AttackConfig {
                top_k: 0,
                top_y: 0,
                ..base.clone()
            },
            AttackConfig {
                temperature: 0.0,
                ..base.clone()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: AttackConfig = serde_json::from_str(r#"{"lambda": 0.5, "bos": null}"#).unwrap();
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.bos, None);
        assert_eq!(c.iterations, 2000);
    }
}
