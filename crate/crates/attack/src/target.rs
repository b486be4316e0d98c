use pia_core::model::{AdapterSet, Model, TokenSequence};
use pia_core::{Graph, Real, Tensor, Var};

use crate::error::AttackError;

/// The function the attacker inverts: the first `boundary` blocks of a
/// model, optionally with LoRA adapters.
#[derive(Debug, Clone, Copy)]
pub struct Target<'m, T: Real = f64> {
    pub model: &'m Model<T>,
    pub boundary: usize,
    pub adapters: Option<&'m AdapterSet<T>>,
}

impl<'m, T: Real> Target<'m, T> {
    pub fn new(model: &'m Model<T>, boundary: usize) -> Result<Self, AttackError> {
        if boundary > model.num_layers() {
            return Err(AttackError::Config(format!(
                "boundary {boundary} exceeds {} layers",
                model.num_layers()
            )));
        }
        Ok(Self {
            model,
            boundary,
            adapters: None,
        })
    }

    pub fn with_adapters(mut self, adapters: &'m AdapterSet<T>) -> Self {
        self.adapters = Some(adapters);
        self
    }

    /// Validates `a` and returns the prompt length it implies.
    pub fn prompt_len(&self, a: &Tensor<T>) -> Result<usize, AttackError> {
        let h = self.model.hidden();
        if a.shape().len() != 2 || a.cols() != h || a.rows() == 0 {
            return Err(AttackError::Activation {
                got: a.shape().first().copied().unwrap_or(0),
                width: a.shape().get(1).copied().unwrap_or(0),
                expected: h,
            });
        }
        if a.rows() > self.model.config().max_seq_len {
            return Err(pia_core::ModelError::SequenceLength {
                len: a.rows(),
                max: self.model.config().max_seq_len,
            }
            .into());
        }
        Ok(a.rows())
    }

    /// `F(u + P)` for token-space rows `u`.
    pub fn forward_embedding(&self, u: &Tensor<T>) -> Result<Tensor<T>, AttackError> {
        let v = u.add(&self.model.positions(u.rows())?)?;
        Ok(self.model.forward_to(&v, self.boundary, self.adapters)?)
    }

    pub fn forward_tokens(&self, x: &TokenSequence) -> Result<Tensor<T>, AttackError> {
        Ok(self.model.hidden_states(x, self.boundary, self.adapters)?)
    }

    /// `‖F(E(x)) − A‖²`.
    pub fn activation_loss(&self, x: &TokenSequence, a: &Tensor<T>) -> Result<f64, AttackError> {
        Ok(self.forward_tokens(x)?.sub(a)?.l2_norm_sq().as_f64())
    }

    /// Records `F(v + P)` onto `g` for a model-input-space node `v_tok`
    /// holding token-space rows.
    pub(crate) fn record(&self, g: &mut Graph<T>, v_tok: Var) -> Result<Var, AttackError> {
        let len = g.value(v_tok).rows();
        let pos = g.constant(self.model.positions(len)?);
        let v = g.add(v_tok, pos)?;
        let ads = self.adapters.map(|a| a.register(g, false));
        Ok(self.model.forward_to_graph(g, v, self.boundary, ads.as_ref())?)
    }
}
