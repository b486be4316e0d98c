//! In-process simulation of collaborative (pipeline-parallel) inference.
//!
//! Participants exchange [`Message`]s; each computes its contiguous layer
//! range on whatever it received, applies its own defense, and forwards the
//! result. A designated attacker keeps a verbatim copy of its input.

mod defense;
mod partition;
mod record;

use std::ops::RangeInclusive;

pub use defense::{apply_gaussian, dequantize, quantize, relative_distortion, Defense, DefenseConfig, Quantized};
pub use partition::{plan_partition, PartitionPlan};
pub use record::ActivationRecord;

use crate::error::PipelineError;
use crate::model::{AdapterSet, Model, TokenSequence};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub enum Message<T: Real = f64> {
    Prompt { tokens: TokenSequence, prompt_id: String },
    Activation(ActivationRecord<T>),
}

/// One simulated participant holding a contiguous slice of the model.
pub struct Participant<'m, T: Real = f64> {
    index: usize,
    layers: RangeInclusive<usize>,
    model: &'m Model<T>,
    adapters: Option<&'m AdapterSet<T>>,
    defense: DefenseConfig,
    curious: bool,
    received: Vec<ActivationRecord<T>>,
}

impl<'m, T: Real> Participant<'m, T> {
    pub fn new(
        index: usize,
        layers: RangeInclusive<usize>,
        model: &'m Model<T>,
        adapters: Option<&'m AdapterSet<T>>,
        defense: DefenseConfig,
    ) -> Result<Self, PipelineError> {
        defense.validate()?;
        Ok(Self {
            index,
            layers,
            model,
            adapters,
            defense,
            curious: false,
            received: Vec::new(),
        })
    }

    /// Makes this participant keep copies of the activations it receives.
    pub fn record_inputs(mut self) -> Self {
        self.curious = true;
        self
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn received(&self) -> &[ActivationRecord<T>] {
        &self.received
    }

    /// Computes this participant's layers and returns the (defended) output
    /// to transmit.
    pub fn handle(&mut self, msg: Message<T>) -> Result<ActivationRecord<T>, PipelineError> {
        let (input, prompt_id) = match msg {
            Message::Prompt { tokens, prompt_id } => (self.model.embed(&tokens)?, prompt_id),
            Message::Activation(rec) => {
                let input = rec.activation.clone();
                let id = rec.prompt_id.clone();
                if self.curious {
                    self.received.push(rec);
                }
                (input, id)
            }
        };
        let out = self.model.forward_layers(&input, self.layers.clone(), self.adapters)?;
        let sent = self.defense.apply(&out, self.index as u64)?;
        let distortion = relative_distortion(&out, &sent);
        Ok(ActivationRecord {
            activation: sent,
            boundary: *self.layers.end(),
            sender: self.index,
            defense: self.defense,
            distortion,
            prompt_id,
        })
    }
}

/// Result of one inference run.
#[derive(Debug, Clone)]
pub struct InferenceTrace<T: Real = f64> {
    /// What each participant `2..=n` received, in order.
    pub boundary_records: Vec<ActivationRecord<T>>,
    /// The attacker's verbatim copy of its input, if the plan has an attacker.
    pub attacker_record: Option<ActivationRecord<T>>,
    /// Output of the last layer (before the final norm).
    pub output: Tensor<T>,
}

/// Model, partition, per-participant defenses, and optional adapters.
pub struct Pipeline<'m, T: Real = f64> {
    model: &'m Model<T>,
    plan: PartitionPlan,
    defenses: Vec<DefenseConfig>,
    adapters: Option<&'m AdapterSet<T>>,
}

impl<'m, T: Real> Pipeline<'m, T> {
    /// `defenses` holds one entry per participant, or a single entry shared
    /// by all.
    pub fn new(model: &'m Model<T>, plan: PartitionPlan, defenses: &[DefenseConfig]) -> Result<Self, PipelineError> {
        if plan.layers() != model.num_layers() {
            return Err(PipelineError::Partition {
                layers: model.num_layers(),
                participants: plan.participants(),
            });
        }
        let n = plan.participants();
        let defenses = match defenses.len() {
            0 => vec![DefenseConfig::none(); n],
            1 => vec![defenses[0]; n],
            k if k == n => defenses.to_vec(),
            k => {
                return Err(PipelineError::Defense(format!(
                    "{k} defense configs for {n} participants"
                )))
            }
        };
        for d in &defenses {
            d.validate()?;
        }
        Ok(Self {
            model,
            plan,
            defenses,
            adapters: None,
        })
    }

    pub fn with_adapters(mut self, adapters: &'m AdapterSet<T>) -> Self {
        self.adapters = Some(adapters);
        self
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn run(&self, x: &TokenSequence, prompt_id: &str) -> Result<InferenceTrace<T>, PipelineError> {
        let mut participants = self
            .plan
            .ranges()
            .enumerate()
            .map(|(i, r)| {
                let p = Participant::new(i + 1, r, self.model, self.adapters, self.defenses[i])?;
                Ok(if self.plan.attacker() == Some(i + 1) {
                    p.record_inputs()
                } else {
                    p
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let mut msg = Message::Prompt {
            tokens: x.clone(),
            prompt_id: prompt_id.to_owned(),
        };
        let mut boundary_records = Vec::with_capacity(participants.len().saturating_sub(1));
        let last = participants.len() - 1;
        let mut output = None;
        for (i, p) in participants.iter_mut().enumerate() {
            let sent = p.handle(msg)?;
            if i == last {
                output = Some(sent.activation);
                break;
            }
            boundary_records.push(sent.clone());
            msg = Message::Activation(sent);
        }
        let attacker_record = self
            .plan
            .attacker()
            .and_then(|a| participants[a - 1].received().first().cloned());
        Ok(InferenceTrace {
            boundary_records,
            attacker_record,
            output: output.expect("at least one participant"),
        })
    }
}

/// One-shot convenience over [`Pipeline`].
pub fn run_inference<T: Real>(
    model: &Model<T>,
    x: &TokenSequence,
    plan: &PartitionPlan,
    defenses: &[DefenseConfig],
    prompt_id: &str,
) -> Result<InferenceTrace<T>, PipelineError> {
    Pipeline::new(model, plan.clone(), defenses)?.run(x, prompt_id)
}
