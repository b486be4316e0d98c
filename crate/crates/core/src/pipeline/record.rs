use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::defense::DefenseConfig;
use crate::error::PipelineError;
use crate::model::io::TensorContainer;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// An activation as it crossed the wire between two participants.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord<T: Real = f64> {
    /// `|x| × h` activation after `boundary` blocks (and the sender's defense).
    pub activation: Tensor<T>,
    pub boundary: usize,
    /// 1-based index of the sending participant.
    pub sender: usize,
    pub defense: DefenseConfig,
    /// `‖A' − A‖ / ‖A‖` introduced by the sender's defense.
    pub distortion: f64,
    pub prompt_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    boundary: usize,
    sender: usize,
    defense: DefenseConfig,
    distortion: f64,
    prompt_id: String,
    shape: Vec<usize>,
}

const TENSOR_NAME: &str = "activation";

impl<T: Real> ActivationRecord<T> {
    /// Prompt length, read off the activation's first dimension.
    pub fn prompt_len(&self) -> usize {
        self.activation.rows()
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<(), PipelineError> {
        let (bin, json) = paths(stem);
        TensorContainer {
            config: None,
            tensors: vec![(TENSOR_NAME.into(), self.activation.cast())],
        }
        .save(&bin)?;
        let side = Sidecar {
            boundary: self.boundary,
            sender: self.sender,
            defense: self.defense,
            distortion: self.distortion,
            prompt_id: self.prompt_id.clone(),
            shape: self.activation.shape().to_vec(),
        };
        std::fs::write(json, serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self, PipelineError> {
        let (bin, json) = paths(stem);
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(json)?)?;
        let container = TensorContainer::load(&bin)?;
        let t = container.get(TENSOR_NAME).ok_or_else(|| {
            crate::error::ModelError::Format(format!("no '{TENSOR_NAME}' tensor in {}", bin.display()))
        })?;
        if t.shape() != side.shape.as_slice() {
            return Err(crate::error::ModelError::Format(format!(
                "sidecar shape {:?} does not match tensor shape {:?}",
                side.shape,
                t.shape()
            ))
            .into());
        }
        Ok(Self {
            activation: t.cast(),
            boundary: side.boundary,
            sender: side.sender,
            defense: side.defense,
            distortion: side.distortion,
            prompt_id: side.prompt_id,
        })
    }
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}
