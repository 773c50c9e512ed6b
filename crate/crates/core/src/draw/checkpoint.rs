use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DrawConfig;
use super::model::DrawModel;
use crate::container::{self, NamedArray};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tiles::Direction;

pub const CHECKPOINT_KIND: &str = "draw_checkpoint";

/// Provenance stored alongside the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: DrawConfig,
    pub seed: u64,
    pub direction: Option<Direction>,
    pub loss: Option<LossSpec>,
    /// Optimizer steps taken when the checkpoint was written.
    pub steps_trained: usize,
}

impl<S: Scalar> DrawModel<S> {
    pub fn save(
        &self,
        path: &Path,
        seed: u64,
        direction: Option<Direction>,
        loss: Option<&LossSpec>,
        steps_trained: usize,
    ) -> Result<()> {
        let meta = CheckpointMeta {
            config: self.config().clone(),
            seed,
            direction,
            loss: loss.cloned(),
            steps_trained,
        };
        let arrays: Vec<NamedArray> = self
            .slots()
            .iter()
            .zip(self.params())
            .map(|(slot, p)| NamedArray {
                name: slot.name().to_string(),
                shape: p.shape().to_vec(),
                data: p.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        container::write(path, CHECKPOINT_KIND, serde_json::to_value(&meta)?, &arrays)
    }

    /// Loads a checkpoint, checking every parameter's name and shape against
    /// the configuration recorded in its header.
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (header, arrays) = container::read(path, CHECKPOINT_KIND)?;
        let meta: CheckpointMeta = serde_json::from_value(header.meta)?;
        meta.config.validate()?;
        let slots = super::model::Slot::layout(&meta.config);
        if slots.len() != arrays.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} arrays, config needs {}",
                arrays.len(),
                slots.len()
            )));
        }
        let params = slots
            .iter()
            .zip(arrays)
            .map(|(slot, a)| {
                if a.name != slot.name() {
                    return Err(Error::Format(format!(
                        "expected array {}, found {}",
                        slot.name(),
                        a.name
                    )));
                }
                Tensor::new(a.shape, a.data.into_iter().map(S::of).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self::from_params(meta.config.clone(), params)?;
        Ok((model, meta))
    }
}
