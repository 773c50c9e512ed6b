//! Direction-conditioned DRAW: a recurrent variational auto-encoder that
//! reads a centre tile, samples a latent code per step and additively
//! writes a canvas whose sigmoid is the predicted neighbour tile.

mod attention;
mod checkpoint;
mod config;
mod model;

pub use attention::AttentionWindow;
pub use checkpoint::{CheckpointMeta, CHECKPOINT_KIND};
pub use config::{Attention, DrawConfig};
pub use model::{lstm_step, sample_latent, DrawModel, DrawPass, LstmState, Slot};
