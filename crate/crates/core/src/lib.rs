//! Neighbour-tile texture synthesis with recurrent variational autoencoders.
//!
//! The core is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`, which is what training and checkpoints use.

pub mod container;
pub mod draw;
pub mod error;
pub mod filterbank;
pub mod gradcheck;
pub mod imageio;
pub mod losses;
pub mod scalar;
pub mod seed;
pub mod synthesis;
pub mod tensor;
pub mod texton;
pub mod tiles;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type FilterBank = filterbank::FilterBank<f64>;
pub type DrawModel = draw::DrawModel<f64>;
pub type TextureImage = tiles::TextureImage<f64>;
pub type TileQuintet = tiles::TileQuintet<f64>;
pub type TileGrid = synthesis::TileGrid<f64>;
pub type DirectionModels = synthesis::DirectionModels<f64>;
pub type TrainingSet = trainer::TrainingSet<f64>;
