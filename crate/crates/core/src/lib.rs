pub mod blocks;
pub mod cost;
pub mod error;
pub mod io;
pub mod models;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod vocab;
pub mod train;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
