//! Echocardiography cine-loop classification toolkit: preprocessing, a
//! factorized (2+1)D residual classifier trained with a tape-based autodiff
//! engine, DeepLIFT attribution, exact t-SNE and confusion-matrix metrics.

pub mod autodiff;
pub mod dataset;
pub mod deeplift;
pub mod ect;
pub mod error;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod tsne;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
