//! Lightweight Swin-Transformer super-resolution: MSwinSR and UGSwinSR on
//! top of a small reverse-mode autodiff tensor library, with complexity
//! accounting, a degradation and metrics pipeline and training loops.

pub mod attention;
pub mod complexity;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mswinsr;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod ugswinsr;
pub mod workflow;

pub use config::{ModelKind, RunConfig};
pub use error::{Error, Result};
pub use mswinsr::{MswinConfig, MswinSr, SrModel};
pub use params::{Init, ParamBuilder, ParamId, ParamStore};
pub use tensor::{Precision, Scalar, Tensor};
pub use ugswinsr::{Discriminator, Generator, UgswinConfig};
