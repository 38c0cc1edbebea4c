//! Bidirectional attentive graph convolutional network (BAGCN) for
//! skeleton-based action recognition.

pub mod ablation;
pub mod attention;
pub mod autodiff;
pub mod block;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod focus;
pub mod gradcheck;
pub mod init;
pub mod model;
pub mod nn;
pub mod skeleton;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, Mode, Var};
pub use error::{Error, Result};
pub use tensor::{ParamId, ParamStore, Parameter, Tensor};
