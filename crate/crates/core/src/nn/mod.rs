//! Small dense-network stack: MLPs with reverse-mode gradients and Adam.

mod adam;
mod mlp;

pub use adam::Adam;
pub use mlp::{
    softmax_rows, Activation, Backward, Dense, ForwardCache, Gradients, LayerGrad, Mlp, MlpSpec,
};
