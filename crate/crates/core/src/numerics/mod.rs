//! Dense-MLP numerics: forward/backward passes, losses, Adam, seeded RNG,
//! shared-covariance Gaussians and the parameter checkpoint format.

mod adam;
mod checkpoint;
mod dense;
mod gaussian;
mod loss;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, NamedNet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{Activation, Dense, DenseNet, LayerGrads, NetGrads, Trace};
pub use gaussian::{Pca2, SharedGaussian};
pub use loss::{gradients, sigmoid, softmax_rows, softplus, Loss};
pub use rng::{SeededRng, RNG_ALGORITHM};
