//! Minimal dense neural networks with hand-written gradients, an Adam
//! optimizer, a permutation-invariant set encoder, a Gaussian policy head,
//! and a binary checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod policy;
pub mod set_encoder;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dense::{Activation, DenseNet, ForwardCache};
pub use policy::GaussianPolicyHead;
pub use set_encoder::{set_encode, SetEncoder, SetEncoderCache};
