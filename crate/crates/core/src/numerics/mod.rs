//! Deterministic `f64` primitives with hand-written reverse-mode gradients.

mod gradcheck;
pub mod ops;
mod pca;
mod rng;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use ops::{cosine_sim, cross_entropy_temp, dot, l2_normalize, norm, softmax_temp};
pub use pca::{pca_project_2d, symmetric_eigen};
pub use rng::Rng;
pub use tensor::{Param, Tensor};
