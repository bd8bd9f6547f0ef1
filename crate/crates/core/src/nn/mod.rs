//! Deterministic numerical kernel: vectors, matrices, dense networks,
//! objectives, SGD and gradient checking.

pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod rng;
pub mod vector;

pub use gradcheck::{check_gradient, grad_check, relative_error, Parameterized};
pub use matrix::DenseMatrix;
pub use mlp::{Activation, DenseLayer, ForwardCache, MlpDocument, MlpGradients, MlpModel};
pub use rng::SeededRng;
pub use vector::{cosine_sim, l2_normalize, softmax, DenseVector};
