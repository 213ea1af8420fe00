//! Binary vision-transformer machinery: bit-packed XNOR/AND-popcount kernels,
//! softmax-aware attention binarization (coordinate descent plus the max-based
//! threshold approximation), straight-through gradient rules, a tiny deterministic
//! ViT with staged binarization, an analytic BOPs/FLOPs cost model, and a
//! bit-exact tensor file format.

pub mod attention;
pub mod backward;
pub mod binarizer;
pub mod bitpack;
pub mod error;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod par;
pub mod sab;
pub mod synth;

pub use error::{BivitError, Result};
pub use matrix::Matrix;
