//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A forward pass registers leaves with [`Tape::param`] / [`Tape::constant`],
//! chains operations that each append one node, then calls
//! [`Tape::backward`] on a scalar to obtain [`Gradients`] for every leaf.
//!
//! ```
//! use genemeta::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
//! let x = tape.constant(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
//! let z = tape.matmul(w, x).unwrap();
//! let y = tape.sigmoid(z);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert!((grads.wrt(w).data()[0] - 0.25).abs() < 1e-15);
//! ```

mod kernels;
mod tape;
mod tensor;

pub use tape::{sigmoid, Gradients, Tape, Var, BCE_EPS, SIGMOID_MAX};
pub use tensor::Tensor;
