//! Minimal dense-tensor autodiff for small recommendation models.
//!
//! Everything is `f64` and row-major. A [`Tape`] records primitive
//! operations as they are evaluated; [`Tape::backward`] walks the record in
//! reverse and returns [`Gradients`] keyed by the [`ParamId`]s that were bound
//! onto the tape. Parameters live in a [`ParamStore`], which is also the unit
//! that [`Adam`] updates and that [`checkpoint`] serializes.
//!
//! ```
//! use autodiff::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let w = store.insert("w", Tensor::from_vec(vec![1, 2], vec![0.5, -1.0]).unwrap());
//!
//! let mut tape = Tape::new();
//! let wv = tape.param(&store, w);
//! let x = tape.constant(Tensor::from_vec(vec![2, 1], vec![2.0, 3.0]).unwrap());
//! let y = tape.matmul(wv, x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[2.0, 3.0]);
//! ```

mod adam;
pub mod checkpoint;
mod error;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::AutodiffError;
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{ParamId, ParamStore};
pub use tape::{AttentionMask, Gradients, Tape, Var, MASK_PENALTY};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, AutodiffError>;
