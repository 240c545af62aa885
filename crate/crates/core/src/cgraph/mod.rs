//! Complex-valued tensors with reverse-mode gradients.
//!
//! Each forward pass records onto a fresh [`Tape`]; [`Tape::backward`] returns
//! [`Gradients`] which callers fold into a [`ParamStore`].

pub mod conv;
pub mod fft;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use conv::ConvGeom;
pub use gradcheck::{finite_difference_check, FdEntry, FdOptions, FdReport};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{CustomOp, NodeId, Rect, Tape};
pub use tensor::{CTensor, C64};
