//! Optimal stopping over split stopping times and reflected BSDEs on finite
//! filtered probability spaces.
//!
//! Everything runs on an explicit event tree: processes carry a value just
//! before each time and a value at it, value processes are obtained by backward
//! recursion, and (doubly) reflected BSDEs are solved through the value
//! process of a shifted obstacle.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod drbsde;
pub mod error;
pub mod laglad;
pub mod martrep;
pub mod probspace;
pub mod rbsde;
pub mod snell;
pub mod splitstop;

pub use error::{Error, Result};
pub use laglad::{make_process, LadlagProcess};
pub use probspace::{build_space, FiniteFilteredSpace, NodeId, Transition, TreeSpec};
pub use splitstop::SplitStoppingTime;
