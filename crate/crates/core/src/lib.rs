//! Single-particle quantum wire: tight-binding lattice dynamics, Gaussian
//! wavepacket encoding, the transmission protocol's error analysis and an
//! exact many-body oracle for small lattices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod error;
pub mod fock;
pub mod lattice;
pub mod protocol;
pub mod wavepacket;

pub use error::{Result, WireError};
