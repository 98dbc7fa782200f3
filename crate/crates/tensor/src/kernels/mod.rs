//! Tape-free forward kernels and their adjoints.

pub mod conv;
pub mod fft;
pub mod layout;
pub mod matmul;
pub mod reduce;
