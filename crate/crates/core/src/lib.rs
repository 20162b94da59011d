//! A register allocator that threads an abstract machine model through a small first-order
//! intermediate language.
//!
//! The pipeline is: [`uil::parse`] and [`uil::validate`] a program,
//! [`analysis::annotate`] it with ending sets and next-use positions, then
//! [`allocator::alloc_program`] it into [`machine::TargetProgram`]
//! instructions. The [`machine`] module runs both the source program and the
//! allocated code, so every allocation can be checked for equivalence and
//! measured for register-memory traffic.

pub mod allocator;
pub mod analysis;
pub mod cli;
pub mod gen;
pub mod machine;
pub mod model;
pub mod uil;
