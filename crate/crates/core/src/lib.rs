//! Simulation and analysis of an NV center dipole-coupled to a single
//! substitutional-nitrogen electron spin: spin Hamiltonian and level
//! structure, rate-equation polarization dynamics, ESR and pump–probe
//! measurement drivers, and the fits used to read them out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod experiments;
pub mod fitting;
pub mod hamiltonian;
pub mod io;
pub mod spin;
pub mod sweep;
