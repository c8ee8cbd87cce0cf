#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Numerical laboratory for elliptic equations with a Hardy potential singular
//! on a boundary submanifold: kernel estimates, weighted potentials,
//! capacities, fixed-point solvers and barrier checks on model balls.

pub mod barrier;
pub mod capacity;
pub mod cloud;
pub mod config;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod measure;
pub mod numerics;
pub mod operators;
pub mod polar;
pub mod rayleigh;
pub mod report;
pub mod scan;
pub mod scenarios;
pub mod solvers;
pub mod structure;

pub use error::{Error, Result};
pub use geometry::{alpha_pm, CriticalExponents, DomainModel, SpectralParams, WeightSpec};
pub use kernels::{Kernel, KernelSpec, KernelVariant, SiteGeom};
