//! Numerical laboratory for conservative SL(2,R) cocycles over periodic
//! orbits: fundamental-solution integration, dominated-splitting
//! diagnostics, the constructive perturbations that turn hyperbolic
//! periodic cocycles into elliptic ones, and extraction of such cocycles
//! from divergence-free 3D flows.

pub mod cocycle;
pub mod dichotomy;
pub mod flow3d;
pub mod perturb;
pub mod sampling;
pub mod scenario;
pub mod sl2;
pub mod splitting;
pub mod verify;
