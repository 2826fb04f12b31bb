//! Lyapunov certificates for continuous-time optimization flows.
//!
//! Worst-case questions about gradient flows, damped oscillators and SDE
//! models of SGD are posed as small semidefinite programs built from
//! interpolation inequalities, then solved, bisected, verified on time
//! grids, and cross-checked by simulation.

pub mod analysis;
pub mod bounds;
pub mod lmi;
pub mod model;
pub mod solver;
pub mod worst_case;
pub mod numerics;
pub mod simulate;
