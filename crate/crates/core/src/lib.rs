//! Discontinuous virtual element discretisation of a scalar elliptic
//! variational inequality with Tresca-type friction on part of the boundary.

pub mod mesh;
pub mod quadrature;
pub mod vem_local;
pub mod linalg;
pub mod dg_forms;
pub mod vi_solver;
pub mod analysis;
pub mod experiment;
