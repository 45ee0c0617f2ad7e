//! Laplacian-filtered quasi-Helmholtz decompositions and EFIE preconditioners
//! on closed triangle meshes.
//!
//! Start with [`mesh::resolve_mesh`] and [`mesh::build_basis_topology`], then
//! [`efie::assemble_operators`], [`precond::PrecondContext`] and
//! [`analysis::Formulation::bundle`]. The `book/` directory walks through the
//! same path with runnable examples.

pub mod analysis;
pub mod cli;
pub mod efie;
pub mod error;
pub mod filters;
pub mod geom;
pub mod linalg;
pub mod mesh;
pub mod precond;
pub mod qhd;
pub mod quadrature;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/meshes.md")]
    mod meshes {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    mod decomposition {}
    #[doc = include_str!("../../../book/src/filters.md")]
    mod filters {}
    #[doc = include_str!("../../../book/src/efie.md")]
    mod efie {}
    #[doc = include_str!("../../../book/src/preconditioners.md")]
    mod preconditioners {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
