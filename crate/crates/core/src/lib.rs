//! Nonlinear two-scale finite elements (FE-HMM) for hyperelastic
//! homogenization in plane strain.
//!
//! A macro mesh is solved with stiffness and stress obtained from micro
//! sampling domains (RVEs) attached to each macro quadrature point. Two
//! coupled Newton schemes are provided: a nested scheme that fully
//! converges every micro problem per macro iteration, and an alternating
//! scheme that performs a single micro iteration per macro iteration.
//!
//! ```no_run
//! use fehmm::{mesh, material, two_scale};
//! # fn main() -> fehmm::Result<()> {
//! let grid = mesh::PhaseGrid::new(2, 2, vec![1, 2, 2, 1])?;
//! let mut micro = mesh::mesh_from_phase_grid(&grid, 500.0, mesh::ElementKind::Quad4)?;
//! for _ in 0..3 {
//!     micro = mesh::refine_uniform(&micro)?;
//! }
//! let [p1, p2] = material::benchmark_phases();
//! let mat = material::MaterialMap::new(material::MaterialLaw::NeoHookean, p1, p2);
//! let problem = two_scale::MacroProblem::cantilever_force(5000.0, 1000.0, 100.0, 5, 1, 200.0)?;
//! let config = two_scale::SolverConfig::default();
//! let (state, trace) = two_scale::solve(&problem, micro, mat, &config)?;
//! println!("u_max = {}", two_scale::max_nodal_displacement(&state));
//! # let _ = trace; Ok(()) }
//! ```

pub mod error;
pub mod fem;
pub mod linalg;
pub mod material;
pub mod mesh;
pub mod micro;
pub mod two_scale;
pub mod verify;

pub use error::{Error, Result};
