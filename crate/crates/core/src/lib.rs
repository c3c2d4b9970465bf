//! Observability analysis of nonlinear systems with known and unknown inputs.

pub mod canonical;
pub mod error;
pub mod fullsolver;
pub mod liegeom;
pub mod symcore;
pub mod simcheck;
pub mod sysmodel;
pub mod uirecon;

pub use error::{Error, ParseError, Result};
