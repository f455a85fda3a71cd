//! Ricci flow on rotationally symmetric n-spheres with audits of diameter, volume and
//! non-collapsing inequalities along the flow.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod constants;
pub mod distance;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod heat;
pub mod profile;
pub mod report;
pub mod scenario;
mod stencil;

pub use error::{Error, Result};
pub use profile::{validate_profile, DumbbellSpec, Profile, Violation};
