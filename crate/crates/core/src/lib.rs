//! Diffusion across irregular membranes: partially reflected Brownian motion
//! and the Robin boundary-value problem on prefractal planar domains.
//!
//! * [`geometry`] builds prefractal polygons and answers distance/containment queries.
//! * [`walk`] samples partially reflected walks (walk-on-spheres in the bulk).
//! * [`fd`] solves the Robin problem on grid-aligned domains and evaluates the flux.
//! * [`measure`] bins boundary hits and fits finite-scale dimensions.
//! * [`experiments`] runs permeability, generation and dimension studies.
//! * [`io`] reads and writes the geometry, CSV and JSON file formats.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod fd;
pub mod measure;
pub mod numeric;
pub mod walk;

pub use error::{Error, Result};
