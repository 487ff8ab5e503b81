//! Double-EIT simulator for a four-level tripod atom: steady-state spectra,
//! slow-light propagation, light storage and parameter fitting.

pub mod config;
pub mod experiments;
pub mod fitting;
pub mod liouvillian;
pub mod maxwell_bloch;
pub mod params;
pub mod quadrature;
pub mod response;
pub mod units;

pub use num_complex::Complex64 as C64;
