//! memsim: a desk-scale transient simulator and analysis toolkit for
//! memristor-based analog circuits.
//!
//! The crate covers the full loop from a SPICE-flavored netlist to measured
//! results:
//!
//! - [`device`]: the dopant-drift memristor model with the Biolek window
//!   and a closed-form linear-drift oracle;
//! - [`netlist`]: the tiny netlist dialect, parser, and serializer;
//! - [`engine`]: MNA stamping, dense LU, and the fixed-step transient loop;
//! - [`analysis`]: the oscillator design math (characteristic cubic, ratio
//!   gain, frequency formulas, state matrix) plus FFT-based measurements;
//! - [`circuits`]: builders for the phase-shift oscillator, integrator, and
//!   differentiator demo circuits;
//! - [`waveform`]: the uniformly sampled record and its CSV form.

pub mod analysis;
pub mod circuits;
pub mod device;
pub mod engine;
pub mod netlist;
pub mod waveform;

pub use engine::{operating_point, transient_run, Method, SimConfig};
pub use netlist::{parse, serialize, Netlist};
pub use waveform::Waveform;
