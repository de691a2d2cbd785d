//! Statistics of demodulated and simulated shift traces.

mod correlation;
mod linewidth;
mod montecarlo;
mod segments;

pub use correlation::*;
pub use linewidth::*;
pub use montecarlo::*;
pub use segments::*;
