//! Day-ahead scheduling of an aggregated EV fleet under a commercial tariff
//! and California demand response products.

pub mod fleet;
pub mod grid;
pub mod ingestion;
pub mod markets;
pub mod problems;
pub mod stats;
pub mod synth;
pub mod tariff;

/// Feasibility tolerance for envelope and schedule checks (kW, kWh).
pub const EPS_FEAS: f64 = 1e-6;
