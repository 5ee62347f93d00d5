//! Shared fixtures for the benchmarks.

use sticky_mfg::{FirmType, MarketParams};

pub fn market() -> MarketParams {
    MarketParams { alpha: 0.8, beta: 2.0, rho: 0.5, p0: 1.2, x0: 0.9 }
}

pub fn firm() -> FirmType {
    FirmType { mu: 1.0, sigma: 0.5, gamma: 0.5, lambda: 0.5, r: 0.5, c: 0.4 }
}
