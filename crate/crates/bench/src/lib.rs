//! Fixtures shared by the forward-pass benchmarks.

use drpn_core::cost::random_input;
use drpn_core::{DrpnLayer, Result, Tensor4};

/// Layer and input shapes compared by the benchmarks: `(channels, extent)`.
pub const CASES: [(usize, usize); 3] = [(8, 32), (16, 64), (32, 64)];

/// Square layer (shortcut present) with a matching single-sample input.
pub fn fixture(channels: usize, extent: usize, seed: u64) -> Result<(DrpnLayer, Tensor4)> {
    let layer = DrpnLayer::seeded(channels, channels, seed)?;
    Ok((layer, random_input((1, channels, extent, extent), seed ^ 0x9e37_79b9)))
}
