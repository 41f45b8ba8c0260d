//! Per-thread operation counters.
//!
//! Every convolution, matrix product and channel scaling in [`crate::tensor`]
//! reports its nominal multiply-accumulate count here. [`measure`] scopes a
//! closure and returns what it executed, which is how the cost model is
//! cross-checked against real call sites.

use std::cell::Cell;
use std::ops::{Add, AddAssign};

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounts {
    pub conv_calls: u64,
    pub conv_macs: u64,
    pub matmul_macs: u64,
    /// Output-channel scaling of kernels (the fold).
    pub kernel_scale_macs: u64,
    /// Per-channel scaling of activations (branch weighting).
    pub channel_scale_macs: u64,
}

impl OpCounts {
    pub fn total_macs(&self) -> u64 {
        self.conv_macs + self.matmul_macs + self.kernel_scale_macs + self.channel_scale_macs
    }
}

impl Add for OpCounts {
    type Output = OpCounts;

    fn add(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            conv_calls: self.conv_calls + rhs.conv_calls,
            conv_macs: self.conv_macs + rhs.conv_macs,
            matmul_macs: self.matmul_macs + rhs.matmul_macs,
            kernel_scale_macs: self.kernel_scale_macs + rhs.kernel_scale_macs,
            channel_scale_macs: self.channel_scale_macs + rhs.channel_scale_macs,
        }
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: OpCounts) {
        *self = *self + rhs;
    }
}

thread_local! {
    static COUNTS: Cell<OpCounts> = Cell::new(OpCounts::default());
}

fn bump(f: impl FnOnce(&mut OpCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

pub(crate) fn record_conv(macs: u64) {
    bump(|c| {
        c.conv_calls += 1;
        c.conv_macs += macs;
    });
}

pub(crate) fn record_matmul(macs: u64) {
    bump(|c| c.matmul_macs += macs);
}

pub(crate) fn record_kernel_scale(macs: u64) {
    bump(|c| c.kernel_scale_macs += macs);
}

pub(crate) fn record_channel_scale(macs: u64) {
    bump(|c| c.channel_scale_macs += macs);
}

/// Runs `f` and returns the operations it performed on this thread.
/// Nested calls are supported; the outer scope still sees the inner work.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, OpCounts) {
    let outer = COUNTS.with(|c| c.replace(OpCounts::default()));
    let out = f();
    let inner = COUNTS.with(|c| c.get());
    COUNTS.with(|c| c.set(outer + inner));
    (out, inner)
}
