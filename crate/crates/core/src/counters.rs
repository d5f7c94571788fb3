//! Operation counters for checking which pipeline stages actually ran.
//!
//! Counting is only active in builds with debug assertions; release builds
//! compile the increments away and every counter reads zero.

use std::sync::atomic::{AtomicU64, Ordering};

static PROJECTIONS: AtomicU64 = AtomicU64::new(0);
static QUANTIZATIONS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    /// Pixel-depth to ego unprojections.
    pub projections: u64,
    /// Point to BEV cell quantizations.
    pub quantizations: u64,
}

impl OpCounts {
    pub fn since(&self, earlier: &OpCounts) -> OpCounts {
        OpCounts {
            projections: self.projections - earlier.projections,
            quantizations: self.quantizations - earlier.quantizations,
        }
    }
}

pub fn snapshot() -> OpCounts {
    OpCounts {
        projections: PROJECTIONS.load(Ordering::Relaxed),
        quantizations: QUANTIZATIONS.load(Ordering::Relaxed),
    }
}

/// True when this build records counts.
pub const fn enabled() -> bool {
    cfg!(debug_assertions)
}

#[inline]
pub(crate) fn add_projections(n: u64) {
    if enabled() {
        PROJECTIONS.fetch_add(n, Ordering::Relaxed);
    }
}

#[inline]
pub(crate) fn add_quantizations(n: u64) {
    if enabled() {
        QUANTIZATIONS.fetch_add(n, Ordering::Relaxed);
    }
}
