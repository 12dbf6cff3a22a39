//! Full-scale reference values.
//!
//! The empirical figures come from a proprietary daily price panel (1202
//! US equities after cleaning) and cannot be reproduced here. They are kept
//! for reports and comparison tables only; nothing in the library asserts
//! them.

/// Selected component count on the empirical panel.
pub const EMPIRICAL_M_STAR: usize = 15;
/// MP outlier count of the detrended empirical spectrum.
pub const EMPIRICAL_M_MAX: usize = 35;
/// Fitted MP ratio on the empirical spectrum.
pub const EMPIRICAL_Q: f64 = 0.41;
/// Assets left after cleaning with `p = 0.9`, out of 1270.
pub const EMPIRICAL_ASSETS: (usize, usize) = (1202, 1270);
/// 70% / 90% cumulative-variance cutoffs on the empirical panel.
pub const EMPIRICAL_CUMVAR: (usize, usize) = (13, 27);
/// PRESS minimizer on the empirical panel.
pub const EMPIRICAL_PRESS: usize = 28;

/// Synthetic market at N = 1200, T = 4000, K = 30.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticReference {
    pub m_star: usize,
    pub m_max: usize,
    pub cumvar: (usize, usize),
    pub press: usize,
}

pub const HOMOGENEOUS: SyntheticReference = SyntheticReference {
    m_star: 19,
    m_max: 30,
    cumvar: (12, 22),
    press: 29,
};

pub const HETEROGENEOUS: SyntheticReference = SyntheticReference {
    m_star: 12,
    m_max: 28,
    cumvar: (7, 17),
    press: 25,
};

/// Wall-clock seconds (memory-based, PRESS) on the homogeneous full-scale market.
pub const TIMING_SECONDS: (f64, f64) = (138.6, 1136.8);
