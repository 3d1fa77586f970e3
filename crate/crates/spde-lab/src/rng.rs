//! Counter-based Gaussian noise derivation.
//!
//! Every random quantity in the crate is a pure function of a master seed and
//! a small tuple of counters (domain, trajectory, step, mode). No generator
//! state is carried between draws, so ensembles can be evaluated in any order
//! and on any number of worker threads without changing a single bit of the
//! output.

/// Purpose tag, hashed into every key so that independent consumers of the
/// same master seed never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Wiener increments: counters are (trajectory, step, mode).
    NoiseIncrement = 1,
    /// Random spectral fields for norm and growth checks: (sample, mode, 0).
    FieldSampler = 2,
    /// Random grid fields for inequality suites: (trial, mode, extra).
    InequalitySampler = 3,
}

/// SplitMix64 finalizer; full-avalanche mixing of a single word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapses (seed, domain, a, b, c) into one well-mixed 64-bit key.
///
/// Each position is whitened with its own constant before entering the chain,
/// so permuting counter values never yields a colliding key family.
#[inline]
pub fn counter_key(seed: u64, domain: Domain, a: u64, b: u64, c: u64) -> u64 {
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ mix64(domain as u64 ^ 0xd1b5_4a32_d192_ed03));
    h = mix64(h ^ mix64(a ^ 0x8cb9_2ba7_2f3d_8dd7));
    h = mix64(h ^ mix64(b ^ 0x52dc_e729_2f8b_58d1));
    mix64(h ^ mix64(c ^ 0x9e6c_63d0_876a_8b03))
}

/// Maps a word to the open interval (0, 1); never returns 0 or 1 exactly.
#[inline]
pub fn to_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw addressed by (seed, domain, a, b, c).
///
/// Box-Muller on two decorrelated sub-keys of the counter key.
#[inline]
pub fn standard_normal(seed: u64, domain: Domain, a: u64, b: u64, c: u64) -> f64 {
    let k = counter_key(seed, domain, a, b, c);
    let u1 = to_unit(mix64(k ^ 0x6a09_e667_f3bc_c909));
    let u2 = to_unit(mix64(k ^ 0xbb67_ae85_84ca_a73b));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
