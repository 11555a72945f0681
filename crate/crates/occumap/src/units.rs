//! Power-unit conversions. Internally everything is linear Watts; dBm
//! appears only at I/O boundaries and in interpolation baselines.

/// Convert a power in dBm to linear Watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert a power in linear Watts to dBm.
///
/// Zero or negative power is clamped to a floor of 1e-30 W (-270 dBm) so
/// the logarithm is always defined.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.max(1e-30).log10() + 30.0
}

/// Threshold-to-noise ratio in dB; `+inf` when the noise power is zero.
pub fn tnr_db(tau_w: f64, noise_w: f64) -> f64 {
    if noise_w <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (tau_w / noise_w).log10()
    }
}
