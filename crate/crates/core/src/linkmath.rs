//! The stateless mathematical core shared by every association policy and by
//! the brute-force reference solver: minimum bandwidth, residual bandwidth,
//! uplink SINR, required transmit power and the association score.
//!
//! All quantities are linear (watts, Hz, bits/s, linear ratios).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tuning knobs shared by the association policies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    /// Association exponent weighting bandwidth against channel gain, in [0, 1].
    pub association_exponent: f64,
    /// Candidate stations whose SINR at the assigned allocation would fall
    /// below this floor are ineligible.
    pub sinr_floor_db: f64,
    /// Grid step for the semi-distributive bandwidth multiplier search.
    pub search_step: f64,
    /// Per-user power change below which the interference fixed point stops.
    pub power_tolerance_db: f64,
    pub max_power_iterations: usize,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            association_exponent: 0.5,
            sinr_floor_db: 0.0,
            search_step: 0.05,
            power_tolerance_db: 0.01,
            max_power_iterations: 100,
        }
    }
}

/// `2^(C/BW) - 1`: the SINR required to carry rate `C` over bandwidth `BW`.
///
/// Conventions for the degenerate corners: zero demand needs zero SINR, and a
/// positive demand over zero bandwidth is unreachable.
pub fn rate_factor(capacity_bps: f64, bandwidth_hz: f64) -> f64 {
    if capacity_bps <= 0.0 {
        0.0
    } else if bandwidth_hz <= 0.0 {
        f64::INFINITY
    } else {
        (capacity_bps / bandwidth_hz).exp2() - 1.0
    }
}

/// Shannon capacity `BW * log2(1 + sinr)` in bits/s.
pub fn capacity(bandwidth_hz: f64, sinr: f64) -> f64 {
    if bandwidth_hz <= 0.0 {
        0.0
    } else {
        bandwidth_hz * (1.0 + sinr).log2()
    }
}

/// Minimum bandwidth needed to carry `capacity_bps` at the SINR reached with
/// maximum transmit power. `None` marks an infeasible candidate (non-positive
/// or non-finite SINR with a positive demand).
pub fn min_bandwidth(capacity_bps: f64, sinr_at_max_power: f64) -> Option<f64> {
    if capacity_bps <= 0.0 {
        return Some(0.0);
    }
    if !(sinr_at_max_power > 0.0) || !sinr_at_max_power.is_finite() {
        return None;
    }
    Some(capacity_bps / (1.0 + sinr_at_max_power).log2())
}

/// Spectrum left at a station after the given allocations.
///
/// A materially negative result means an allocation invariant was broken
/// upstream, which is reported rather than clamped.
pub fn residual_bandwidth<I: IntoIterator<Item = f64>>(
    total_bandwidth_hz: f64,
    allocations_hz: I,
) -> Result<f64> {
    let allocated: f64 = allocations_hz.into_iter().sum();
    let residual = total_bandwidth_hz - allocated;
    if residual < -1e-9 * total_bandwidth_hz.max(1.0) {
        return Err(Error::Internal(format!(
            "allocations exceed total bandwidth: {allocated} > {total_bandwidth_hz}"
        )));
    }
    Ok(residual.max(0.0))
}

/// Uplink SINR of a transmission received through `signal_gain`, against a set
/// of interferers given as (transmit power W, gain to the serving station).
pub fn uplink_sinr(
    signal_tx_power_w: f64,
    signal_gain: f64,
    interferers: &[(f64, f64)],
    noise_w: f64,
) -> f64 {
    let interference: f64 = interferers.iter().map(|(p, g)| p * g).sum();
    signal_tx_power_w * signal_gain / (noise_w + interference)
}

/// Transmit power required to carry `capacity_bps` over `bandwidth_hz` against
/// the given interference-plus-noise, inverting the Shannon capacity exactly.
pub fn required_tx_power(
    capacity_bps: f64,
    bandwidth_hz: f64,
    interference_plus_noise_w: f64,
    composite_gain: f64,
) -> f64 {
    rate_factor(capacity_bps, bandwidth_hz) * interference_plus_noise_w / composite_gain
}

/// Association score combining the required-SINR factor with the inverse
/// channel gain; candidates are ranked by minimizing it.
pub fn association_score(
    capacity_bps: f64,
    bandwidth_hz: f64,
    composite_gain: f64,
    alpha: f64,
) -> f64 {
    rate_factor(capacity_bps, bandwidth_hz).powf(alpha)
        * composite_gain.recip().powf(1.0 - alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn min_bandwidth_examples() {
        assert_eq!(min_bandwidth(1000.0, 1.0), Some(1000.0));
        assert_eq!(min_bandwidth(2000.0, 3.0), Some(1000.0));
        // 1500 / log2(1.5), evaluated independently at high precision.
        let bw = min_bandwidth(1500.0, 0.5).unwrap();
        assert!((bw - 2564.266937027182).abs() < 1e-9);
        assert_eq!(min_bandwidth(1000.0, 0.0), None);
        assert_eq!(min_bandwidth(1000.0, -0.5), None);
        assert_eq!(min_bandwidth(1000.0, f64::INFINITY), None);
        assert_eq!(min_bandwidth(0.0, 0.0), Some(0.0));
    }

    #[test]
    fn residual_bandwidth_examples() {
        assert_eq!(residual_bandwidth(10e6, [3e6, 2e6]).unwrap(), 5e6);
        assert_eq!(residual_bandwidth(10e6, []).unwrap(), 10e6);
        assert_eq!(residual_bandwidth(10e6, [4e6, 6e6]).unwrap(), 0.0);
        assert!(residual_bandwidth(10e6, [9e6, 2e6]).is_err());
    }

    #[test]
    fn uplink_sinr_examples() {
        // No interferers: pure SNR. 1e-3 W through -70 dB gain over 1e-13 W
        // noise is 30 dB.
        let g = uplink_sinr(1e-3, 1e-7, &[], 1e-13);
        assert!((g - 1000.0).abs() < 1e-9);
        // One interferer with identical received power and negligible noise.
        let g = uplink_sinr(1e-3, 1e-7, &[(1e-3, 1e-7)], 1e-25);
        assert!((g - 1.0).abs() < 1e-9);
        // Mixed interferers match a direct summation.
        let interferers = [(2e-3, 1e-8), (5e-4, 3e-7), (1e-2, 2e-9)];
        let direct: f64 = interferers.iter().map(|(p, g)| p * g).sum();
        let g = uplink_sinr(1e-3, 1e-7, &interferers, 1e-13);
        assert!((g - 1e-10 / (1e-13 + direct)).abs() / g < 1e-12);
    }

    #[test]
    fn required_tx_power_examples() {
        // C/BW = 1: factor 2^1 - 1 = 1.
        let p = required_tx_power(1000.0, 1000.0, 1e-12, 1e-9);
        assert!((p - 1e-3).abs() < 1e-18);
        // Hand-evaluated (2^2 - 1) * 4e-13 / 1e-10 = 0.012 W = 10.79 dBm.
        let p = required_tx_power(2000.0, 1000.0, 4e-13, 1e-10);
        assert!((p - 0.012).abs() < 1e-15);
        assert!((crate::units::watts_to_dbm(p) - 10.791812460476249).abs() < 1e-9);
        // Infinite bandwidth needs no power.
        let p = required_tx_power(2000.0, f64::INFINITY, 4e-13, 1e-10);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn association_score_examples() {
        // alpha = 1: channel-independent.
        let s = association_score(1000.0, 500.0, 1e-8, 1.0);
        assert!((s - 3.0).abs() < 1e-12);
        // alpha = 0: bandwidth-independent.
        let s = association_score(1000.0, 500.0, 1e-8, 0.0);
        assert!((s - 1e8).abs() < 1e-4);
        // alpha = 0.5, C/BW = 1, g = 1e-8: sqrt(1e8) = 1e4.
        let s = association_score(1000.0, 1000.0, 1e-8, 0.5);
        assert!((s - 1e4).abs() < 1e-8);
    }

    proptest! {
        /// Inverting Eq. 4 through Eq. 5 and back reproduces the demand.
        #[test]
        fn capacity_power_round_trip(
            c in 1e-3f64..1e7,
            ratio in 1e-3f64..30.0,
            g_exp in -14.0f64..-2.0,
            n_exp in -18.0f64..-6.0,
        ) {
            let bw = c / ratio;
            let g = 10f64.powf(g_exp);
            let kni = 10f64.powf(n_exp);
            let p = required_tx_power(c, bw, kni, g);
            let sinr = p * g / kni;
            let achieved = capacity(bw, sinr);
            prop_assert!((achieved - c).abs() <= 1e-9 * c);
        }

        /// Minimum bandwidth decreases with SINR and is linear in demand.
        #[test]
        fn min_bandwidth_monotone(c in 1.0f64..1e6, s in 0.01f64..1e6) {
            let b = min_bandwidth(c, s).unwrap();
            let b_higher = min_bandwidth(c, s * 1.5).unwrap();
            prop_assert!(b_higher < b);
            let b_double = min_bandwidth(2.0 * c, s).unwrap();
            prop_assert!((b_double - 2.0 * b).abs() <= 1e-9 * b);
        }

        /// More bandwidth never costs more power (within the representable
        /// C/BW regime).
        #[test]
        fn required_power_monotone_in_bandwidth(
            c in 1.0f64..1e6,
            ratio in 1e-3f64..500.0,
            factor in 1.001f64..100.0,
        ) {
            let bw = c / ratio;
            let p1 = required_tx_power(c, bw, 1e-12, 1e-9);
            let p2 = required_tx_power(c, bw * factor, 1e-12, 1e-9);
            prop_assert!(p2 < p1);
        }

        /// Scaling every candidate's gain by a common factor scales all the
        /// scores by the same factor, leaving the argmin unchanged.
        #[test]
        fn score_argmin_invariant_under_gain_scaling(
            scale_exp in -3.0f64..3.0,
            gains in prop::collection::vec(1e-12f64..1e-4, 2..6),
            bws in prop::collection::vec(100.0f64..10000.0, 2..6),
        ) {
            let n = gains.len().min(bws.len());
            let scale = 10f64.powf(scale_exp);
            let score = |g: f64, bw: f64| association_score(1000.0, bw, g, 0.5);
            let argmin = |scores: &[f64]| {
                scores
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            let base: Vec<f64> = (0..n).map(|i| score(gains[i], bws[i])).collect();
            let scaled: Vec<f64> = (0..n).map(|i| score(gains[i] * scale, bws[i])).collect();
            prop_assert_eq!(argmin(&base), argmin(&scaled));
        }

        /// The score falls as the offered bandwidth grows (alpha > 0) and as
        /// the channel improves (alpha < 1).
        #[test]
        fn score_monotonicity(bw in 100.0f64..1e6, g in 1e-12f64..1e-4) {
            let s = association_score(1000.0, bw, g, 0.5);
            prop_assert!(association_score(1000.0, bw * 2.0, g, 0.5) < s);
            prop_assert!(association_score(1000.0, bw, g * 2.0, 0.5) < s);
        }
    }
}
