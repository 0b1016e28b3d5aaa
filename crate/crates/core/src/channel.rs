//! Link-budget evaluation: composite channel gain, antenna patterns,
//! log-normal shadowing, thermal noise and received-power ranking.
//!
//! Everything is computed in the linear domain; dB enters only through the
//! conversion helpers in [`crate::units`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::netmodel::{self, BaseStation, Position, Tier, Topology, UserEquipment};
use crate::units::{db_to_linear, dbm_to_watts, linear_to_db};

/// Propagation model parameters. Path loss is `a * d^-beta` (linear) per tier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelParams {
    pub carrier_frequency_hz: f64,
    /// Linear path loss constant for the macro tier.
    pub macro_pathloss_constant: f64,
    pub macro_pathloss_exponent: f64,
    pub small_pathloss_constant: f64,
    pub small_pathloss_exponent: f64,
    pub shadowing_sigma_macro_db: f64,
    pub shadowing_sigma_small_db: f64,
    pub indoor_penetration_loss_db: f64,
    pub thermal_noise_density_dbm_hz: f64,
    /// Distance floor preventing an unbounded d^-beta gain.
    pub min_distance_m: f64,
    pub macro_theta_3db_deg: f64,
    pub macro_max_attenuation_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        // Constants chosen so path loss at 1 km is 128.1 dB (macro) and
        // 140.7 dB (small) at 2 GHz: 10*log10(a) = 30*beta - ref_db.
        Self {
            carrier_frequency_hz: 2.0e9,
            macro_pathloss_constant: db_to_linear(30.0 * 3.76 - 128.1),
            macro_pathloss_exponent: 3.76,
            small_pathloss_constant: db_to_linear(30.0 * 3.67 - 140.7),
            small_pathloss_exponent: 3.67,
            shadowing_sigma_macro_db: 8.0,
            shadowing_sigma_small_db: 10.0,
            indoor_penetration_loss_db: 20.0,
            thermal_noise_density_dbm_hz: -174.0,
            min_distance_m: 10.0,
            macro_theta_3db_deg: 70.0,
            macro_max_attenuation_db: 25.0,
        }
    }
}

impl ChannelParams {
    fn pathloss_for(&self, tier: Tier) -> (f64, f64) {
        match tier {
            Tier::Macro => (self.macro_pathloss_constant, self.macro_pathloss_exponent),
            Tier::Small => (self.small_pathloss_constant, self.small_pathloss_exponent),
        }
    }
}

/// The factors of one user-to-station channel, all linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub ue_gain: f64,
    pub bs_gain: f64,
    pub shadowing: f64,
    pub pathloss: f64,
    pub composite_gain: f64,
}

/// Sector antenna gain towards a position, as a linear ratio.
///
/// Macro sectors follow the parabolic pattern
/// `G(theta) = G_peak - min(12 * (theta/theta_3dB)^2, A_max)` dB around the
/// boresight; small cells are omnidirectional at their peak gain.
pub fn sector_antenna_gain(bs: &BaseStation, ue_position: &Position, params: &ChannelParams) -> f64 {
    let gain_dbi = match bs.tier {
        Tier::Small => bs.antenna_gain_peak_dbi,
        Tier::Macro => {
            let azimuth = bs.sector_azimuth_deg.unwrap_or(0.0);
            let dx = ue_position.x_m - bs.site_position.x_m;
            let dy = ue_position.y_m - bs.site_position.y_m;
            let theta = if dx == 0.0 && dy == 0.0 {
                0.0
            } else {
                wrap_deg(dy.atan2(dx).to_degrees() - azimuth)
            };
            let rolloff = 12.0 * (theta / params.macro_theta_3db_deg).powi(2);
            bs.antenna_gain_peak_dbi - rolloff.min(params.macro_max_attenuation_db)
        }
    };
    db_to_linear(gain_dbi)
}

fn wrap_deg(mut a: f64) -> f64 {
    while a > 180.0 {
        a -= 360.0;
    }
    while a <= -180.0 {
        a += 360.0;
    }
    a
}

/// Draw one shadowing coefficient (linear). Log-normal with the tier's sigma;
/// indoor users additionally lose the penetration loss.
pub fn sample_shadowing<R: Rng>(
    tier: Tier,
    indoor: bool,
    params: &ChannelParams,
    rng: &mut R,
) -> f64 {
    let sigma = match tier {
        Tier::Macro => params.shadowing_sigma_macro_db,
        Tier::Small => params.shadowing_sigma_small_db,
    };
    let mut delta_db = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
    } else {
        0.0
    };
    if indoor {
        delta_db -= params.indoor_penetration_loss_db;
    }
    db_to_linear(delta_db)
}

/// Shadowing coefficients frozen for one drop: a dense (user, station) table,
/// sampled once in user-major order and immutable afterwards.
#[derive(Debug, Clone)]
pub struct ShadowTable {
    n_bs: usize,
    delta: Vec<f64>,
}

impl ShadowTable {
    pub fn sample<R: Rng>(topology: &Topology, params: &ChannelParams, rng: &mut R) -> Self {
        let n_bs = topology.base_stations.len();
        let mut delta = Vec::with_capacity(topology.users.len() * n_bs);
        for ue in &topology.users {
            for bs in &topology.base_stations {
                delta.push(sample_shadowing(bs.tier, ue.indoor, params, rng));
            }
        }
        Self { n_bs, delta }
    }

    /// Identity table (no shadowing), useful for deterministic fixtures.
    pub fn unit(n_users: usize, n_bs: usize) -> Self {
        Self {
            n_bs,
            delta: vec![1.0; n_users * n_bs],
        }
    }

    pub fn get(&self, user_idx: usize, bs_idx: usize) -> f64 {
        self.delta[user_idx * self.n_bs + bs_idx]
    }
}

/// Full link budget for one (user, station) pair. Indexes the shadow table by
/// the ids assigned during topology construction.
pub fn link_budget(
    ue: &UserEquipment,
    bs: &BaseStation,
    params: &ChannelParams,
    shadow: &ShadowTable,
) -> LinkBudget {
    let d = netmodel::distance(ue, bs, params.min_distance_m);
    let (a, beta) = params.pathloss_for(bs.tier);
    let ue_gain = db_to_linear(ue.antenna_gain_dbi);
    let bs_gain = sector_antenna_gain(bs, &ue.position, params);
    let shadowing = shadow.get(ue.id, bs.id);
    let pathloss = a * d.powf(-beta);
    LinkBudget {
        ue_gain,
        bs_gain,
        shadowing,
        pathloss,
        composite_gain: ue_gain * bs_gain * shadowing * pathloss,
    }
}

/// Thermal noise power in watts over `bandwidth_hz` at the given receiver
/// noise figure.
pub fn noise_power(bandwidth_hz: f64, noise_figure_db: f64, params: &ChannelParams) -> f64 {
    debug_assert!(bandwidth_hz > 0.0);
    let dbm = params.thermal_noise_density_dbm_hz + 10.0 * bandwidth_hz.log10() + noise_figure_db;
    dbm_to_watts(dbm)
}

/// Downlink-referenced received power in dBm, used purely for cell ranking.
pub fn rsrp(
    ue: &UserEquipment,
    bs: &BaseStation,
    params: &ChannelParams,
    shadow: &ShadowTable,
) -> f64 {
    bs.dl_tx_power_dbm + linear_to_db(link_budget(ue, bs, params, shadow).composite_gain)
}

/// Dense matrix of composite gains for one drop, indexed (user, station).
#[derive(Debug, Clone)]
pub struct GainTable {
    n_bs: usize,
    g: Vec<f64>,
}

impl GainTable {
    pub fn build(topology: &Topology, params: &ChannelParams, shadow: &ShadowTable) -> Self {
        let n_bs = topology.base_stations.len();
        let mut g = Vec::with_capacity(topology.users.len() * n_bs);
        for ue in &topology.users {
            for bs in &topology.base_stations {
                g.push(link_budget(ue, bs, params, shadow).composite_gain);
            }
        }
        Self { n_bs, g }
    }

    /// Wrap an explicit gain matrix (rows = users).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_bs = rows.first().map_or(0, Vec::len);
        let mut g = Vec::with_capacity(rows.len() * n_bs);
        for row in rows {
            assert_eq!(row.len(), n_bs, "ragged gain matrix");
            g.extend_from_slice(row);
        }
        Self { n_bs, g }
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    pub fn get(&self, user_idx: usize, bs_idx: usize) -> f64 {
        self.g[user_idx * self.n_bs + bs_idx]
    }
}
