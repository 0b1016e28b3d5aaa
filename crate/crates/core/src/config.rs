//! Resolved simulation configuration: defaults, JSON ingestion, validation
//! and derived parameter bundles for the other modules.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assoc::AssocConfig;
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::linkmath::AlgorithmConfig;
use crate::netmodel::{BsAttributes, UeAttributes};
use crate::units::db_to_linear;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub topology: TopologySection,
    pub channel: ChannelSection,
    pub algorithm: AlgorithmSection,
    pub simulation: SimulationSection,
    pub output: OutputSection,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            topology: TopologySection::default(),
            channel: ChannelSection::default(),
            algorithm: AlgorithmSection::default(),
            simulation: SimulationSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub isd_m: f64,
    pub macro_sites: usize,
    pub sectors_per_site: usize,
    pub small_per_sector: usize,
    pub users_per_sector: usize,
    pub hotspot_fraction: f64,
    pub hotspot_radius_m: f64,
    pub indoor_ratio: f64,
    pub max_capacity_bps: f64,
    pub system_bandwidth_hz: f64,
    pub min_small_macro_separation_m: f64,
    pub min_small_small_separation_m: f64,
    pub placement_max_retries: usize,
    pub macro_height_m: f64,
    pub small_height_m: f64,
    pub ue_height_m: f64,
    pub ue_max_tx_power_dbm: f64,
    pub ue_antenna_gain_dbi: f64,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            isd_m: 500.0,
            macro_sites: 7,
            sectors_per_site: 3,
            small_per_sector: 1,
            users_per_sector: 25,
            hotspot_fraction: 2.0 / 3.0,
            hotspot_radius_m: 40.0,
            indoor_ratio: 0.8,
            max_capacity_bps: 2000.0,
            system_bandwidth_hz: 10e6,
            min_small_macro_separation_m: 75.0,
            min_small_small_separation_m: 40.0,
            placement_max_retries: 1000,
            macro_height_m: 25.0,
            small_height_m: 10.0,
            ue_height_m: 1.5,
            ue_max_tx_power_dbm: 20.0,
            ue_antenna_gain_dbi: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub carrier_frequency_hz: f64,
    /// Path loss in dB at 1 km; combines with the exponent into the linear
    /// path loss constant.
    pub macro_pathloss_ref_db_at_1km: f64,
    pub macro_pathloss_exponent: f64,
    pub small_pathloss_ref_db_at_1km: f64,
    pub small_pathloss_exponent: f64,
    pub shadowing_sigma_macro_db: f64,
    pub shadowing_sigma_small_db: f64,
    pub indoor_penetration_loss_db: f64,
    pub thermal_noise_density_dbm_hz: f64,
    pub min_distance_m: f64,
    pub macro_antenna_gain_dbi: f64,
    pub small_antenna_gain_dbi: f64,
    pub macro_theta_3db_deg: f64,
    pub macro_max_attenuation_db: f64,
    pub macro_dl_tx_power_dbm: f64,
    pub small_dl_tx_power_dbm: f64,
    pub bs_noise_figure_db: f64,
    /// Kept for completeness; the uplink receiver is the base station, so
    /// only the BS noise figure enters the SINR.
    pub ue_noise_figure_db: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            carrier_frequency_hz: 2.0e9,
            macro_pathloss_ref_db_at_1km: 128.1,
            macro_pathloss_exponent: 3.76,
            small_pathloss_ref_db_at_1km: 140.7,
            small_pathloss_exponent: 3.67,
            shadowing_sigma_macro_db: 8.0,
            shadowing_sigma_small_db: 10.0,
            indoor_penetration_loss_db: 20.0,
            thermal_noise_density_dbm_hz: -174.0,
            min_distance_m: 10.0,
            macro_antenna_gain_dbi: 14.0,
            small_antenna_gain_dbi: 5.0,
            macro_theta_3db_deg: 70.0,
            macro_max_attenuation_db: 25.0,
            macro_dl_tx_power_dbm: 46.0,
            small_dl_tx_power_dbm: 30.0,
            bs_noise_figure_db: 5.0,
            ue_noise_figure_db: 7.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSection {
    pub association_exponent: f64,
    pub sinr_floor_db: f64,
    pub search_step: f64,
    pub power_tolerance_db: f64,
    pub max_power_iterations: usize,
    pub cio_offset_db: f64,
    /// Count interference from users served by the same station in the
    /// overlap-weighted interference sum. Off gives the orthodox
    /// orthogonal-uplink variant.
    pub intra_cell_interference: bool,
    /// Snap every allocation to this grid (used for oracle comparisons).
    pub bandwidth_quantum_hz: Option<f64>,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        Self {
            association_exponent: 0.5,
            sinr_floor_db: 0.0,
            search_step: 0.05,
            power_tolerance_db: 0.01,
            max_power_iterations: 100,
            cio_offset_db: 6.0,
            intra_cell_interference: true,
            bandwidth_quantum_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub drops: usize,
    pub base_seed: u64,
    pub policies: Vec<String>,
    /// Worker threads; `None` resolves from HETNETSIM_THREADS or the number
    /// of available cores.
    pub threads: Option<usize>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            drops: 50,
            base_seed: 1,
            policies: vec![
                "max_rsrp".into(),
                "cio".into(),
                "semi_distributive".into(),
                "distributive".into(),
            ],
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub out_dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { out_dir: "out".into() }
    }
}

impl SimConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(s)
            .map_err(|e| Error::Config(format!("failed to parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, path: &str, msg: String) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{path}: {msg}")))
            }
        }
        let t = &self.topology;
        check(t.isd_m > 0.0, "topology.isd_m", format!("must be positive (got {})", t.isd_m))?;
        check(
            matches!(t.macro_sites, 1 | 7 | 19),
            "topology.macro_sites",
            format!("must be 1, 7 or 19 (got {})", t.macro_sites),
        )?;
        check(
            t.sectors_per_site >= 1,
            "topology.sectors_per_site",
            "must be at least 1".into(),
        )?;
        check(
            (0.0..=1.0).contains(&t.hotspot_fraction),
            "topology.hotspot_fraction",
            format!("must be within [0, 1] (got {})", t.hotspot_fraction),
        )?;
        check(
            (0.0..=1.0).contains(&t.indoor_ratio),
            "topology.indoor_ratio",
            format!("must be within [0, 1] (got {})", t.indoor_ratio),
        )?;
        check(
            t.hotspot_radius_m > 0.0,
            "topology.hotspot_radius_m",
            "must be positive".into(),
        )?;
        check(
            t.max_capacity_bps >= 0.0,
            "topology.max_capacity_bps",
            "must be non-negative".into(),
        )?;
        check(
            t.system_bandwidth_hz > 0.0,
            "topology.system_bandwidth_hz",
            "must be positive".into(),
        )?;
        check(t.ue_height_m > 0.0, "topology.ue_height_m", "must be positive".into())?;

        let c = &self.channel;
        check(
            c.macro_pathloss_exponent > 2.0,
            "channel.macro_pathloss_exponent",
            format!("must exceed 2 (got {})", c.macro_pathloss_exponent),
        )?;
        check(
            c.small_pathloss_exponent > 2.0,
            "channel.small_pathloss_exponent",
            format!("must exceed 2 (got {})", c.small_pathloss_exponent),
        )?;
        check(
            c.shadowing_sigma_macro_db >= 0.0 && c.shadowing_sigma_small_db >= 0.0,
            "channel.shadowing_sigma",
            "sigmas must be non-negative".into(),
        )?;
        check(c.min_distance_m > 0.0, "channel.min_distance_m", "must be positive".into())?;
        check(
            c.carrier_frequency_hz > 0.0,
            "channel.carrier_frequency_hz",
            "must be positive".into(),
        )?;

        let a = &self.algorithm;
        check(
            (0.0..=1.0).contains(&a.association_exponent),
            "algorithm.association_exponent",
            format!("must be within [0, 1] (got {})", a.association_exponent),
        )?;
        check(
            a.search_step > 0.0,
            "algorithm.search_step",
            format!("must be positive (got {})", a.search_step),
        )?;
        check(
            a.power_tolerance_db > 0.0,
            "algorithm.power_tolerance_db",
            "must be positive".into(),
        )?;
        check(
            a.max_power_iterations >= 1,
            "algorithm.max_power_iterations",
            "must be at least 1".into(),
        )?;
        if let Some(q) = a.bandwidth_quantum_hz {
            check(q > 0.0, "algorithm.bandwidth_quantum_hz", "must be positive".into())?;
        }

        let s = &self.simulation;
        check(s.drops >= 1, "simulation.drops", "must be at least 1".into())?;
        for p in &s.policies {
            check(
                p.parse::<crate::assoc::Policy>().is_ok(),
                "simulation.policies",
                format!("unknown policy '{p}'"),
            )?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn channel_params(&self) -> ChannelParams {
        let c = &self.channel;
        ChannelParams {
            carrier_frequency_hz: c.carrier_frequency_hz,
            macro_pathloss_constant: db_to_linear(
                30.0 * c.macro_pathloss_exponent - c.macro_pathloss_ref_db_at_1km,
            ),
            macro_pathloss_exponent: c.macro_pathloss_exponent,
            small_pathloss_constant: db_to_linear(
                30.0 * c.small_pathloss_exponent - c.small_pathloss_ref_db_at_1km,
            ),
            small_pathloss_exponent: c.small_pathloss_exponent,
            shadowing_sigma_macro_db: c.shadowing_sigma_macro_db,
            shadowing_sigma_small_db: c.shadowing_sigma_small_db,
            indoor_penetration_loss_db: c.indoor_penetration_loss_db,
            thermal_noise_density_dbm_hz: c.thermal_noise_density_dbm_hz,
            min_distance_m: c.min_distance_m,
            macro_theta_3db_deg: c.macro_theta_3db_deg,
            macro_max_attenuation_db: c.macro_max_attenuation_db,
        }
    }

    pub fn bs_attributes(&self) -> BsAttributes {
        BsAttributes {
            total_bandwidth_hz: self.topology.system_bandwidth_hz,
            macro_height_m: self.topology.macro_height_m,
            small_height_m: self.topology.small_height_m,
            macro_dl_tx_power_dbm: self.channel.macro_dl_tx_power_dbm,
            small_dl_tx_power_dbm: self.channel.small_dl_tx_power_dbm,
            macro_antenna_gain_dbi: self.channel.macro_antenna_gain_dbi,
            small_antenna_gain_dbi: self.channel.small_antenna_gain_dbi,
            bs_noise_figure_db: self.channel.bs_noise_figure_db,
            small_cio_offset_db: self.algorithm.cio_offset_db,
        }
    }

    pub fn ue_attributes(&self) -> UeAttributes {
        UeAttributes {
            height_m: self.topology.ue_height_m,
            max_tx_power_dbm: self.topology.ue_max_tx_power_dbm,
            antenna_gain_dbi: self.topology.ue_antenna_gain_dbi,
        }
    }

    pub fn assoc_config(&self) -> AssocConfig {
        let a = &self.algorithm;
        AssocConfig {
            alg: AlgorithmConfig {
                association_exponent: a.association_exponent,
                sinr_floor_db: a.sinr_floor_db,
                search_step: a.search_step,
                power_tolerance_db: a.power_tolerance_db,
                max_power_iterations: a.max_power_iterations,
            },
            intra_cell_interference: a.intra_cell_interference,
            bandwidth_quantum_hz: a.bandwidth_quantum_hz,
        }
    }

    pub fn policies(&self) -> Result<Vec<crate::assoc::Policy>> {
        self.simulation
            .policies
            .iter()
            .map(|p| {
                p.parse::<crate::assoc::Policy>()
                    .map_err(|e| Error::Config(format!("simulation.policies: {e}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_pure_defaults() {
        let cfg = SimConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, SimConfig::default());
        assert_eq!(cfg.topology.isd_m, 500.0);
        assert_eq!(cfg.topology.system_bandwidth_hz, 10e6);
        assert_eq!(cfg.topology.ue_max_tx_power_dbm, 20.0);
        assert_eq!(cfg.algorithm.association_exponent, 0.5);
    }

    #[test]
    fn degenerate_overrides_are_valid() {
        let cfg =
            SimConfig::from_json_str(r#"{"topology": {"users_per_sector": 0}}"#).unwrap();
        assert_eq!(cfg.topology.users_per_sector, 0);
    }

    #[test]
    fn out_of_range_exponent_names_the_field() {
        let err = SimConfig::from_json_str(
            r#"{"algorithm": {"association_exponent": 1.5}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("algorithm.association_exponent"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = SimConfig::from_json_str(r#"{"topology": {"not_a_field": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("not_a_field"));
        let err = SimConfig::from_json_str(r#"{"mystery": {}}"#).unwrap_err();
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn unknown_policy_is_rejected() {
        let err = SimConfig::from_json_str(
            r#"{"simulation": {"policies": ["max_rsrp", "psychic"]}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("psychic"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = SimConfig::default();
        let mut b = SimConfig::default();
        assert_eq!(a.config_hash(), b.config_hash());
        b.topology.isd_m = 501.0;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn derived_pathloss_constants_hit_the_reference_points() {
        let params = SimConfig::default().channel_params();
        // Path gain at 1 km must equal -128.1 dB (macro) / -140.7 dB (small).
        let macro_db =
            crate::units::linear_to_db(params.macro_pathloss_constant * 1000f64.powf(-3.76));
        let small_db =
            crate::units::linear_to_db(params.small_pathloss_constant * 1000f64.powf(-3.67));
        assert!((macro_db + 128.1).abs() < 1e-9);
        assert!((small_db + 140.7).abs() < 1e-9);
    }
}
