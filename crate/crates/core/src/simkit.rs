//! Monte Carlo orchestration and KPI aggregation.
//!
//! A drop is one realization of topology, shadowing, demands and arrival
//! order, derived deterministically from (config, seed). Policies evaluated
//! for the same seed share the identical drop environment, so comparisons
//! are paired. Drops run in parallel; aggregation is a deterministic
//! reduction over drop index.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::{run_association_pass, Policy, Scenario};
use crate::channel::{GainTable, ShadowTable};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::linkmath::capacity;
use crate::netmodel::{self, Tier, Topology};
use crate::units::{linear_to_db, watts_to_dbm};

/// RNG stream ids carving one drop seed into independent substreams.
const STREAM_SMALL_CELLS: u64 = 1;
const STREAM_USERS: u64 = 2;
const STREAM_SHADOWING: u64 = 3;
const STREAM_ARRIVAL: u64 = 4;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything a drop shares across policies.
pub struct DropEnvironment {
    pub topology: Topology,
    pub shadow: ShadowTable,
    pub gains: GainTable,
    pub arrival_order: Vec<usize>,
    pub seed: u64,
}

pub fn build_drop_environment(cfg: &SimConfig, seed: u64) -> Result<DropEnvironment> {
    let t = &cfg.topology;
    let attrs = cfg.bs_attributes();
    let topo = netmodel::build_hex_grid(t.isd_m, t.macro_sites, t.sectors_per_site, &attrs)?;
    let topo = netmodel::place_small_cells(
        topo,
        t.small_per_sector,
        t.min_small_macro_separation_m,
        t.min_small_small_separation_m,
        t.placement_max_retries,
        &attrs,
        &mut stream_rng(seed, STREAM_SMALL_CELLS),
    )?;
    let topo = netmodel::place_users(
        topo,
        t.users_per_sector,
        t.hotspot_fraction,
        t.hotspot_radius_m,
        t.indoor_ratio,
        t.max_capacity_bps,
        &cfg.ue_attributes(),
        &mut stream_rng(seed, STREAM_USERS),
    );

    let params = cfg.channel_params();
    let shadow = ShadowTable::sample(&topo, &params, &mut stream_rng(seed, STREAM_SHADOWING));
    let gains = GainTable::build(&topo, &params, &shadow);

    let mut arrival_order: Vec<usize> = (0..topo.users.len()).collect();
    arrival_order.shuffle(&mut stream_rng(seed, STREAM_ARRIVAL));

    Ok(DropEnvironment {
        topology: topo,
        shadow,
        gains,
        arrival_order,
        seed,
    })
}

/// Per-user outcome of one drop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: usize,
    pub blocked: bool,
    pub bs_id: Option<usize>,
    pub tier: Option<Tier>,
    pub tx_power_w: Option<f64>,
    pub tx_power_dbm: Option<f64>,
    pub sinr_db: Option<f64>,
    pub bandwidth_hz: f64,
    pub capacity_requirement_bps: f64,
    pub achieved_capacity_bps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropResult {
    pub seed: u64,
    pub policy: Policy,
    pub records: Vec<UserRecord>,
    /// Served users per station id.
    pub bs_users: Vec<u32>,
    pub converged: bool,
    pub clamped_users: usize,
    pub fixed_point_iterations: usize,
}

/// Run one policy on a prepared drop environment.
pub fn run_policy_on_drop(cfg: &SimConfig, env: &DropEnvironment, policy: Policy) -> DropResult {
    let scenario = Scenario::from_topology(
        &env.topology,
        cfg.channel.thermal_noise_density_dbm_hz,
        &env.gains,
    );
    let assoc_cfg = cfg.assoc_config();
    let (state, report) = run_association_pass(&scenario, policy, &env.arrival_order, &assoc_cfg);

    let mut bs_users = vec![0u32; env.topology.base_stations.len()];
    let mut records = Vec::with_capacity(env.topology.users.len());
    for (u, ue) in env.topology.users.iter().enumerate() {
        match &state.associations[u] {
            Some(a) => {
                bs_users[a.bs_id] += 1;
                let sinr = state.sinr_of(u).unwrap_or(0.0);
                records.push(UserRecord {
                    user_id: u,
                    blocked: false,
                    bs_id: Some(a.bs_id),
                    tier: Some(env.topology.base_stations[a.bs_id].tier),
                    tx_power_w: Some(a.tx_power_w),
                    tx_power_dbm: Some(watts_to_dbm(a.tx_power_w)),
                    sinr_db: if ue.capacity_requirement_bps > 0.0 {
                        Some(linear_to_db(sinr))
                    } else {
                        None
                    },
                    bandwidth_hz: a.bandwidth_hz,
                    capacity_requirement_bps: ue.capacity_requirement_bps,
                    achieved_capacity_bps: capacity(a.bandwidth_hz, sinr),
                });
            }
            None => records.push(UserRecord {
                user_id: u,
                blocked: true,
                bs_id: None,
                tier: None,
                tx_power_w: None,
                tx_power_dbm: None,
                sinr_db: None,
                bandwidth_hz: 0.0,
                capacity_requirement_bps: ue.capacity_requirement_bps,
                achieved_capacity_bps: 0.0,
            }),
        }
    }

    DropResult {
        seed: env.seed,
        policy,
        records,
        bs_users,
        converged: report.converged,
        clamped_users: report.clamped.len(),
        fixed_point_iterations: report.fixed_point_iterations,
    }
}

/// Build the environment for `seed` and evaluate every policy on it.
pub fn run_drop_set(cfg: &SimConfig, policies: &[Policy], seed: u64) -> Result<Vec<DropResult>> {
    let env = build_drop_environment(cfg, seed)?;
    Ok(policies
        .iter()
        .map(|&p| run_policy_on_drop(cfg, &env, p))
        .collect())
}

/// Single-policy convenience wrapper.
pub fn run_drop(cfg: &SimConfig, policy: Policy, seed: u64) -> Result<DropResult> {
    Ok(run_drop_set(cfg, &[policy], seed)?.pop().expect("one result"))
}

/// All drops for all policies, drop-parallel, ordered by drop index.
pub fn run_drops(
    cfg: &SimConfig,
    policies: &[Policy],
    n_drops: usize,
    base_seed: u64,
) -> Result<Vec<Vec<DropResult>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(cfg))
        .build()
        .map_err(|e| Error::Aggregation(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<DropResult>>> = pool.install(|| {
        (0..n_drops)
            .into_par_iter()
            .map(|i| run_drop_set(cfg, policies, base_seed + i as u64))
            .collect()
    });
    results.into_iter().collect()
}

/// Worker count: explicit config, then HETNETSIM_THREADS, then all cores.
pub fn resolve_threads(cfg: &SimConfig) -> usize {
    if let Some(t) = cfg.simulation.threads {
        return t.max(1);
    }
    if let Ok(v) = std::env::var("HETNETSIM_THREADS") {
        if let Ok(t) = v.trim().parse::<usize>() {
            return t.max(1);
        }
    }
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// One point of an empirical CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub x: f64,
    pub p: f64,
}

/// Empirical CDF on a fixed-resolution grid (values in dB-like units).
fn empirical_cdf(values: &[f64], resolution: f64) -> Vec<CdfPoint> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = (sorted[0] / resolution).floor() as i64;
    let hi = (sorted[sorted.len() - 1] / resolution).ceil() as i64;
    let n = sorted.len() as f64;
    let mut out = Vec::with_capacity((hi - lo + 1).max(1) as usize);
    let mut idx = 0usize;
    for k in lo..=hi {
        let x = k as f64 * resolution;
        while idx < sorted.len() && sorted[idx] <= x + 1e-12 {
            idx += 1;
        }
        out.push(CdfPoint { x, p: idx as f64 / n });
    }
    out
}

/// Per-drop summary feeding paired comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropSummary {
    pub seed: u64,
    pub mean_tx_power_dbm: Option<f64>,
    pub median_sinr_db: Option<f64>,
    pub spectrum_efficiency_bps_hz: Option<f64>,
    pub served: usize,
    pub blocked: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyKpis {
    pub mean_tx_power_dbm: Option<f64>,
    pub mean_tx_power_stderr_db: Option<f64>,
    pub median_sinr_db: Option<f64>,
    pub tx_power_cdf: Vec<CdfPoint>,
    pub sinr_cdf: Vec<CdfPoint>,
    pub mean_users_per_macro_bs: f64,
    /// Absent when the topology has no small cells.
    pub mean_users_per_small_bs: Option<f64>,
    /// Served demand per allocated spectrum, averaged over drops.
    pub spectrum_efficiency_bps_hz: Option<f64>,
    pub blocking_rate: f64,
    pub served_users: usize,
    pub blocked_users: usize,
    pub drops_flagged: usize,
    pub per_drop: Vec<DropSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KpiReport {
    pub config: SimConfig,
    pub config_hash: String,
    pub base_seed: u64,
    pub n_drops: usize,
    pub per_policy: BTreeMap<String, PolicyKpis>,
}

/// CDF grid resolution in dB.
pub const CDF_RESOLUTION_DB: f64 = 0.1;

fn median(sorted: &[f64]) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Aggregate per-policy KPIs from drop results (outer index: drop).
pub fn aggregate(
    cfg: &SimConfig,
    policies: &[Policy],
    drops: &[Vec<DropResult>],
    base_seed: u64,
) -> Result<KpiReport> {
    if drops.is_empty() {
        return Err(Error::Aggregation("no drops to aggregate".into()));
    }
    let mut per_policy = BTreeMap::new();
    for (pi, &policy) in policies.iter().enumerate() {
        let mut powers_dbm: Vec<f64> = Vec::new();
        let mut sinrs_db: Vec<f64> = Vec::new();
        let mut per_drop_means: Vec<f64> = Vec::new();
        let mut per_drop: Vec<DropSummary> = Vec::new();
        let mut served_total = 0usize;
        let mut blocked_total = 0usize;
        let mut flagged = 0usize;
        let mut macro_load_sum = 0.0f64;
        let mut small_load_sum = 0.0f64;
        let mut n_macro = 0usize;
        let mut n_small = 0usize;
        let mut se_values: Vec<f64> = Vec::new();

        for drop_set in drops {
            let dr = &drop_set[pi];
            debug_assert_eq!(dr.policy, policy);
            if !dr.converged {
                flagged += 1;
            }

            let mut drop_powers: Vec<f64> = Vec::new();
            let mut drop_sinrs: Vec<f64> = Vec::new();
            let mut demand_sum = 0.0f64;
            let mut bw_sum = 0.0f64;
            let mut served = 0usize;
            let mut blocked = 0usize;
            for r in &dr.records {
                if r.blocked {
                    blocked += 1;
                    continue;
                }
                served += 1;
                if r.capacity_requirement_bps > 0.0 {
                    if let Some(p) = r.tx_power_dbm {
                        drop_powers.push(p);
                    }
                    if let Some(s) = r.sinr_db {
                        drop_sinrs.push(s);
                    }
                    demand_sum += r.capacity_requirement_bps;
                    bw_sum += r.bandwidth_hz;
                }
            }
            served_total += served;
            blocked_total += blocked;

            let mean_p = if drop_powers.is_empty() {
                None
            } else {
                Some(drop_powers.iter().sum::<f64>() / drop_powers.len() as f64)
            };
            if let Some(m) = mean_p {
                per_drop_means.push(m);
            }
            let mut ds = drop_sinrs.clone();
            ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = median(&ds);
            let se = if bw_sum > 0.0 {
                Some(demand_sum / bw_sum)
            } else {
                None
            };
            if let Some(v) = se {
                se_values.push(v);
            }
            per_drop.push(DropSummary {
                seed: dr.seed,
                mean_tx_power_dbm: mean_p,
                median_sinr_db: med,
                spectrum_efficiency_bps_hz: se,
                served,
                blocked,
                converged: dr.converged,
            });
            powers_dbm.extend(drop_powers);
            sinrs_db.extend(drop_sinrs);

            // Tier loads use the first drop's station tiers; counts are per
            // drop so the mean is over (drop, station).
            let tiers: Vec<Tier> = drop_tiers(cfg, dr);
            n_macro = tiers.iter().filter(|t| **t == Tier::Macro).count();
            n_small = tiers.iter().filter(|t| **t == Tier::Small).count();
            for (c, &count) in dr.bs_users.iter().enumerate() {
                match tiers[c] {
                    Tier::Macro => macro_load_sum += count as f64,
                    Tier::Small => small_load_sum += count as f64,
                }
            }
        }

        let n_drops = drops.len() as f64;
        let mean_power = if per_drop_means.is_empty() {
            None
        } else {
            Some(per_drop_means.iter().sum::<f64>() / per_drop_means.len() as f64)
        };
        let stderr = if per_drop_means.len() >= 2 {
            let m = mean_power.unwrap();
            let var = per_drop_means.iter().map(|x| (x - m).powi(2)).sum::<f64>()
                / (per_drop_means.len() - 1) as f64;
            Some((var / per_drop_means.len() as f64).sqrt())
        } else {
            None
        };
        let mut sorted_sinr = sinrs_db.clone();
        sorted_sinr.sort_by(|a, b| a.partial_cmp(b).unwrap());

        per_policy.insert(
            policy.to_string(),
            PolicyKpis {
                mean_tx_power_dbm: mean_power,
                mean_tx_power_stderr_db: stderr,
                median_sinr_db: median(&sorted_sinr),
                tx_power_cdf: empirical_cdf(&powers_dbm, CDF_RESOLUTION_DB),
                sinr_cdf: empirical_cdf(&sinrs_db, CDF_RESOLUTION_DB),
                mean_users_per_macro_bs: if n_macro > 0 {
                    macro_load_sum / (n_macro as f64 * n_drops)
                } else {
                    0.0
                },
                mean_users_per_small_bs: if n_small > 0 {
                    Some(small_load_sum / (n_small as f64 * n_drops))
                } else {
                    None
                },
                spectrum_efficiency_bps_hz: if se_values.is_empty() {
                    None
                } else {
                    Some(se_values.iter().sum::<f64>() / se_values.len() as f64)
                },
                blocking_rate: if served_total + blocked_total > 0 {
                    blocked_total as f64 / (served_total + blocked_total) as f64
                } else {
                    0.0
                },
                served_users: served_total,
                blocked_users: blocked_total,
                drops_flagged: flagged,
                per_drop,
            },
        );
    }

    Ok(KpiReport {
        config: cfg.clone(),
        config_hash: cfg.config_hash(),
        base_seed,
        n_drops: drops.len(),
        per_policy,
    })
}

/// Station tiers for a drop: deterministic from the config (the grid layout
/// does not depend on the seed, and small cells always follow the macros).
fn drop_tiers(cfg: &SimConfig, dr: &DropResult) -> Vec<Tier> {
    let n_macro = cfg.topology.macro_sites * cfg.topology.sectors_per_site;
    (0..dr.bs_users.len())
        .map(|c| if c < n_macro { Tier::Macro } else { Tier::Small })
        .collect()
}

/// Monte Carlo entry point: `n_drops` paired drops for the given policies.
pub fn run_monte_carlo(
    cfg: &SimConfig,
    policies: &[Policy],
    n_drops: usize,
    base_seed: u64,
) -> Result<KpiReport> {
    if n_drops == 0 {
        return Err(Error::Aggregation("n_drops must be at least 1".into()));
    }
    let drops = run_drops(cfg, policies, n_drops, base_seed)?;
    aggregate(cfg, policies, &drops, base_seed)
}

/// One report per small-cell density, sharing the base seed so densities are
/// compared on paired drops.
pub fn sensitivity_sweep(
    cfg: &SimConfig,
    densities: &[usize],
    policies: &[Policy],
    n_drops: usize,
) -> Result<Vec<KpiReport>> {
    if densities.is_empty() {
        return Err(Error::Config("density sweep must be non-empty".into()));
    }
    densities
        .iter()
        .map(|&d| {
            let mut c = cfg.clone();
            c.topology.small_per_sector = d;
            run_monte_carlo(&c, policies, n_drops, cfg.simulation.base_seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.topology.macro_sites = 1;
        cfg.topology.users_per_sector = 6;
        cfg.topology.small_per_sector = 1;
        cfg.simulation.threads = Some(2);
        cfg
    }

    #[test]
    fn drop_has_one_record_per_user() {
        let cfg = small_cfg();
        let dr = run_drop(&cfg, Policy::MaxRsrp, 3).unwrap();
        assert_eq!(dr.records.len(), 18);
        let served: u32 = dr.bs_users.iter().sum();
        assert_eq!(
            served as usize,
            dr.records.iter().filter(|r| !r.blocked).count()
        );
    }

    #[test]
    fn default_topology_yields_525_records() {
        let mut cfg = SimConfig::default();
        cfg.simulation.threads = Some(1);
        let dr = run_drop(&cfg, Policy::MaxRsrp, 1).unwrap();
        assert_eq!(dr.records.len(), 525);
    }

    #[test]
    fn pinned_policies_report_threshold_power() {
        let cfg = small_cfg();
        for policy in [Policy::MaxRsrp, Policy::Cio] {
            let dr = run_drop(&cfg, policy, 11).unwrap();
            for r in dr.records.iter().filter(|r| !r.blocked) {
                if r.capacity_requirement_bps > 0.0 {
                    assert_eq!(r.tx_power_w, Some(crate::units::dbm_to_watts(20.0)));
                }
            }
        }
    }

    #[test]
    fn drops_are_deterministic() {
        let cfg = small_cfg();
        let a = run_drop(&cfg, Policy::Distributive, 7).unwrap();
        let b = run_drop(&cfg, Policy::Distributive, 7).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn reports_are_deterministic_across_thread_counts() {
        let mut cfg = small_cfg();
        let policies = [Policy::MaxRsrp, Policy::Distributive];
        cfg.simulation.threads = Some(1);
        let serial = run_monte_carlo(&cfg, &policies, 4, 5).unwrap();
        cfg.simulation.threads = Some(4);
        let parallel = run_monte_carlo(&cfg, &policies, 4, 5).unwrap();
        // The embedded config differs only in the thread count; compare KPIs.
        assert_eq!(
            serde_json::to_string(&serial.per_policy).unwrap(),
            serde_json::to_string(&parallel.per_policy).unwrap()
        );
    }

    #[test]
    fn single_drop_report_equals_drop_statistics() {
        let cfg = small_cfg();
        let report = run_monte_carlo(&cfg, &[Policy::MaxRsrp], 1, 9).unwrap();
        let kpis = &report.per_policy["max_rsrp"];
        assert_eq!(kpis.per_drop.len(), 1);
        assert_eq!(kpis.mean_tx_power_dbm, kpis.per_drop[0].mean_tx_power_dbm);
    }

    #[test]
    fn cdfs_are_monotone_and_complete() {
        let cfg = small_cfg();
        let report = run_monte_carlo(&cfg, &[Policy::MaxRsrp, Policy::Distributive], 3, 2).unwrap();
        for kpis in report.per_policy.values() {
            for cdf in [&kpis.tx_power_cdf, &kpis.sinr_cdf] {
                if cdf.is_empty() {
                    continue;
                }
                let mut last = 0.0;
                for pt in cdf {
                    assert!(pt.p >= last && pt.p <= 1.0 + 1e-12);
                    last = pt.p;
                }
                assert!((cdf.last().unwrap().p - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn policies_share_the_drop_environment() {
        let cfg = small_cfg();
        let set = run_drop_set(&cfg, &[Policy::MaxRsrp, Policy::Cio], 13).unwrap();
        // Identical user demands across policies proves a shared environment.
        for (a, b) in set[0].records.iter().zip(set[1].records.iter()) {
            assert_eq!(a.capacity_requirement_bps, b.capacity_requirement_bps);
        }
    }

    #[test]
    fn sweep_produces_one_report_per_density() {
        let cfg = small_cfg();
        let reports = sensitivity_sweep(&cfg, &[0, 1], &[Policy::MaxRsrp], 2).unwrap();
        assert_eq!(reports.len(), 2);
        // Zero density: no small-cell load to report.
        assert!(reports[0].per_policy["max_rsrp"].mean_users_per_small_bs.is_none());
        assert!(reports[1].per_policy["max_rsrp"].mean_users_per_small_bs.is_some());
    }

    #[test]
    fn stderr_shrinks_with_more_drops() {
        let cfg = small_cfg();
        let r1 = run_monte_carlo(&cfg, &[Policy::Distributive], 8, 100).unwrap();
        let r2 = run_monte_carlo(&cfg, &[Policy::Distributive], 16, 100).unwrap();
        let s1 = r1.per_policy["distributive"].mean_tx_power_stderr_db.unwrap();
        let s2 = r2.per_policy["distributive"].mean_tx_power_stderr_db.unwrap();
        // Doubling drops shrinks the standard error roughly by 1/sqrt(2).
        let ratio = s2 / s1;
        assert!(ratio < 1.1, "stderr ratio {ratio}");
        assert!(ratio > 0.3, "stderr ratio {ratio}");
    }
}
