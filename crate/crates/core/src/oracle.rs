//! Brute-force exact minimizer of total uplink transmit power on desk-scale
//! instances, used as ground truth for the association heuristics.
//!
//! The solver enumerates every user-to-station map and every grid-quantized
//! bandwidth allocation, solves the powers at each point with the same
//! interference fixed point the heuristics use, and keeps the feasible point
//! of minimum total power (lexicographic tie-break).

use serde::{Deserialize, Serialize};

use crate::assoc::{
    run_association_pass, sinr_cap_bandwidth, solve_power_fixed_point, Association, AssocConfig,
    NetworkState, PassReport, Policy, Scenario,
};
use crate::channel::GainTable;
use crate::error::{Error, Result};
use crate::netmodel::{BaseStation, UserEquipment};

pub const MAX_ORACLE_BS: usize = 3;
pub const MAX_ORACLE_USERS: usize = 4;

/// A frozen micro instance: stations, users and an explicit gain matrix, with
/// a bandwidth grid quantum that divides every station's spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MicroInstance {
    pub base_stations: Vec<BaseStation>,
    pub users: Vec<UserEquipment>,
    /// Composite linear gains, rows indexed by user, columns by station.
    pub gains: Vec<Vec<f64>>,
    pub grid_quantum_hz: f64,
    pub thermal_noise_density_dbm_hz: f64,
}

impl MicroInstance {
    pub fn validate(&self) -> Result<()> {
        if self.base_stations.len() > MAX_ORACLE_BS || self.users.len() > MAX_ORACLE_USERS {
            return Err(Error::InstanceSize(format!(
                "instance has {} stations and {} users; bounds are {MAX_ORACLE_BS} and {MAX_ORACLE_USERS}",
                self.base_stations.len(),
                self.users.len()
            )));
        }
        if self.grid_quantum_hz <= 0.0 {
            return Err(Error::Config("grid quantum must be positive".into()));
        }
        for bs in &self.base_stations {
            let ratio = bs.total_bandwidth_hz / self.grid_quantum_hz;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                return Err(Error::Config(format!(
                    "grid quantum {} does not divide station {}'s bandwidth {}",
                    self.grid_quantum_hz, bs.id, bs.total_bandwidth_hz
                )));
            }
        }
        if self.gains.len() != self.users.len()
            || self.gains.iter().any(|r| r.len() != self.base_stations.len())
        {
            return Err(Error::Config("gain matrix shape mismatch".into()));
        }
        Ok(())
    }

    pub fn gain_table(&self) -> GainTable {
        GainTable::from_rows(&self.gains)
    }
}

/// The exact minimizer's solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSolution {
    /// Serving station index per user.
    pub assignment: Vec<usize>,
    /// Allocated bandwidth per user (multiples of the grid quantum).
    pub allocation_hz: Vec<f64>,
    pub powers_w: Vec<f64>,
    pub total_power_w: f64,
}

/// Exhaustive minimization of total transmit power over all assignments and
/// grid allocations, subject to per-station conservation, the SINR floor and
/// the per-user power threshold.
pub fn brute_force_min_power(
    instance: &MicroInstance,
    cfg: &AssocConfig,
) -> Result<OracleSolution> {
    instance.validate()?;
    let gains = instance.gain_table();
    let scenario = Scenario::from_parts(
        &instance.base_stations,
        &instance.users,
        instance.thermal_noise_density_dbm_hz,
        &gains,
    );
    let n_users = scenario.users.len();
    let n_bs = scenario.bs.len();
    let q = instance.grid_quantum_hz;

    if n_users == 0 {
        return Ok(OracleSolution {
            assignment: Vec::new(),
            allocation_hz: Vec::new(),
            powers_w: Vec::new(),
            total_power_w: 0.0,
        });
    }

    // Per-user upper bound on grid steps: the SINR-floor cap and the largest
    // station bandwidth.
    let max_eps = scenario
        .bs
        .iter()
        .map(|b| b.total_bandwidth_hz)
        .fold(0.0f64, f64::max);
    let steps_cap: Vec<u64> = scenario
        .users
        .iter()
        .map(|u| {
            let cap = sinr_cap_bandwidth(u.capacity_bps, cfg.alg.sinr_floor_db).min(max_eps);
            ((cap / q) + 1e-9).floor().max(0.0) as u64
        })
        .collect();

    let mut best: Option<OracleSolution> = None;
    let mut assignment = vec![0usize; n_users];
    let mut steps = vec![0u64; n_users];

    enumerate_assignments(
        &scenario,
        cfg,
        q,
        &steps_cap,
        &mut assignment,
        &mut steps,
        0,
        n_bs,
        &mut best,
    );

    best.ok_or_else(|| Error::Infeasible("no assignment and allocation meets the constraints".into()))
}

#[allow(clippy::too_many_arguments)]
fn enumerate_assignments(
    scenario: &Scenario,
    cfg: &AssocConfig,
    q: f64,
    steps_cap: &[u64],
    assignment: &mut Vec<usize>,
    steps: &mut Vec<u64>,
    user: usize,
    n_bs: usize,
    best: &mut Option<OracleSolution>,
) {
    if user == assignment.len() {
        enumerate_allocations(scenario, cfg, q, steps_cap, assignment, steps, 0, best);
        return;
    }
    for c in 0..n_bs {
        assignment[user] = c;
        enumerate_assignments(
            scenario, cfg, q, steps_cap, assignment, steps, user + 1, n_bs, best,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn enumerate_allocations(
    scenario: &Scenario,
    cfg: &AssocConfig,
    q: f64,
    steps_cap: &[u64],
    assignment: &[usize],
    steps: &mut Vec<u64>,
    user: usize,
    best: &mut Option<OracleSolution>,
) {
    let n_users = assignment.len();
    if user == n_users {
        if let Some(candidate) = evaluate_point(scenario, cfg, q, assignment, steps) {
            if best
                .as_ref()
                .is_none_or(|b| candidate.total_power_w < b.total_power_w)
            {
                *best = Some(candidate);
            }
        }
        return;
    }
    if scenario.users[user].capacity_bps <= 0.0 {
        steps[user] = 0;
        enumerate_allocations(scenario, cfg, q, steps_cap, assignment, steps, user + 1, best);
        return;
    }
    // Conservation prune: steps already claimed on this user's station.
    let c = assignment[user];
    let claimed: u64 = (0..user)
        .filter(|&i| assignment[i] == c)
        .map(|i| steps[i])
        .sum();
    let bs_steps = (scenario.bs[c].total_bandwidth_hz / q).round() as u64;
    let available = bs_steps.saturating_sub(claimed);
    for k in 1..=steps_cap[user].min(available) {
        steps[user] = k;
        enumerate_allocations(scenario, cfg, q, steps_cap, assignment, steps, user + 1, best);
    }
}

/// Solve powers at one (assignment, allocation) point and check feasibility:
/// converged fixed point, no clamping, demands met.
fn evaluate_point(
    scenario: &Scenario,
    cfg: &AssocConfig,
    q: f64,
    assignment: &[usize],
    steps: &[u64],
) -> Option<OracleSolution> {
    // Micro instances sit close to the feasibility boundary, where the
    // fixed point converges slowly; give it room so marginal-but-feasible
    // points are not misclassified.
    let cfg = AssocConfig {
        alg: crate::linkmath::AlgorithmConfig {
            max_power_iterations: cfg.alg.max_power_iterations.max(500),
            ..cfg.alg.clone()
        },
        ..cfg.clone()
    };
    let cfg = &cfg;
    let mut state = NetworkState::new(scenario, cfg);
    for (u, (&c, &k)) in assignment.iter().zip(steps.iter()).enumerate() {
        let demand = scenario.users[u].capacity_bps;
        let bw = if demand <= 0.0 { 0.0 } else { k as f64 * q };
        state.commit(Association {
            user_id: u,
            bs_id: c,
            bandwidth_hz: bw,
            tx_power_w: 0.0,
            sinr: 0.0,
            min_bandwidth_hz: bw,
            multiplier: 1.0,
        });
    }
    let report = solve_power_fixed_point(&mut state, &cfg.alg);
    if !report.converged || !report.clamped.is_empty() {
        return None;
    }
    let mut powers = Vec::with_capacity(assignment.len());
    let mut allocation = Vec::with_capacity(assignment.len());
    for u in 0..assignment.len() {
        let a = state.associations[u].as_ref().unwrap();
        powers.push(a.tx_power_w);
        allocation.push(a.bandwidth_hz);
    }
    let total = powers.iter().sum();
    Some(OracleSolution {
        assignment: assignment.to_vec(),
        allocation_hz: allocation,
        powers_w: powers,
        total_power_w: total,
    })
}

/// Deterministic random micro instance for heuristic-vs-oracle checks, plus
/// an arrival order for the sequential policies.
///
/// Instances are drawn in the regime the comparison is meaningful in: every
/// user has a dominant home station (so power control is feasible and nobody
/// blocks), and single-station instances stay underloaded so the exhaustive
/// per-user search provably reaches the grid optimum.
pub fn generate_check_instance(seed: u64) -> (MicroInstance, Vec<usize>) {
    use crate::netmodel::{Position, Tier};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let eps = 8000.0;
    let quantum = eps / 8.0;
    let n_bs = rng.random_range(1..=MAX_ORACLE_BS);
    let n_users = if n_bs == 1 {
        rng.random_range(1..=2)
    } else {
        rng.random_range(1..=MAX_ORACLE_USERS)
    };
    let demand_range = if n_bs == 1 {
        2500.0..3900.0
    } else {
        2500.0..6000.0
    };

    let base_stations: Vec<BaseStation> = (0..n_bs)
        .map(|id| BaseStation {
            id,
            tier: if id == 0 { Tier::Macro } else { Tier::Small },
            site_position: Position::new(0.0, 0.0),
            height_m: 10.0,
            sector_azimuth_deg: None,
            total_bandwidth_hz: eps,
            dl_tx_power_dbm: 30.0,
            antenna_gain_peak_dbi: 0.0,
            cio_offset_db: 0.0,
            noise_figure_db: 0.0,
        })
        .collect();
    let users: Vec<UserEquipment> = (0..n_users)
        .map(|id| UserEquipment {
            id,
            position: Position::new(0.0, 0.0),
            height_m: 1.5,
            indoor: false,
            capacity_requirement_bps: rng.random_range(demand_range.clone()),
            max_tx_power_dbm: 20.0,
            antenna_gain_dbi: 0.0,
        })
        .collect();

    // Home-dominant gains: eta around 500 Hz at the home station.
    let noise_density_w_hz = crate::units::dbm_to_watts(-174.0);
    let base_gain = {
        let target_sinr = (5000.0f64 / 500.0).exp2() - 1.0;
        target_sinr * noise_density_w_hz * 500.0 / crate::units::dbm_to_watts(20.0)
    };
    let gains: Vec<Vec<f64>> = (0..n_users)
        .map(|u| {
            let home = u % n_bs;
            (0..n_bs)
                .map(|c| {
                    let scale = if c == home { 1.0 } else { 1e-2 };
                    base_gain * scale * rng.random_range(0.5..2.0)
                })
                .collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..n_users).collect();
    order.shuffle(&mut rng);

    (
        MicroInstance {
            base_stations,
            users,
            gains,
            grid_quantum_hz: quantum,
            thermal_noise_density_dbm_hz: -174.0,
        },
        order,
    )
}

/// Run one heuristic policy on a micro-instance scenario with allocations
/// snapped to the oracle's grid; returns the final state plus total transmit
/// power of the served users.
pub fn run_heuristic_on_instance<'a>(
    scenario: &'a Scenario<'a>,
    grid_quantum_hz: f64,
    policy: Policy,
    order: &[usize],
    cfg: &AssocConfig,
) -> (NetworkState<'a>, PassReport, f64) {
    let quantized = AssocConfig {
        bandwidth_quantum_hz: Some(grid_quantum_hz),
        alg: crate::linkmath::AlgorithmConfig {
            max_power_iterations: cfg.alg.max_power_iterations.max(500),
            ..cfg.alg.clone()
        },
        ..cfg.clone()
    };
    let (state, report) = run_association_pass(scenario, policy, order, &quantized);
    let total = state
        .associations
        .iter()
        .flatten()
        .map(|a| a.tx_power_w)
        .sum();
    (state, report, total)
}
