//! # hetnetsim
//!
//! System-level Monte Carlo simulator of a two-tier uplink heterogeneous
//! network. Users associate to macro or small cells under one of four
//! policies — received-power ranking, ranking with a small-cell offset, and
//! two bandwidth-aware schemes that spend residual spectrum to cut uplink
//! transmit power — and the simulator reports transmit-power, SINR and load
//! KPIs across seeded Monte Carlo drops.
//!
//! Module map:
//! - [`netmodel`]: domain types and hexagonal topology generation
//! - [`channel`]: link budgets, antenna patterns, shadowing, noise
//! - [`linkmath`]: the shared closed-form link mathematics
//! - [`assoc`]: association policies and the power fixed point
//! - [`oracle`]: brute-force exact minimizer for micro instances
//! - [`simkit`]: Monte Carlo orchestration and KPI aggregation
//! - [`config`]: resolved configuration with validation

pub mod assoc;
pub mod channel;
pub mod config;
pub mod error;
pub mod linkmath;
pub mod netmodel;
pub mod oracle;
pub mod simkit;
pub mod units;

pub use error::{Error, Result};
