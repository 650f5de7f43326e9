//! Simulator for end-to-end network slicing over a WLAN to fixed wireless
//! access uplink, built for remote patient monitoring scenarios.
//!
//! In-home monitoring devices reach the residential gateway (RG) over WLAN;
//! the RG keeps per-slice queues and forwards to the gNB over FWA, sharing
//! the sector with the eMBB traffic of every other active household. Three
//! scheduling policies are provided: proportional fair over pooled queues
//! ([`Policy::Basic`]), slice-aware M-LWDF ([`Policy::E2e`]) and elastic
//! per-window quotas with deadline dropping ([`Policy::Elastic`]).
//!
//! ```no_run
//! use slicesim_core::{config, run_sweep};
//!
//! let mut spec = config::paper_case();
//! spec.loads = vec![0.3, 0.5];
//! spec.seeds = vec![0, 1];
//! let out = run_sweep(&spec, None).unwrap();
//! println!("{} aggregate rows", out.aggregate.len());
//! ```

pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod phy;
pub mod scheduler;
pub mod slicing;
pub mod sweep;
pub mod trace;
pub mod traffic;

pub use engine::{default_scenario, run, RunResult, RunStats, Scenario};
pub use error::SimError;
pub use metrics::{availability, e2e_latency_stats, qos_met_fraction, SliceSelector};
pub use model::{Outcome, Packet, QoSProfile, SimTime, SliceType};
pub use scheduler::{elastic_scale, schedule_interval, Policy, PolicyConfig};
pub use sweep::{emit_figure_data, run_sweep, Figure, SweepSpec};
pub use trace::{PacketRecord, Trace};
