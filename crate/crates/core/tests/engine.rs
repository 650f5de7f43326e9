use slicesim_core::engine::{default_scenario, run, Scenario};
use slicesim_core::metrics::{late_deliveries, qos_met_fraction, SliceSelector};
use slicesim_core::model::{Outcome, SliceType};
use slicesim_core::scheduler::Policy;
use slicesim_core::traffic::{build_catalog, FlowCatalog};
use slicesim_core::Trace;

fn short(policy: Policy, load: f64, seed: u64, duration_ms: u64) -> Scenario {
    let mut s = default_scenario();
    s.policy.policy = policy;
    s.active_fraction = load;
    s.seed = seed;
    s.duration_ms = duration_ms;
    s.events.retain(|e| e.at_ms < duration_ms);
    s
}

/// One patient with a single EEG flow on an otherwise silent network with
/// error-free, constant-rate links.
fn idle_eeg(policy: Policy) -> Scenario {
    let mut s = default_scenario();
    s.policy.policy = policy;
    s.patients.truncate(1);
    s.events.clear();
    s.active_fraction = 0.0;
    s.embb.mean_rate_bps = 0;
    s.catalog = FlowCatalog {
        regular_flows: vec![build_catalog().regular("EEG").unwrap().clone()],
        emergency_flows: vec![],
    };
    for hop in [&mut s.wlan, &mut s.fwa] {
        hop.target_bler = 0.0;
        hop.channel.sigma = 0.0;
    }
    s.duration_ms = 5_000;
    s.warmup_ms = 0;
    s
}

fn csv_bytes(t: &Trace) -> Vec<u8> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    buf
}

#[test]
fn idle_eeg_latency_has_closed_form() {
    for policy in Policy::ALL {
        let s = idle_eeg(policy);
        let r = run(&s).unwrap();
        let delivered: Vec<_> = r
            .trace
            .records
            .iter()
            .filter(|p| p.outcome == Outcome::Delivered)
            .collect();
        assert!(delivered.len() >= 490, "{policy:?}: {} delivered", delivered.len());
        for p in &delivered {
            // Wait for the next WLAN interval, one WLAN interval, medium
            // access, then one FWA interval.
            let c = p.created_us;
            let wait = c.div_ceil(1_000) * 1_000 - c;
            assert_eq!(p.latency().unwrap().as_us(), wait + 3_000, "{policy:?}: {p:?}");
            assert_eq!(p.hop1_delay_us, Some(wait + 2_000));
            assert_eq!(p.rg_wait_us, Some(0));
        }
        assert_eq!(qos_met_fraction(&r.trace, SliceType::RegularMonitoring), Some(1.0));
        assert_eq!(r.stats.dropped_expired + r.stats.lost_retx, 0);
    }
}

#[test]
fn silent_network_generates_nothing() {
    let mut s = idle_eeg(Policy::Elastic);
    s.patients.clear();
    s.record_allocations = true;
    let r = run(&s).unwrap();
    assert!(r.trace.records.is_empty());
    assert!(r.allocations.is_empty());
    assert_eq!(r.stats.generated, 0);
    assert_eq!(r.stats.fwa_units_used, 0);
    assert_eq!(r.stats.intervals, 5_000);
}

#[test]
fn latency_splits_into_hop_components() {
    for policy in Policy::ALL {
        let r = run(&short(policy, 0.5, 3, 20_000)).unwrap();
        let mut checked = 0;
        for p in r.trace.records.iter().filter(|p| p.outcome == Outcome::Delivered) {
            let hop1 = p.hop1_delay_us.unwrap();
            let wait = p.rg_wait_us.unwrap();
            let lat = p.latency().unwrap().as_us();
            assert!(hop1 + wait < lat, "{policy:?}: {p:?}");
            // FWA service spans whole intervals.
            assert_eq!((lat - hop1 - wait) % 1_000, 0, "{policy:?}: {p:?}");
            checked += 1;
        }
        assert!(checked > 1_000);
    }
}

#[test]
fn packets_are_conserved_and_grids_never_overbooked() {
    for policy in Policy::ALL {
        for load in [0.1, 0.6, 1.0] {
            let mut s = short(policy, load, 11, 15_000);
            s.record_allocations = true;
            let r = run(&s).unwrap();
            let st = &r.stats;
            assert_eq!(st.generated, r.trace.records.len() as u64);
            assert_eq!(
                st.generated,
                st.delivered + st.dropped_expired + st.lost_retx + st.in_flight
            );
            let count = |o: Outcome| r.trace.records.iter().filter(|p| p.outcome == o).count() as u64;
            assert_eq!(count(Outcome::Delivered), st.delivered);
            assert_eq!(count(Outcome::DroppedExpired), st.dropped_expired);
            assert_eq!(count(Outcome::LostRetx), st.lost_retx);
            assert!(
                st.max_overallocation <= 0,
                "{policy:?} at {load}: {}",
                st.max_overallocation
            );
            assert!(st.fwa_units_used <= st.fwa_units_usable);

            let mut per_interval = std::collections::BTreeMap::new();
            for a in &r.allocations {
                *per_interval.entry((a.time_us, a.hop, a.cell)).or_insert(0u64) += a.units as u64;
            }
            for ((_, hop, _), units) in per_interval {
                let grid = if hop == slicesim_core::model::Hop::Wlan {
                    &s.wlan.grid
                } else {
                    &s.fwa.grid
                };
                assert!(units <= slicesim_core::model::usable_units(grid) as u64);
            }
        }
    }
}

#[test]
fn elastic_never_delivers_late() {
    for load in [0.5, 1.0] {
        let r = run(&short(Policy::Elastic, load, 5, 40_000)).unwrap();
        for sel in SliceSelector::ALL {
            assert_eq!(late_deliveries(&r.trace, sel), 0, "{sel:?} at {load}");
        }
        assert!(r.stats.dropped_expired > 0 || load < 1.0);
    }
}

#[test]
fn runs_are_byte_identical() {
    for policy in Policy::ALL {
        let s = short(policy, 0.4, 9, 35_000);
        let first = run(&s).unwrap();
        let bytes = csv_bytes(&first.trace);
        for _ in 0..2 {
            let again = run(&s).unwrap();
            assert_eq!(csv_bytes(&again.trace), bytes);
            assert_eq!(again.transitions, first.transitions);
        }
    }
}

#[test]
fn seeds_change_the_run() {
    let a = run(&short(Policy::Basic, 0.4, 1, 5_000)).unwrap();
    let b = run(&short(Policy::Basic, 0.4, 2, 5_000)).unwrap();
    assert_ne!(csv_bytes(&a.trace), csv_bytes(&b.trace));
}

#[test]
fn transitions_record_request_and_activation() {
    let r = run(&short(Policy::Elastic, 0.3, 0, 100_000)).unwrap();
    assert_eq!(r.transitions.len(), 2);
    let promote = &r.transitions[0];
    assert_eq!(promote.requested_us, 30_000_000);
    let eff = promote.effective_us.unwrap();
    assert!(eff >= promote.requested_us);
    // Emergency packets only appear once the promotion is active.
    let first_emergency = r
        .trace
        .records
        .iter()
        .filter(|p| p.slice_type == SliceType::Emergency)
        .map(|p| p.created_us)
        .min()
        .unwrap();
    assert!(
        first_emergency >= eff,
        "emergency packet at {first_emergency} before activation at {eff}"
    );
    let demote = &r.transitions[1];
    assert_eq!(demote.requested_us, 90_000_000);
    let last_emergency = r
        .trace
        .records
        .iter()
        .filter(|p| p.slice_type == SliceType::Emergency)
        .map(|p| p.created_us)
        .max()
        .unwrap();
    assert!(last_emergency < demote.effective_us.unwrap());
}

#[test]
fn cross_hop_reporting_helps_emergency_traffic() {
    let mut on = short(Policy::E2e, 0.8, 4, 60_000);
    on.events[0].at_ms = 10_000;
    on.events.truncate(1);
    let mut off = on.clone();
    off.policy.cross_hop_reporting = false;
    let q_on = qos_met_fraction(&run(&on).unwrap().trace, SliceType::Emergency).unwrap();
    let q_off = qos_met_fraction(&run(&off).unwrap().trace, SliceType::Emergency).unwrap();
    assert!(q_on >= q_off, "with reporting {q_on}, without {q_off}");
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut s = default_scenario();
    s.active_fraction = 1.5;
    assert!(run(&s).is_err());
    let mut s = default_scenario();
    s.patients[0].home_rg = 500;
    assert!(run(&s).is_err());
    let mut s = default_scenario();
    s.wlan.target_bler = 0.001;
    assert!(run(&s).is_err());
}
