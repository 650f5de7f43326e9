//! Discrete-event simulation of the two-hop uplink: in-home stations to the
//! AP over WLAN, per-slice queues at the residential gateway, and the
//! gateway to the gNB over FWA.
//!
//! Monitoring packets cross both hops; eMBB packets are the household
//! aggregate and start at the gateway. Both hops are scheduled on aligned
//! intervals. A packet finishing its WLAN hop in the interval starting at
//! `t` reaches the gateway queue at `t + interval + access delay`; a packet
//! finishing on FWA is delivered at the end of that interval.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::{
    usable_units, FlowId, FlowSpec, Hop, LinkState, Outcome, Packet, QoSProfile, SimTime, SliceId, SliceInstance,
    SliceState, SliceType, SurvivalRule,
};
use crate::phy::{link_adapt, retx_exhausted, transmit, ChannelModel, DeviceChannel, HopConfig};
use crate::scheduler::{
    achievable_rate, drop_expired, elastic_scale, estimate_demand, mlwdf_metric, pf_metric, schedule_interval,
    update_avg_rate, Allocation, DemandEstimate, IntervalLimits, LaneHeads, LaneInfo, PacketQueue, PassMode, Policy,
    PolicyConfig, QueueOrder,
};
use crate::slicing::{apply_event, complete_change, ActivationProfile, ScheduledChange, SliceEvent, TransitionKind};
use crate::trace::{AllocationRecord, PacketRecord, Trace, TransitionRecord};
use crate::traffic::{build_catalog, EmbbSource, EmbbTrafficModel, FlowCatalog, PeriodicSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientConfig {
    /// Index of the patient's home gateway in `0..n_rg_total`.
    pub home_rg: u32,
}

/// Everything needed to run one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_rg_total: u32,
    pub active_fraction: f64,
    pub patients: Vec<PatientConfig>,
    #[serde(default)]
    pub events: Vec<SliceEvent>,
    #[serde(default)]
    pub activation: ActivationProfile,
    pub wlan: HopConfig,
    pub fwa: HopConfig,
    pub policy: PolicyConfig,
    pub embb: EmbbTrafficModel,
    pub embb_qos: QoSProfile,
    pub catalog: FlowCatalog,
    #[serde(default)]
    pub survival_rule: SurvivalRule,
    pub duration_ms: u64,
    pub warmup_ms: u64,
    pub seed: u64,
    /// Keep a per-grant allocation log in the result.
    #[serde(default)]
    pub record_allocations: bool,
}

impl Scenario {
    /// Gateways carrying traffic: every patient home plus the lowest-indexed
    /// others up to `round(n_rg_total * active_fraction)`.
    pub fn active_rgs(&self) -> Vec<u32> {
        let target = (self.n_rg_total as f64 * self.active_fraction).round() as usize;
        let mut active: Vec<u32> = self.patients.iter().map(|p| p.home_rg).collect();
        active.sort_unstable();
        active.dedup();
        let mut r = 0;
        while active.len() < target && r < self.n_rg_total {
            if !active.contains(&r) {
                active.push(r);
            }
            r += 1;
        }
        active.sort_unstable();
        active
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.n_rg_total == 0 {
            return bad("n_rg_total must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.active_fraction) {
            return bad(format!("active fraction {} outside [0, 1]", self.active_fraction));
        }
        for (i, p) in self.patients.iter().enumerate() {
            if p.home_rg >= self.n_rg_total {
                return bad(format!("patient {i} lives at RG {} of {}", p.home_rg, self.n_rg_total));
            }
        }
        for e in &self.events {
            if e.patient >= self.patients.len() {
                return bad(format!("event at {} ms names unknown patient {}", e.at_ms, e.patient));
            }
        }
        self.wlan.validate().map_err(SimError::InvalidScenario)?;
        self.fwa.validate().map_err(SimError::InvalidScenario)?;
        if self.wlan.grid.hop != Hop::Wlan || self.fwa.grid.hop != Hop::Fwa {
            return bad("hop configs are swapped".into());
        }
        if self.wlan.grid.interval_us != self.fwa.grid.interval_us {
            return bad("WLAN and FWA intervals must be aligned".into());
        }
        let error_free = self.wlan.target_bler == 0.0 && self.fwa.target_bler == 0.0;
        if !error_free && self.wlan.target_bler <= self.fwa.target_bler {
            return bad("WLAN target BLER must exceed the FWA one".into());
        }
        self.policy
            .validate(self.fwa.grid.interval_us)
            .map_err(SimError::InvalidScenario)?;
        self.embb.validate().map_err(SimError::InvalidScenario)?;
        self.embb_qos.validate().map_err(SimError::InvalidScenario)?;
        self.catalog.validate().map_err(SimError::InvalidScenario)?;
        if self.duration_ms == 0 || self.warmup_ms >= self.duration_ms {
            return bad(format!(
                "warm-up {} ms must be shorter than the {} ms run",
                self.warmup_ms, self.duration_ms
            ));
        }
        Ok(())
    }
}

/// Buffer status a station reports to its gateway each WLAN interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BufferStatus {
    pub queued_bits: u64,
    /// Queueing delay of the oldest buffered packet.
    pub hol_delay: SimTime,
}

pub fn report_buffer_status(queue: &PacketQueue, now: SimTime) -> BufferStatus {
    BufferStatus {
        queued_bits: queue.backlog_bits(),
        hol_delay: queue.hol_delay(now),
    }
}

/// Event queue ordered by time; equal times pop in insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(SimTime, u64, usize)>>,
    payloads: Vec<Option<E>>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            payloads: Vec::new(),
            seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: SimTime, event: E) {
        let slot = self.payloads.len();
        self.payloads.push(Some(event));
        self.heap.push(Reverse((at, self.seq, slot)));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let Reverse((at, _, slot)) = self.heap.pop()?;
        let ev = self.payloads[slot].take().expect("each slot pops once");
        if self.heap.is_empty() {
            self.payloads.clear();
        }
        Some((at, ev))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse((t, _, _))| *t)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Clone, Debug)]
enum Event {
    Tick,
    SliceRequest(usize),
    SliceEffective { patient: usize, change: ScheduledChange },
    ChannelRedraw(Hop),
    End,
}

/// Summary counters of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub intervals: u64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped_expired: u64,
    pub lost_retx: u64,
    pub in_flight: u64,
    /// Largest `allocated - usable` seen in any interval on any hop.
    pub max_overallocation: i64,
    pub fwa_units_used: u64,
    pub fwa_units_usable: u64,
}

#[derive(Clone, Debug, Default)]
pub struct RunResult {
    pub trace: Trace,
    pub transitions: Vec<TransitionRecord>,
    pub stats: RunStats,
    pub allocations: Vec<AllocationRecord>,
}

const STREAM_CHANNEL_WLAN: u64 = 1 << 40;
const STREAM_CHANNEL_FWA: u64 = 2 << 40;
const STREAM_BLER_WLAN: u64 = 3 << 40;
const STREAM_BLER_FWA: u64 = 4 << 40;
const STREAM_TRAFFIC: u64 = 5 << 40;
const STREAM_PHASE: u64 = 6 << 40;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

struct Device {
    link: LinkState,
    channel: DeviceChannel<ChaCha8Rng>,
    bler_rng: ChaCha8Rng,
    served_bits: u64,
}

struct Lane {
    queue: PacketQueue,
    info: LaneInfo,
}

/// One scheduling domain: a patient's WLAN cell or the FWA sector.
struct HopState {
    cfg: HopConfig,
    devices: Vec<Device>,
    lanes: Vec<Lane>,
    usable: u32,
    quota_left: Vec<u64>,
}

impl HopState {
    fn new(cfg: &HopConfig, n_slices: usize) -> Self {
        HopState {
            usable: usable_units(&cfg.grid),
            cfg: cfg.clone(),
            devices: Vec::new(),
            lanes: Vec::new(),
            quota_left: vec![0; n_slices],
        }
    }

    fn add_device(&mut self, seed: u64, channel_stream: u64, bler_stream: u64) -> usize {
        self.devices.push(Device {
            link: LinkState::new(
                self.cfg.channel.mean_efficiency * self.cfg.symbols_per_unit,
                self.cfg.target_bler,
            ),
            channel: DeviceChannel::new(stream(seed, channel_stream)),
            bler_rng: stream(seed, bler_stream),
            served_bits: 0,
        });
        self.devices.len() - 1
    }

    fn add_lane(&mut self, info: LaneInfo, order: QueueOrder) -> usize {
        self.lanes.push(Lane {
            queue: PacketQueue::new(order),
            info,
        });
        self.lanes.len() - 1
    }

    fn redraw(&mut self, now: SimTime) {
        for d in &mut self.devices {
            d.link = link_adapt(&d.link, &mut d.channel, now, &self.cfg);
        }
    }

    fn device_rate(&self, device: usize) -> f64 {
        let units = self
            .cfg
            .max_units_per_device
            .map_or(self.usable, |c| c.min(self.usable));
        achievable_rate(&self.devices[device].link, units, self.cfg.grid.interval())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FlowKind {
    Regular,
    Emergency,
    Embb,
}

enum Source {
    Periodic(PeriodicSource),
    Embb(Box<EmbbSource<ChaCha8Rng>>),
}

struct FlowRuntime {
    name: String,
    kind: FlowKind,
    qos: QoSProfile,
    survival: SimTime,
    slice: usize,
    patient: Option<usize>,
    /// Lane on the patient's WLAN cell (monitoring flows only).
    wlan_lane: Option<usize>,
    /// Lane on the FWA hop.
    fwa_lane: usize,
    source: Source,
    spec: Option<FlowSpec>,
    active: bool,
}

struct Patient {
    slice: usize,
    wlan: HopState,
    pending_change: Option<ScheduledChange>,
}

/// Per-packet metric view handed to the allocator.
struct Heads<'a> {
    hop: &'a HopState,
    flows: &'a [FlowRuntime],
    slices: &'a [SliceInstance],
    policy: &'a PolicyConfig,
    now: SimTime,
    at_gateway: bool,
    device_rate: &'a [f64],
}

impl LaneHeads for Heads<'_> {
    fn packet(&mut self, lane: usize, k: usize) -> Option<(f64, u32)> {
        let l = &self.hop.lanes[lane];
        let p = l.queue.get(k)?;
        let dev = &self.hop.devices[l.info.device];
        let need = dev.link.units_for(p.remaining_bits).max(1);
        let rate = self.device_rate[l.info.device];
        let metric = match self.policy.policy {
            Policy::Basic => pf_metric(rate, &dev.link),
            Policy::E2e | Policy::Elastic => {
                let flow = &self.flows[p.flow().0 as usize];
                let (wait, tau) = if self.at_gateway && !self.policy.cross_hop_reporting {
                    let enq = p.enqueued_rg_at.unwrap_or(p.created_at());
                    (self.now.saturating_sub(enq), flow.qos.latency_budget())
                } else if self.at_gateway {
                    (p.age(self.now), flow.qos.latency_budget().saturating_sub(p.hop1_delay))
                } else {
                    (p.age(self.now), flow.qos.latency_budget())
                };
                let tau_s = tau.as_secs_f64().max(1e-3);
                let weight = self.policy.weight_of(self.slices[l.info.slice].current_type);
                weight * mlwdf_metric(flow.qos.drop_target, tau_s, wait.as_secs_f64(), rate, &dev.link)
            }
        };
        Some((metric, need))
    }
}

struct Sim {
    scenario: Scenario,
    now: SimTime,
    end: SimTime,
    interval: SimTime,
    slices: Vec<SliceInstance>,
    flows: Vec<FlowRuntime>,
    patients: Vec<Patient>,
    fwa: HopState,
    in_transit: VecDeque<(SimTime, Packet)>,
    next_packet_id: u64,
    records: Vec<PacketRecord>,
    transitions: Vec<TransitionRecord>,
    allocations: Vec<AllocationRecord>,
    stats: RunStats,
    events: EventQueue<Event>,
    rate_scratch: Vec<f64>,
}

/// Runs one scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunResult, SimError> {
    scenario.validate()?;
    let mut sim = Sim::build(scenario.clone())?;
    sim.run_loop();
    Ok(sim.finish())
}

impl Sim {
    fn build(scenario: Scenario) -> Result<Self, SimError> {
        let seed = scenario.seed;
        let interval = scenario.fwa.grid.interval();
        let active = scenario.active_rgs();
        let n_slices = 1 + scenario.patients.len();
        let order = match scenario.policy.policy {
            Policy::Basic => QueueOrder::Fifo,
            _ => QueueOrder::Age,
        };

        let mut slices = vec![SliceInstance {
            id: SliceId(0),
            current_type: SliceType::Embb,
            flows: Vec::new(),
            priority: false,
            weight: scenario.policy.alpha,
            state: SliceState::Active,
        }];
        for p in 0..scenario.patients.len() {
            slices.push(SliceInstance {
                id: SliceId(1 + p as u32),
                current_type: SliceType::RegularMonitoring,
                flows: Vec::new(),
                priority: true,
                weight: scenario.policy.beta,
                state: SliceState::Active,
            });
        }

        let mut fwa = HopState::new(&scenario.fwa, n_slices);
        let mut rg_device = std::collections::HashMap::new();
        for &rg in &active {
            let d = fwa.add_device(seed, STREAM_CHANNEL_FWA | rg as u64, STREAM_BLER_FWA | rg as u64);
            rg_device.insert(rg, d);
        }
        // Basic pools each gateway's traffic into a single FIFO.
        let mut pooled_lane = std::collections::HashMap::new();
        if scenario.policy.policy == Policy::Basic {
            for &rg in &active {
                let dev = rg_device[&rg];
                let lane = fwa.add_lane(
                    LaneInfo {
                        slice: 0,
                        device: dev,
                        priority: false,
                    },
                    QueueOrder::Fifo,
                );
                pooled_lane.insert(rg, lane);
            }
        }

        let mut flows = Vec::new();
        let mut patients = Vec::new();
        for &rg in &active {
            let fwa_lane = match pooled_lane.get(&rg) {
                Some(&l) => l,
                None => fwa.add_lane(
                    LaneInfo {
                        slice: 0,
                        device: rg_device[&rg],
                        priority: false,
                    },
                    order,
                ),
            };
            let src = EmbbSource::new(
                scenario.embb.clone(),
                SimTime::ZERO,
                stream(seed, STREAM_TRAFFIC | rg as u64),
            )
            .map_err(SimError::InvalidScenario)?;
            slices[0].flows.push(FlowId(flows.len() as u32));
            flows.push(FlowRuntime {
                name: format!("embb rg{rg}"),
                kind: FlowKind::Embb,
                qos: scenario.embb_qos.clone(),
                survival: scenario.embb_qos.survival(scenario.survival_rule),
                slice: 0,
                patient: None,
                wlan_lane: None,
                fwa_lane,
                source: Source::Embb(Box::new(src)),
                spec: None,
                active: true,
            });
        }

        for (pi, pc) in scenario.patients.iter().enumerate() {
            let slice = 1 + pi;
            let mut wlan = HopState::new(&scenario.wlan, n_slices);
            let catalog_flows: Vec<(&FlowSpec, FlowKind)> = scenario
                .catalog
                .regular_flows
                .iter()
                .map(|f| (f, FlowKind::Regular))
                .chain(
                    scenario
                        .catalog
                        .emergency_flows
                        .iter()
                        .map(|f| (f, FlowKind::Emergency)),
                )
                .collect();
            for (fi, (spec, kind)) in catalog_flows.into_iter().enumerate() {
                let sta_id = ((pi as u64) << 16) | fi as u64;
                let dev = wlan.add_device(seed, STREAM_CHANNEL_WLAN | sta_id, STREAM_BLER_WLAN | sta_id);
                let wlan_lane = wlan.add_lane(
                    LaneInfo {
                        slice,
                        device: dev,
                        priority: true,
                    },
                    QueueOrder::Age,
                );
                let fwa_lane = match pooled_lane.get(&pc.home_rg) {
                    Some(&l) => l,
                    None => fwa.add_lane(
                        LaneInfo {
                            slice,
                            device: rg_device[&pc.home_rg],
                            priority: true,
                        },
                        order,
                    ),
                };
                let mut phase_rng = stream(seed, STREAM_PHASE | sta_id);
                let src = PeriodicSource::with_random_phase(spec, SimTime::ZERO, &mut phase_rng);
                slices[slice].flows.push(FlowId(flows.len() as u32));
                flows.push(FlowRuntime {
                    name: spec.device_name.clone(),
                    kind,
                    qos: spec.qos.clone(),
                    survival: spec.qos.survival(scenario.survival_rule),
                    slice,
                    patient: Some(pi),
                    wlan_lane: Some(wlan_lane),
                    fwa_lane,
                    source: Source::Periodic(src),
                    spec: Some(spec.clone()),
                    active: kind == FlowKind::Regular,
                });
            }
            patients.push(Patient {
                slice,
                wlan,
                pending_change: None,
            });
        }

        let end = SimTime::from_ms(scenario.duration_ms);
        let mut events = EventQueue::new();
        let mut evs: Vec<(usize, &SliceEvent)> = scenario.events.iter().enumerate().collect();
        evs.sort_by_key(|(i, e)| (e.at_ms, *i));
        for (i, e) in evs {
            if e.at() < end {
                events.push(e.at(), Event::SliceRequest(i));
            }
        }
        events.push(SimTime::ZERO, Event::ChannelRedraw(Hop::Wlan));
        events.push(SimTime::ZERO, Event::ChannelRedraw(Hop::Fwa));
        events.push(SimTime::ZERO, Event::Tick);
        events.push(end, Event::End);

        Ok(Sim {
            now: SimTime::ZERO,
            end,
            interval,
            slices,
            flows,
            patients,
            fwa,
            in_transit: VecDeque::new(),
            next_packet_id: 0,
            records: Vec::new(),
            transitions: Vec::new(),
            allocations: Vec::new(),
            stats: RunStats::default(),
            events,
            rate_scratch: Vec::new(),
            scenario,
        })
    }

    fn run_loop(&mut self) {
        while let Some((at, ev)) = self.events.pop() {
            self.now = at;
            match ev {
                Event::End => break,
                Event::Tick => {
                    self.tick();
                    let next = at + self.interval;
                    if next < self.end {
                        self.events.push(next, Event::Tick);
                    }
                }
                Event::SliceRequest(i) => self.slice_request(i),
                Event::SliceEffective { patient, change } => self.slice_effective(patient, change),
                Event::ChannelRedraw(hop) => {
                    let period = match hop {
                        Hop::Wlan => {
                            for p in &mut self.patients {
                                p.wlan.redraw(at);
                            }
                            self.scenario.wlan.channel.coherence_ms
                        }
                        Hop::Fwa => {
                            self.fwa.redraw(at);
                            self.scenario.fwa.channel.coherence_ms
                        }
                    };
                    let next = at + SimTime::from_ms(period);
                    if next < self.end {
                        self.events.push(next, Event::ChannelRedraw(hop));
                    }
                }
            }
        }
    }

    fn slice_request(&mut self, i: usize) {
        let ev = self.scenario.events[i].clone();
        let p = &mut self.patients[ev.patient];
        let slice = &mut self.slices[p.slice];
        match apply_event(slice, &ev, &self.scenario.activation) {
            Ok(change) => {
                p.pending_change = Some(change);
                if change.effective_at <= self.now {
                    self.slice_effective(ev.patient, change);
                } else {
                    self.events.push(
                        change.effective_at,
                        Event::SliceEffective {
                            patient: ev.patient,
                            change,
                        },
                    );
                }
            }
            Err(e) => {
                warn!("t={} patient {}: {:?} rejected: {e}", self.now, ev.patient, ev.kind);
                self.transitions.push(TransitionRecord {
                    patient: ev.patient,
                    kind: ev.kind,
                    requested_us: ev.at().as_us(),
                    effective_us: None,
                });
            }
        }
    }

    fn slice_effective(&mut self, patient: usize, change: ScheduledChange) {
        self.generate_arrivals(change.effective_at);
        let p = &mut self.patients[patient];
        p.pending_change = None;
        complete_change(&mut self.slices[p.slice], &change);
        let on = change.new_type == SliceType::Emergency;
        for f in self
            .flows
            .iter_mut()
            .filter(|f| f.patient == Some(patient) && f.kind == FlowKind::Emergency)
        {
            f.active = on;
            if let (true, Some(spec)) = (on, &f.spec) {
                f.source = Source::Periodic(PeriodicSource::new(spec, change.effective_at));
            }
        }
        self.transitions.push(TransitionRecord {
            patient,
            kind: if on {
                TransitionKind::Promote
            } else {
                TransitionKind::Demote
            },
            requested_us: change.requested_at.as_us(),
            effective_us: Some(change.effective_at.as_us()),
        });
    }

    fn new_packet(&mut self, flow: usize, at: SimTime, bits: u64) -> Packet {
        let f = &self.flows[flow];
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        self.stats.generated += 1;
        Packet::new(
            id,
            FlowId(flow as u32),
            SliceId(f.slice as u32),
            self.slices[f.slice].current_type,
            bits,
            at,
            f.survival,
        )
    }

    /// Generates every packet of the active flows created strictly before `before`.
    fn generate_arrivals(&mut self, before: SimTime) {
        for fi in 0..self.flows.len() {
            if !self.flows[fi].active {
                continue;
            }
            loop {
                let next = match &mut self.flows[fi].source {
                    Source::Periodic(s) => {
                        if s.peek() >= before {
                            None
                        } else {
                            Some(s.next_packet())
                        }
                    }
                    Source::Embb(s) => match s.peek() {
                        Some(t) if t < before => s.next_arrival(),
                        _ => None,
                    },
                };
                let Some((at, bits)) = next else { break };
                let mut p = self.new_packet(fi, at, bits);
                let f = &self.flows[fi];
                match (f.patient, f.wlan_lane) {
                    (Some(pi), Some(lane)) => self.patients[pi].wlan.lanes[lane].queue.push(p),
                    _ => {
                        p.enqueued_rg_at = Some(at);
                        self.fwa.lanes[f.fwa_lane].queue.push(p);
                    }
                }
            }
        }
    }

    fn ingest_arrivals(&mut self) {
        let now = self.now;
        self.generate_arrivals(now + SimTime(1));
        while self.in_transit.front().is_some_and(|(t, _)| *t <= now) {
            let (t, mut p) = self.in_transit.pop_front().expect("front checked");
            p.enqueued_rg_at = Some(t);
            p.hop1_delay = t - p.created_at();
            p.retx = 0;
            p.remaining_bits = p.size_bits();
            let lane = self.flows[p.flow().0 as usize].fwa_lane;
            self.fwa.lanes[lane].queue.push(p);
        }
    }

    fn record(&mut self, p: &Packet, outcome: Outcome) {
        match outcome {
            Outcome::Delivered => self.stats.delivered += 1,
            Outcome::DroppedExpired => self.stats.dropped_expired += 1,
            Outcome::LostRetx => self.stats.lost_retx += 1,
            Outcome::InFlight => self.stats.in_flight += 1,
        }
        let rg_wait = match (p.enqueued_rg_at, p.hop2_start) {
            (Some(e), Some(s)) => Some((s - e).as_us()),
            _ => None,
        };
        self.records.push(PacketRecord {
            packet_id: p.id(),
            slice_type: p.slice_type(),
            flow: p.flow().0,
            created_us: p.created_at().as_us(),
            deadline_us: p.deadline().as_us(),
            hop1_delay_us: p.enqueued_rg_at.map(|_| p.hop1_delay.as_us()),
            rg_wait_us: rg_wait,
            delivered_us: p.delivered_at.map(|d| d.as_us()),
            outcome,
        });
    }

    fn tick(&mut self) {
        self.stats.intervals += 1;
        self.ingest_arrivals();
        for pi in 0..self.patients.len() {
            self.schedule_hop(Some(pi));
        }
        self.schedule_hop(None);
    }

    /// Schedules one interval on the patient's WLAN cell (`Some`) or the
    /// FWA sector (`None`).
    fn schedule_hop(&mut self, cell: Option<usize>) {
        let now = self.now;
        let interval = self.interval;
        let policy = self.scenario.policy.clone();
        let access = SimTime(self.scenario.wlan.access_delay_us);
        let mut hop = match cell {
            Some(pi) => std::mem::replace(&mut self.patients[pi].wlan, HopState::new(&self.scenario.wlan, 0)),
            None => std::mem::replace(&mut self.fwa, HopState::new(&self.scenario.fwa, 0)),
        };
        let at_gateway = cell.is_none();

        if policy.policy == Policy::Elastic {
            // Earliest possible delivery for a packet served in this interval.
            let horizon = if at_gateway {
                now + interval
            } else {
                now + interval + access + interval
            };
            for li in 0..hop.lanes.len() {
                for p in drop_expired(&mut hop.lanes[li].queue, horizon) {
                    self.record(&p, Outcome::DroppedExpired);
                }
            }
            let window = SimTime::from_ms(policy.window_ms);
            if now.as_us().is_multiple_of(window.as_us()) {
                self.refresh_quotas(&mut hop, cell, window);
            }
        }

        self.rate_scratch.clear();
        for d in 0..hop.devices.len() {
            let r = hop.device_rate(d);
            self.rate_scratch.push(r);
        }
        let lanes: Vec<LaneInfo> = hop.lanes.iter().map(|l| l.info).collect();
        let mode = if policy.policy == Policy::Elastic {
            PassMode::Elastic
        } else {
            PassMode::Single
        };
        let alloc: Allocation = {
            let mut heads = Heads {
                hop: &hop,
                flows: &self.flows,
                slices: &self.slices,
                policy: &policy,
                now,
                at_gateway,
                device_rate: &self.rate_scratch,
            };
            let limits = IntervalLimits {
                budget: hop.usable,
                quotas: Some(&hop.quota_left),
                device_cap: hop.cfg.max_units_per_device,
                n_slices: self.slices.len(),
                n_devices: hop.devices.len(),
            };
            schedule_interval(&lanes, &mut heads, mode, &limits)
        };
        self.stats.max_overallocation = self
            .stats
            .max_overallocation
            .max(alloc.used_units as i64 - hop.usable as i64);
        if at_gateway {
            self.stats.fwa_units_used += alloc.used_units as u64;
            self.stats.fwa_units_usable += hop.usable as u64;
        }
        if mode == PassMode::Elastic {
            for (q, used) in hop.quota_left.iter_mut().zip(&alloc.within_quota) {
                *q = q.saturating_sub(*used);
            }
        }

        // Transmit. Grants are ordered by lane then position, so removals
        // inside a lane are applied back to front.
        let mut finished: Vec<(usize, usize, Outcome)> = Vec::new();
        for g in &alloc.grants {
            let lane = &mut hop.lanes[g.lane];
            let dev = &mut hop.devices[lane.info.device];
            let p = lane.queue.get_mut(g.index).expect("granted packet is queued");
            if at_gateway && p.hop2_start.is_none() {
                p.hop2_start = Some(now);
            }
            if self.scenario.record_allocations {
                self.allocations.push(AllocationRecord {
                    time_us: now.as_us(),
                    hop: hop.cfg.hop(),
                    cell,
                    slice: p.slice().0,
                    packet_id: p.id(),
                    units: g.units,
                });
            }
            let out = transmit(p.remaining_bits, g.units, &dev.link, &mut dev.bler_rng);
            dev.served_bits += out.bits_served;
            if !out.success {
                p.retx += 1;
                if retx_exhausted(p.retx, &hop.cfg) {
                    finished.push((g.lane, g.index, Outcome::LostRetx));
                }
                continue;
            }
            lane.queue.serve(g.index, out.bits_served);
            if lane.queue.get(g.index).is_some_and(|p| p.remaining_bits == 0) {
                finished.push((g.lane, g.index, Outcome::Delivered));
            }
        }
        finished.sort_by_key(|&(l, i, _)| (l, Reverse(i)));
        let done_at = now + interval;
        for (l, i, outcome) in finished {
            let mut p = hop.lanes[l].queue.remove(i).expect("finished packet is queued");
            match outcome {
                Outcome::Delivered if at_gateway => {
                    p.delivered_at = Some(done_at);
                    self.record(&p, Outcome::Delivered);
                }
                Outcome::Delivered => self.in_transit.push_back((done_at + access, p)),
                other => self.record(&p, other),
            }
        }

        for d in &mut hop.devices {
            d.link = update_avg_rate(&d.link, d.served_bits, interval, policy.ewma_factor);
            d.served_bits = 0;
        }

        match cell {
            Some(pi) => self.patients[pi].wlan = hop,
            None => self.fwa = hop,
        }
    }

    fn refresh_quotas(&mut self, hop: &mut HopState, cell: Option<usize>, window: SimTime) {
        let n_slices = self.slices.len();
        let mut backlog = vec![0u64; n_slices];
        let mut eff_sum = vec![0.0f64; n_slices];
        let mut eff_n = vec![0usize; n_slices];
        let mut seen = vec![usize::MAX; hop.devices.len()];
        for l in &hop.lanes {
            backlog[l.info.slice] += l.queue.backlog_bits();
            if seen[l.info.device] != l.info.slice {
                seen[l.info.device] = l.info.slice;
                eff_sum[l.info.slice] += hop.devices[l.info.device].link.spectral_efficiency;
                eff_n[l.info.slice] += 1;
            }
        }
        if cell.is_none() && self.scenario.policy.cross_hop_reporting {
            // Data already buffered at the stations is announced to the RG.
            for p in &self.patients {
                let queued: u64 = p
                    .wlan
                    .lanes
                    .iter()
                    .map(|l| report_buffer_status(&l.queue, self.now).queued_bits)
                    .sum();
                backlog[p.slice] += queued;
            }
        }
        let mut rate = vec![0u64; n_slices];
        for f in self.flows.iter().filter(|f| f.active) {
            let on_hop = match cell {
                Some(pi) => f.patient == Some(pi),
                None => true,
            };
            if on_hop {
                rate[f.slice] += f.qos.rate_bps;
            }
        }
        let mut demands = Vec::new();
        let mut idx = Vec::new();
        for s in 0..n_slices {
            if eff_n[s] == 0 {
                continue;
            }
            let eff = eff_sum[s] / eff_n[s] as f64;
            demands.push(DemandEstimate {
                slice: self.slices[s].id,
                healthcare: self.slices[s].current_type.is_healthcare(),
                requested_units: estimate_demand(backlog[s], rate[s], window, eff),
            });
            idx.push(s);
        }
        let per_window = window.as_us() / self.interval.as_us();
        let available = hop.usable as u64 * per_window;
        let quotas = elastic_scale(&demands, available);
        hop.quota_left.iter_mut().for_each(|q| *q = 0);
        for (s, q) in idx.into_iter().zip(quotas) {
            hop.quota_left[s] = q;
        }
    }

    fn finish(mut self) -> RunResult {
        let mut leftovers: Vec<Packet> = Vec::new();
        for p in &mut self.patients {
            for l in &mut p.wlan.lanes {
                leftovers.extend(l.queue.drain());
            }
        }
        for l in &mut self.fwa.lanes {
            leftovers.extend(l.queue.drain());
        }
        leftovers.extend(self.in_transit.drain(..).map(|(_, p)| p));
        for p in leftovers {
            self.record(&p, Outcome::InFlight);
        }
        self.records.sort_by_key(|r| r.packet_id);
        RunResult {
            trace: Trace {
                flow_names: self.flows.iter().map(|f| f.name.clone()).collect(),
                records: self.records,
                warmup_us: SimTime::from_ms(self.scenario.warmup_ms).as_us(),
                end_us: self.end.as_us(),
            },
            transitions: self.transitions,
            stats: self.stats,
            allocations: self.allocations,
        }
    }
}

/// Default scenario: the case-study sector with the built-in catalog.
pub fn default_scenario() -> Scenario {
    let wlan = HopConfig {
        grid: crate::model::ResourceGrid {
            hop: Hop::Wlan,
            interval_us: 1_000,
            units_per_interval: 100,
            legacy_reserved_fraction: 0.3,
        },
        target_bler: 0.1,
        max_retx: 8,
        symbols_per_unit: 240.0,
        max_units_per_device: None,
        access_delay_us: 1_000,
        channel: ChannelModel::wlan_default(),
    };
    let fwa = HopConfig {
        grid: crate::model::ResourceGrid {
            hop: Hop::Fwa,
            interval_us: 1_000,
            units_per_interval: 1_600,
            legacy_reserved_fraction: 0.0,
        },
        target_bler: 0.01,
        max_retx: 8,
        symbols_per_unit: 62.5,
        max_units_per_device: Some(200),
        access_delay_us: 0,
        channel: ChannelModel::fwa_default(),
    };
    Scenario {
        n_rg_total: 88,
        active_fraction: 0.3,
        patients: vec![PatientConfig { home_rg: 0 }, PatientConfig { home_rg: 1 }],
        events: vec![
            SliceEvent {
                at_ms: 30_000,
                kind: TransitionKind::Promote,
                patient: 0,
                source: Some("network".into()),
            },
            SliceEvent {
                at_ms: 90_000,
                kind: TransitionKind::Demote,
                patient: 0,
                source: Some("network".into()),
            },
        ],
        activation: ActivationProfile::default(),
        wlan,
        fwa,
        policy: PolicyConfig::default(),
        embb: EmbbTrafficModel::default(),
        embb_qos: QoSProfile {
            e2e_latency_ms: 150,
            jitter_ms: 50,
            survival_ms: 200,
            rate_bps: 5_000_000,
            drop_target: 0.1,
        },
        catalog: build_catalog(),
        survival_rule: SurvivalRule::Table,
        duration_ms: 300_000,
        warmup_ms: 2_000,
        seed: 1,
        record_allocations: false,
    }
}
