//! Per-interval radio resource allocation.
//!
//! Three policies share one greedy allocator:
//!
//! * `Basic`: no slicing. Pooled per-device queues ranked by the
//!   proportional-fair metric.
//! * `E2e`: per-flow queues ranked by the M-LWDF metric scaled by the slice
//!   weight (alpha for eMBB, beta for healthcare). No quotas, drops or
//!   priority classes.
//! * `Elastic`: expired packets are dropped at the start of every interval,
//!   per-window quotas come from demand estimates scaled down proportionally
//!   under overload, and the allocation runs priority slices first.
//!
//! The allocator walks queue heads in metric order. Within a queue the
//! metric must not increase from one packet to the next, which holds for
//! both metrics on age-ordered queues.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{LinkState, Packet, SimTime, SliceId, SliceInstance, SliceType, AVG_RATE_FLOOR_BPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Basic,
    E2e,
    Elastic,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Basic, Policy::E2e, Policy::Elastic];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Basic => "basic",
            Policy::E2e => "e2e",
            Policy::Elastic => "elastic",
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(Policy::Basic),
            "e2e" => Ok(Policy::E2e),
            "elastic" => Ok(Policy::Elastic),
            other => Err(format!("unknown policy `{other}` (expected basic, e2e or elastic)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub policy: Policy,
    /// Quota window T.
    pub window_ms: u64,
    /// Weight of the eMBB slice.
    pub alpha: f64,
    /// Weight of the healthcare slices.
    pub beta: f64,
    /// Smoothing factor of the served-rate average, per interval.
    pub ewma_factor: f64,
    /// Devices report their WLAN queueing delay to the RG.
    #[serde(default = "default_true")]
    pub cross_hop_reporting: bool,
}

fn default_true() -> bool {
    true
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            policy: Policy::Elastic,
            window_ms: 100,
            alpha: 1.0,
            beta: 2.0,
            ewma_factor: 0.01,
            cross_hop_reporting: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self, interval_us: u64) -> Result<(), String> {
        if self.window_ms == 0 || !(self.window_ms * 1000).is_multiple_of(interval_us) {
            return Err(format!(
                "window T = {} ms is not a positive multiple of the {} us interval",
                self.window_ms, interval_us
            ));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err("alpha and beta must be positive".into());
        }
        if !(self.ewma_factor > 0.0 && self.ewma_factor < 1.0) {
            return Err(format!("EWMA factor {} outside (0, 1)", self.ewma_factor));
        }
        Ok(())
    }

    pub fn weight_of(&self, slice_type: SliceType) -> f64 {
        if slice_type.is_healthcare() {
            self.beta
        } else {
            self.alpha
        }
    }
}

/// Proportional-fair metric: instantaneous achievable rate over averaged rate.
pub fn pf_metric(inst_rate_bps: f64, link: &LinkState) -> f64 {
    inst_rate_bps / link.avg_rate.max(AVG_RATE_FLOOR_BPS)
}

/// Rate the link would get from `units` units in one interval.
pub fn achievable_rate(link: &LinkState, units: u32, interval: SimTime) -> f64 {
    link.spectral_efficiency * units as f64 / interval.as_secs_f64()
}

/// M-LWDF delay coefficient `-ln(delta) / tau`.
pub fn mlwdf_coefficient(drop_target: f64, tau_s: f64) -> f64 {
    -drop_target.ln() / tau_s
}

/// M-LWDF metric `a * W * r / R` with `a = -ln(delta) / tau`.
pub fn mlwdf_metric(drop_target: f64, tau_s: f64, hol_delay_s: f64, inst_rate_bps: f64, link: &LinkState) -> f64 {
    mlwdf_coefficient(drop_target, tau_s) * hol_delay_s * pf_metric(inst_rate_bps, link)
}

/// Exponentially weighted served-rate update, floored at the rate floor.
pub fn update_avg_rate(link: &LinkState, served_bits: u64, interval: SimTime, ewma_factor: f64) -> LinkState {
    let inst = served_bits as f64 / interval.as_secs_f64();
    let avg = (1.0 - ewma_factor) * link.avg_rate + ewma_factor * inst;
    LinkState {
        avg_rate: avg.max(AVG_RATE_FLOOR_BPS),
        ..*link
    }
}

/// Resource units a slice asks for over one window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DemandEstimate {
    pub slice: SliceId,
    pub healthcare: bool,
    pub requested_units: u64,
}

/// Units needed to carry the larger of the current backlog and the agreed
/// rate over the window, at the slice's mean efficiency (bits/unit).
pub fn estimate_demand(backlog_bits: u64, agg_rate_bps: u64, window: SimTime, mean_efficiency: f64) -> u64 {
    let agreed = agg_rate_bps as u128 * window.as_us() as u128 / 1_000_000;
    let bits = (backlog_bits as u128).max(agreed);
    if bits == 0 {
        return 0;
    }
    (bits as f64 / mean_efficiency.max(f64::MIN_POSITIVE)).ceil() as u64
}

/// Scales window quotas down proportionally when demand exceeds supply.
///
/// Each slice first gets `floor(requested * available / total)`; the units
/// left over go one at a time to the largest fractional parts, healthcare
/// before eMBB on ties and then the lower slice id.
pub fn elastic_scale(demands: &[DemandEstimate], available_units: u64) -> Vec<u64> {
    let total: u128 = demands.iter().map(|d| d.requested_units as u128).sum();
    if total <= available_units as u128 {
        return demands.iter().map(|d| d.requested_units).collect();
    }
    let avail = available_units as u128;
    let mut quotas: Vec<u64> = Vec::with_capacity(demands.len());
    let mut fracs: Vec<(u128, usize)> = Vec::with_capacity(demands.len());
    for (i, d) in demands.iter().enumerate() {
        let num = d.requested_units as u128 * avail;
        quotas.push((num / total) as u64);
        fracs.push((num % total, i));
    }
    let assigned: u64 = quotas.iter().sum();
    let mut left = available_units - assigned;
    fracs.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| demands[b.1].healthcare.cmp(&demands[a.1].healthcare))
            .then_with(|| demands[a.1].slice.cmp(&demands[b.1].slice))
    });
    for &(_, i) in &fracs {
        if left == 0 {
            break;
        }
        quotas[i] += 1;
        left -= 1;
    }
    quotas
}

/// Splits slices into the priority set (emergency first, then regular
/// monitoring) and the non-priority set (eMBB), each ordered by id.
pub fn partition_priority(slices: &[SliceInstance]) -> (Vec<SliceId>, Vec<SliceId>) {
    let mut prio: Vec<&SliceInstance> = slices.iter().filter(|s| s.current_type.is_healthcare()).collect();
    prio.sort_by_key(|s| (s.current_type != SliceType::Emergency, s.id));
    let mut rest: Vec<SliceId> = slices
        .iter()
        .filter(|s| !s.current_type.is_healthcare())
        .map(|s| s.id)
        .collect();
    rest.sort();
    (prio.into_iter().map(|s| s.id).collect(), rest)
}

/// Service order inside a queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueueOrder {
    /// Oldest packet first, by creation time.
    Age,
    /// Arrival order at this node.
    Fifo,
}

/// A packet queue for one flow (or one pooled device buffer).
#[derive(Clone, Debug)]
pub struct PacketQueue {
    packets: VecDeque<Packet>,
    order: QueueOrder,
    deadline_sorted: bool,
    backlog_bits: u64,
}

impl PacketQueue {
    pub fn new(order: QueueOrder) -> Self {
        PacketQueue {
            packets: VecDeque::new(),
            order,
            deadline_sorted: true,
            backlog_bits: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn backlog_bits(&self) -> u64 {
        self.backlog_bits
    }

    pub fn get(&self, k: usize) -> Option<&Packet> {
        self.packets.get(k)
    }

    pub fn get_mut(&mut self, k: usize) -> Option<&mut Packet> {
        self.packets.get_mut(k)
    }

    pub fn front(&self) -> Option<&Packet> {
        self.packets.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    pub fn push(&mut self, packet: Packet) {
        if let Some(last) = self.packets.back() {
            if packet.deadline() < last.deadline() {
                self.deadline_sorted = false;
            }
        }
        self.backlog_bits += packet.remaining_bits;
        match self.order {
            QueueOrder::Fifo => self.packets.push_back(packet),
            QueueOrder::Age => {
                let key = (packet.created_at(), packet.id());
                if self.packets.back().is_none_or(|b| (b.created_at(), b.id()) <= key) {
                    self.packets.push_back(packet);
                } else {
                    let pos = self.packets.partition_point(|p| (p.created_at(), p.id()) <= key);
                    self.packets.insert(pos, packet);
                }
            }
        }
    }

    /// Removes the packet at `k` (used when a packet completes or is lost).
    pub fn remove(&mut self, k: usize) -> Option<Packet> {
        let p = self.packets.remove(k)?;
        self.backlog_bits -= p.remaining_bits;
        if self.packets.is_empty() {
            self.deadline_sorted = true;
        }
        Some(p)
    }

    /// Records `bits` delivered from the packet at `k`.
    pub fn serve(&mut self, k: usize, bits: u64) {
        let p = &mut self.packets[k];
        let bits = bits.min(p.remaining_bits);
        p.remaining_bits -= bits;
        self.backlog_bits -= bits;
    }

    /// Delay of the head packet at `now`, or zero when empty.
    pub fn hol_delay(&self, now: SimTime) -> SimTime {
        self.packets.front().map_or(SimTime::ZERO, |p| p.age(now))
    }

    pub fn drain(&mut self) -> impl Iterator<Item = Packet> + '_ {
        self.backlog_bits = 0;
        self.deadline_sorted = true;
        self.packets.drain(..)
    }
}

/// Removes every packet whose deadline is strictly before `now`, keeping the
/// order of the rest. The engine passes the end of the interval being
/// scheduled, so nothing that survives can be delivered late.
pub fn drop_expired(queue: &mut PacketQueue, now: SimTime) -> Vec<Packet> {
    let mut dropped = Vec::new();
    if queue.deadline_sorted {
        while queue.packets.front().is_some_and(|p| now > p.deadline()) {
            let p = queue.packets.pop_front().expect("front checked");
            queue.backlog_bits -= p.remaining_bits;
            dropped.push(p);
        }
    } else {
        let mut kept = VecDeque::with_capacity(queue.packets.len());
        for p in queue.packets.drain(..) {
            if now > p.deadline() {
                queue.backlog_bits -= p.remaining_bits;
                dropped.push(p);
            } else {
                kept.push_back(p);
            }
        }
        queue.packets = kept;
        queue.deadline_sorted = queue
            .packets
            .iter()
            .zip(queue.packets.iter().skip(1))
            .all(|(a, b)| a.deadline() <= b.deadline());
    }
    if queue.packets.is_empty() {
        queue.deadline_sorted = true;
    }
    dropped
}

/// Static description of one schedulable queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneInfo {
    /// Index into the quota vector.
    pub slice: usize,
    /// Index of the transmitting device, for per-device unit caps.
    pub device: usize,
    pub priority: bool,
}

/// Source of per-packet metrics and unit needs for the allocator.
pub trait LaneHeads {
    /// Metric and unit need of the `k`-th queued packet of `lane`.
    fn packet(&mut self, lane: usize, k: usize) -> Option<(f64, u32)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PassMode {
    /// One uncapped pass over every lane.
    Single,
    /// Priority lanes within quota, then non-priority lanes within quota,
    /// then the surplus to priority lanes, then to non-priority lanes.
    Elastic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grant {
    pub lane: usize,
    pub index: usize,
    pub units: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Allocation {
    /// Grants ordered by lane, then position in the lane.
    pub grants: Vec<Grant>,
    pub used_units: u32,
    /// Units per slice granted inside its quota.
    pub within_quota: Vec<u64>,
    /// Units per slice granted from the interval surplus beyond its quota.
    pub reassigned: Vec<u64>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    metric: f64,
    lane: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.metric
            .total_cmp(&other.metric)
            .then_with(|| other.lane.cmp(&self.lane))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Limits applied to one interval's allocation.
#[derive(Clone, Debug)]
pub struct IntervalLimits<'a> {
    pub budget: u32,
    /// Remaining window quota per slice; only read in `PassMode::Elastic`.
    pub quotas: Option<&'a [u64]>,
    pub device_cap: Option<u32>,
    pub n_slices: usize,
    pub n_devices: usize,
}

/// Greedy allocation of one interval's units to queued packets.
///
/// Within a pass the lane whose head has the highest metric (lowest lane
/// index on ties) receives as many units as its head needs, bounded by the
/// remaining budget, its slice's remaining quota and its device cap. The
/// result is the lexicographically largest feasible allocation in that
/// service order.
pub fn schedule_interval<H: LaneHeads>(
    lanes: &[LaneInfo],
    heads: &mut H,
    mode: PassMode,
    limits: &IntervalLimits<'_>,
) -> Allocation {
    let n = lanes.len();
    let mut next = vec![0usize; n];
    let mut granted_head = vec![0u32; n];
    let mut budget = limits.budget;
    let mut device_left = vec![limits.device_cap.unwrap_or(u32::MAX); limits.n_devices];
    let mut quota_left: Vec<u64> = match (mode, limits.quotas) {
        (PassMode::Elastic, Some(q)) => q.to_vec(),
        _ => vec![u64::MAX; limits.n_slices],
    };
    let mut within = vec![0u64; limits.n_slices];
    let mut reassigned = vec![0u64; limits.n_slices];
    let mut grants: Vec<Grant> = Vec::new();

    let passes: &[(Option<bool>, bool)] = match mode {
        PassMode::Single => &[(None, false)],
        PassMode::Elastic => &[
            (Some(true), true),
            (Some(false), true),
            (Some(true), false),
            (Some(false), false),
        ],
    };

    let mut heap = BinaryHeap::with_capacity(n);
    for &(class, capped) in passes {
        if budget == 0 {
            break;
        }
        heap.clear();
        for (lane, info) in lanes.iter().enumerate() {
            if class.is_some_and(|c| c != info.priority) {
                continue;
            }
            if let Some((metric, _)) = heads.packet(lane, next[lane]) {
                heap.push(HeapEntry { metric, lane });
            }
        }
        while let Some(HeapEntry { lane, .. }) = heap.pop() {
            if budget == 0 {
                break;
            }
            let info = lanes[lane];
            let Some((_, need)) = heads.packet(lane, next[lane]) else {
                continue;
            };
            let want = need.saturating_sub(granted_head[lane]);
            let mut cap = budget.min(device_left[info.device]);
            if capped {
                cap = cap.min(quota_left[info.slice].min(u32::MAX as u64) as u32);
            }
            let give = want.min(cap);
            if give > 0 {
                budget -= give;
                device_left[info.device] -= give;
                if capped {
                    quota_left[info.slice] -= give as u64;
                    within[info.slice] += give as u64;
                } else if mode == PassMode::Elastic {
                    reassigned[info.slice] += give as u64;
                } else {
                    within[info.slice] += give as u64;
                }
                granted_head[lane] += give;
                grants.push(Grant {
                    lane,
                    index: next[lane],
                    units: give,
                });
            }
            if give == want {
                next[lane] += 1;
                granted_head[lane] = 0;
                if let Some((metric, _)) = heads.packet(lane, next[lane]) {
                    heap.push(HeapEntry { metric, lane });
                }
            }
        }
    }

    grants.sort_by_key(|g| (g.lane, g.index));
    grants.dedup_by(|b, a| {
        if a.lane == b.lane && a.index == b.index {
            a.units += b.units;
            true
        } else {
            false
        }
    });
    Allocation {
        used_units: limits.budget - budget,
        grants,
        within_quota: within,
        reassigned,
    }
}

/// Fixed-metric lanes, handy for tests and for driving the allocator
/// outside the engine.
#[derive(Clone, Debug, Default)]
pub struct StaticLanes {
    /// Per lane, the `(metric, need)` of each queued packet in order.
    pub packets: Vec<Vec<(f64, u32)>>,
}

impl LaneHeads for StaticLanes {
    fn packet(&mut self, lane: usize, k: usize) -> Option<(f64, u32)> {
        self.packets.get(lane)?.get(k).copied()
    }
}
