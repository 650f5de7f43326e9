//! Shared domain types: time base, QoS profiles, slices, packets and the
//! abstract resource grids used by both radio hops.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Simulation time in integer microseconds since the start of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Converts fractional seconds, rounding to the nearest microsecond.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round().max(0.0) as u64)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Which column defines a flow's survival deadline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalRule {
    /// The tabulated survival time, verbatim.
    #[default]
    Table,
    /// End-to-end latency budget plus jitter budget.
    Sum,
}

/// Per-flow QoS requirements. Millisecond fields are exact integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoSProfile {
    pub e2e_latency_ms: u64,
    pub jitter_ms: u64,
    pub survival_ms: u64,
    pub rate_bps: u64,
    /// Target probability of exceeding the delay budget (M-LWDF `delta`).
    pub drop_target: f64,
}

impl QoSProfile {
    pub fn validate(&self) -> Result<(), String> {
        if self.e2e_latency_ms == 0 || self.jitter_ms == 0 || self.survival_ms == 0 {
            return Err("latency, jitter and survival budgets must be positive".into());
        }
        if self.rate_bps == 0 {
            return Err("aggregate rate must be positive".into());
        }
        if !(self.drop_target > 0.0 && self.drop_target < 1.0) {
            return Err(format!("drop target {} outside (0, 1)", self.drop_target));
        }
        Ok(())
    }

    pub fn survival(&self, rule: SurvivalRule) -> SimTime {
        match rule {
            SurvivalRule::Table => SimTime::from_ms(self.survival_ms),
            SurvivalRule::Sum => SimTime::from_ms(self.e2e_latency_ms + self.jitter_ms),
        }
    }

    pub fn latency_budget(&self) -> SimTime {
        SimTime::from_ms(self.e2e_latency_ms)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceType {
    Embb,
    RegularMonitoring,
    Emergency,
}

impl SliceType {
    pub const ALL: [SliceType; 3] = [SliceType::Embb, SliceType::RegularMonitoring, SliceType::Emergency];

    pub fn is_healthcare(self) -> bool {
        !matches!(self, SliceType::Embb)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SliceType::Embb => "embb",
            SliceType::RegularMonitoring => "regular_monitoring",
            SliceType::Emergency => "emergency",
        }
    }
}

impl fmt::Display for SliceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SliceType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "embb" => Ok(SliceType::Embb),
            "regular_monitoring" | "regular" => Ok(SliceType::RegularMonitoring),
            "emergency" => Ok(SliceType::Emergency),
            other => Err(format!("unknown slice type `{other}`")),
        }
    }
}

/// One monitored device stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub device_name: String,
    pub qos: QoSProfile,
    /// Slice group the flow belongs to: regular monitoring flows run for the
    /// whole session, emergency flows only while the slice is promoted.
    pub slice_type: SliceType,
    pub packet_period_ms: u64,
    pub packet_bits: u64,
}

impl FlowSpec {
    /// Builds a periodic flow whose packet size reproduces `qos.rate_bps` exactly.
    pub fn periodic(device_name: &str, slice_type: SliceType, qos: QoSProfile, period_ms: u64) -> Result<Self, String> {
        let bits = qos.rate_bps * period_ms;
        if period_ms == 0 || !bits.is_multiple_of(1000) {
            return Err(format!(
                "{device_name}: period {period_ms} ms does not packetize {} bit/s exactly",
                qos.rate_bps
            ));
        }
        Ok(FlowSpec {
            device_name: device_name.to_string(),
            qos,
            slice_type,
            packet_period_ms: period_ms,
            packet_bits: bits / 1000,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        self.qos.validate().map_err(|e| format!("{}: {e}", self.device_name))?;
        if self.packet_period_ms == 0 || self.packet_bits == 0 {
            return Err(format!("{}: empty packetization", self.device_name));
        }
        if self.packet_bits * 1000 != self.qos.rate_bps * self.packet_period_ms {
            return Err(format!(
                "{}: {} bits every {} ms is not {} bit/s",
                self.device_name, self.packet_bits, self.packet_period_ms, self.qos.rate_bps
            ));
        }
        Ok(())
    }

    pub fn period(&self) -> SimTime {
        SimTime::from_ms(self.packet_period_ms)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceState {
    Active,
    Promoting,
    Demoting,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowId(pub u32);

/// A slice instance as seen by the schedulers.
#[derive(Clone, Debug)]
pub struct SliceInstance {
    pub id: SliceId,
    pub current_type: SliceType,
    pub flows: Vec<FlowId>,
    pub priority: bool,
    pub weight: f64,
    pub state: SliceState,
}

/// Lifecycle outcome of a packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    DroppedExpired,
    LostRetx,
    InFlight,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Delivered => "delivered",
            Outcome::DroppedExpired => "dropped_expired",
            Outcome::LostRetx => "lost_retx",
            Outcome::InFlight => "in_flight",
        }
    }
}

impl std::str::FromStr for Outcome {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delivered" => Ok(Outcome::Delivered),
            "dropped_expired" => Ok(Outcome::DroppedExpired),
            "lost_retx" => Ok(Outcome::LostRetx),
            "in_flight" => Ok(Outcome::InFlight),
            other => Err(format!("unknown outcome `{other}`")),
        }
    }
}

/// An application message travelling the uplink.
///
/// Provenance fields (id, flow, size, creation time, deadline) are fixed at
/// construction and only readable afterwards.
#[derive(Clone, Debug)]
pub struct Packet {
    id: u64,
    flow: FlowId,
    slice: SliceId,
    slice_type: SliceType,
    size_bits: u64,
    created_at: SimTime,
    deadline: SimTime,
    /// Bits still to be delivered on the current hop.
    pub remaining_bits: u64,
    /// Delay accumulated before the packet entered the RG queue.
    pub hop1_delay: SimTime,
    pub enqueued_rg_at: Option<SimTime>,
    /// Start of the first FWA interval that carried bits of this packet.
    pub hop2_start: Option<SimTime>,
    pub delivered_at: Option<SimTime>,
    /// Failed transmission attempts on the current hop.
    pub retx: u32,
}

impl Packet {
    pub fn new(
        id: u64,
        flow: FlowId,
        slice: SliceId,
        slice_type: SliceType,
        size_bits: u64,
        created_at: SimTime,
        survival: SimTime,
    ) -> Self {
        Packet {
            id,
            flow,
            slice,
            slice_type,
            size_bits,
            created_at,
            deadline: created_at + survival,
            remaining_bits: size_bits,
            hop1_delay: SimTime::ZERO,
            enqueued_rg_at: None,
            hop2_start: None,
            delivered_at: None,
            retx: 0,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }
    pub fn flow(&self) -> FlowId {
        self.flow
    }
    pub fn slice(&self) -> SliceId {
        self.slice
    }
    pub fn slice_type(&self) -> SliceType {
        self.slice_type
    }
    pub fn size_bits(&self) -> u64 {
        self.size_bits
    }
    pub fn created_at(&self) -> SimTime {
        self.created_at
    }
    pub fn deadline(&self) -> SimTime {
        self.deadline
    }

    /// Accumulated delay at `now`, including time spent on earlier hops.
    pub fn age(&self, now: SimTime) -> SimTime {
        now.saturating_sub(self.created_at)
    }
}

/// Survival deadline of a packet created at `created_at` on a flow with `qos`.
pub fn deadline_of(created_at: SimTime, qos: &QoSProfile, rule: SurvivalRule) -> SimTime {
    created_at + qos.survival(rule)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hop {
    Wlan,
    Fwa,
}

impl Hop {
    pub fn as_str(self) -> &'static str {
        match self {
            Hop::Wlan => "wlan",
            Hop::Fwa => "fwa",
        }
    }
}

/// Per-interval supply of abstract resource units on one hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceGrid {
    pub hop: Hop,
    pub interval_us: u64,
    pub units_per_interval: u32,
    /// Share of air time held back for legacy stations (WLAN only).
    #[serde(default)]
    pub legacy_reserved_fraction: f64,
}

impl ResourceGrid {
    pub fn validate(&self) -> Result<(), String> {
        if self.units_per_interval == 0 {
            return Err(format!("{} grid has no resource units", self.hop.as_str()));
        }
        if self.interval_us == 0 {
            return Err(format!("{} grid has a zero scheduling interval", self.hop.as_str()));
        }
        if !(0.0..1.0).contains(&self.legacy_reserved_fraction) {
            return Err(format!(
                "legacy reservation {} outside [0, 1)",
                self.legacy_reserved_fraction
            ));
        }
        if self.hop == Hop::Fwa && self.legacy_reserved_fraction != 0.0 {
            return Err("FWA grids carry no legacy reservation".into());
        }
        Ok(())
    }

    pub fn interval(&self) -> SimTime {
        SimTime(self.interval_us)
    }
}

/// Units left for scheduling after the legacy reservation.
pub fn usable_units(grid: &ResourceGrid) -> u32 {
    let exact = grid.units_per_interval as f64 * (1.0 - grid.legacy_reserved_fraction);
    // 100 * (1 - 0.3) lands a hair below 70 in binary floating point.
    (exact + 1e-9).floor() as u32
}

/// Lower bound on the averaged served rate, bits/s.
pub const AVG_RATE_FLOOR_BPS: f64 = 1_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    /// Bits carried by one resource unit.
    pub spectral_efficiency: f64,
    pub target_bler: f64,
    /// Exponentially averaged served rate, bits/s.
    pub avg_rate: f64,
}

impl LinkState {
    pub fn new(spectral_efficiency: f64, target_bler: f64) -> Self {
        LinkState {
            spectral_efficiency,
            target_bler,
            avg_rate: AVG_RATE_FLOOR_BPS,
        }
    }

    /// Units needed to carry `bits` at the current efficiency.
    pub fn units_for(&self, bits: u64) -> u32 {
        if bits == 0 {
            return 0;
        }
        (bits as f64 / self.spectral_efficiency).ceil().min(u32::MAX as f64) as u32
    }
}
