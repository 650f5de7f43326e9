//! Uplink arrival processes: the periodic monitoring flows and the
//! background eMBB load offered by every active household.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};

use crate::model::{FlowSpec, QoSProfile, SimTime, SliceType};

/// Default packetization period for monitoring flows.
pub const DEFAULT_PERIOD_MS: u64 = 10;

/// Default M-LWDF drop target for monitoring flows.
pub const HEALTHCARE_DROP_TARGET: f64 = 0.01;

/// The monitored devices of one patient home.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowCatalog {
    /// Always-on flows of the regular monitoring slice.
    pub regular_flows: Vec<FlowSpec>,
    /// Extra flows started when the slice is promoted to emergency.
    pub emergency_flows: Vec<FlowSpec>,
}

impl FlowCatalog {
    pub fn regular(&self, name: &str) -> Option<&FlowSpec> {
        self.regular_flows.iter().find(|f| f.device_name == name)
    }

    pub fn emergency(&self, name: &str) -> Option<&FlowSpec> {
        self.emergency_flows.iter().find(|f| f.device_name == name)
    }

    pub fn regular_rate_bps(&self) -> u64 {
        self.regular_flows.iter().map(|f| f.qos.rate_bps).sum()
    }

    pub fn emergency_rate_bps(&self) -> u64 {
        self.emergency_flows.iter().map(|f| f.qos.rate_bps).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.regular_flows.is_empty() {
            return Err("flow catalog has no regular monitoring flows".into());
        }
        for f in self.regular_flows.iter().chain(&self.emergency_flows) {
            f.validate()?;
        }
        Ok(())
    }
}

fn row(name: &str, slice: SliceType, latency: u64, jitter: u64, survival: u64, rate_bps: u64) -> FlowSpec {
    let qos = QoSProfile {
        e2e_latency_ms: latency,
        jitter_ms: jitter,
        survival_ms: survival,
        rate_bps,
        drop_target: HEALTHCARE_DROP_TARGET,
    };
    FlowSpec::periodic(name, slice, qos, DEFAULT_PERIOD_MS).expect("catalog rates divide the default period")
}

/// Communication requirements of the in-home monitoring devices.
pub fn build_catalog() -> FlowCatalog {
    use SliceType::{Emergency as E, RegularMonitoring as R};
    FlowCatalog {
        regular_flows: vec![
            row("3D camera 1", R, 150, 30, 180, 10_000_000),
            row("EEG", R, 250, 25, 175, 1_000_000),
        ],
        emergency_flows: vec![
            row("3D camera 2", E, 150, 30, 180, 10_000_000),
            row("Speaker", E, 150, 25, 175, 220_000),
            row("ECG", E, 250, 25, 275, 500_000),
            row("EMG", E, 250, 25, 275, 500_000),
            row("SpO2", E, 250, 25, 275, 500_000),
            row("Temperature", E, 250, 25, 275, 100_000),
            row("Blood pressure", E, 250, 25, 275, 100_000),
            row("Heart rate", E, 250, 25, 275, 100_000),
            row("Respiration rate", E, 250, 25, 275, 100_000),
        ],
    }
}

/// Strictly periodic source for one monitoring flow.
#[derive(Clone, Debug)]
pub struct PeriodicSource {
    period: SimTime,
    packet_bits: u64,
    next_at: SimTime,
}

impl PeriodicSource {
    pub fn new(flow: &FlowSpec, first_at: SimTime) -> Self {
        PeriodicSource {
            period: flow.period(),
            packet_bits: flow.packet_bits,
            next_at: first_at,
        }
    }

    /// Start time drawn uniformly inside the first period.
    pub fn with_random_phase<R: Rng>(flow: &FlowSpec, start: SimTime, rng: &mut R) -> Self {
        let phase = rng.random_range(0..flow.period().as_us());
        Self::new(flow, start + SimTime(phase))
    }

    pub fn peek(&self) -> SimTime {
        self.next_at
    }

    /// Emits the packet due at the current arrival time and advances by one period.
    pub fn next_packet(&mut self) -> (SimTime, u64) {
        let at = self.next_at;
        self.next_at = at + self.period;
        (at, self.packet_bits)
    }

    /// Moves the next arrival to the first period boundary at or after `at`.
    pub fn skip_to(&mut self, at: SimTime) {
        if self.next_at < at {
            let p = self.period.as_us();
            let behind = at.as_us() - self.next_at.as_us();
            self.next_at = SimTime(self.next_at.as_us() + behind.div_ceil(p) * p);
        }
    }
}

/// Next packet of `flow` at `now`: its size and the following arrival time.
pub fn next_packet(flow: &FlowSpec, now: SimTime) -> (u64, SimTime) {
    (flow.packet_bits, now + flow.period())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum EmbbModel {
    /// Fixed-size packets at a constant rate.
    PeriodicCbr,
    /// Off/on cycles with exponentially distributed on periods and constant
    /// rate inside each burst. The off period is the on period scaled by
    /// `mean_off_ms / mean_on_ms`, so every cycle averages `mean_rate`.
    PoissonBursts { mean_on_ms: f64, mean_off_ms: f64 },
}

/// Background eMBB traffic offered by one household.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbbTrafficModel {
    #[serde(flatten)]
    pub model: EmbbModel,
    pub mean_rate_bps: u64,
    pub packet_bits: u64,
}

impl Default for EmbbTrafficModel {
    fn default() -> Self {
        EmbbTrafficModel {
            model: EmbbModel::PoissonBursts {
                mean_on_ms: 200.0,
                mean_off_ms: 800.0,
            },
            mean_rate_bps: 5_000_000,
            packet_bits: 12_000,
        }
    }
}

impl EmbbTrafficModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.packet_bits == 0 {
            return Err("eMBB packet size must be positive".into());
        }
        if let EmbbModel::PoissonBursts {
            mean_on_ms,
            mean_off_ms,
        } = self.model
        {
            if !(mean_on_ms.is_finite() && mean_on_ms > 0.0) {
                return Err(format!("eMBB mean on time {mean_on_ms} ms must be positive"));
            }
            if !(mean_off_ms.is_finite() && mean_off_ms >= 0.0) {
                return Err(format!("eMBB mean off time {mean_off_ms} ms must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Seeded arrival stream for one household's eMBB traffic.
#[derive(Clone, Debug)]
pub struct EmbbSource<R> {
    model: EmbbTrafficModel,
    rng: R,
    on_dist: Option<Exp<f64>>,
    // Arrivals of the current burst, generated a cycle at a time.
    pending: std::collections::VecDeque<SimTime>,
    cycle_start: SimTime,
    /// The first burst cycle starts at a stationary phase.
    started: bool,
    credit_bits: f64,
    carry_us: f64,
}

impl<R: Rng> EmbbSource<R> {
    pub fn new(model: EmbbTrafficModel, start: SimTime, mut rng: R) -> Result<Self, String> {
        model.validate()?;
        let on_dist = match model.model {
            EmbbModel::PeriodicCbr => None,
            EmbbModel::PoissonBursts { mean_on_ms, .. } => Some(Exp::new(1.0 / mean_on_ms).map_err(|e| e.to_string())?),
        };
        let mut cycle_start = start;
        if model.model == EmbbModel::PeriodicCbr && model.mean_rate_bps > 0 {
            let gap = (model.packet_bits as f64 / model.mean_rate_bps as f64 * 1e6) as u64;
            cycle_start = start + SimTime(rng.random_range(0..gap.max(1)));
        }
        Ok(EmbbSource {
            model,
            rng,
            on_dist,
            pending: Default::default(),
            cycle_start,
            started: false,
            credit_bits: 0.0,
            carry_us: 0.0,
        })
    }

    pub fn packet_bits(&self) -> u64 {
        self.model.packet_bits
    }

    fn refill(&mut self) {
        if self.model.mean_rate_bps == 0 {
            return;
        }
        let rate = self.model.mean_rate_bps as f64;
        match self.on_dist {
            None => {
                // CBR: exact integer-microsecond spacing with carried remainder.
                let bits = self.model.packet_bits as f64;
                let at = self.cycle_start;
                self.pending.push_back(at);
                let gap_us = bits / rate * 1e6 + self.carry_us;
                let whole = gap_us.floor();
                self.carry_us = gap_us - whole;
                self.cycle_start = at + SimTime(whole as u64);
            }
            Some(on_dist) => {
                let EmbbModel::PoissonBursts {
                    mean_on_ms,
                    mean_off_ms,
                } = self.model.model
                else {
                    unreachable!("burst distribution without burst model");
                };
                let off_per_on = mean_off_ms / mean_on_ms;
                let peak = rate * (1.0 + off_per_on);
                let bits = self.model.packet_bits as f64;
                let spacing_us = bits / peak * 1e6;
                while self.pending.is_empty() {
                    let (on_ms, skip_us) = if self.started {
                        (on_dist.sample(&mut self.rng), 0.0)
                    } else {
                        // Length-biased first cycle entered at a uniform offset.
                        self.started = true;
                        self.credit_bits = self.rng.random::<f64>() * bits;
                        let biased = Gamma::new(2.0, mean_on_ms).expect("positive mean on time");
                        let on = biased.sample(&mut self.rng);
                        (on, self.rng.random::<f64>() * on * (1.0 + off_per_on) * 1e3)
                    };
                    let off_ms = on_ms * off_per_on;
                    self.credit_bits += peak * on_ms / 1e3;
                    let n = (self.credit_bits / bits).floor() as u64;
                    self.credit_bits -= n as f64 * bits;
                    let origin = self.cycle_start.as_us() as f64;
                    let on_start = origin - skip_us + off_ms * 1e3;
                    for k in 0..n {
                        let t = on_start + k as f64 * spacing_us;
                        if t >= origin {
                            self.pending.push_back(SimTime(t.round() as u64));
                        }
                    }
                    self.cycle_start = SimTime((on_start + on_ms * 1e3).round().max(origin) as u64);
                }
            }
        }
    }

    /// Time of the next arrival, or `None` for a silent source.
    pub fn peek(&mut self) -> Option<SimTime> {
        if self.pending.is_empty() {
            self.refill();
        }
        self.pending.front().copied()
    }

    pub fn next_arrival(&mut self) -> Option<(SimTime, u64)> {
        self.peek()?;
        self.pending.pop_front().map(|t| (t, self.model.packet_bits))
    }
}

/// All eMBB arrivals of one household in `[start, horizon)`.
pub fn embb_arrivals<R: Rng>(
    model: &EmbbTrafficModel,
    start: SimTime,
    horizon: SimTime,
    rng: R,
) -> Result<Vec<(SimTime, u64)>, String> {
    let mut src = EmbbSource::new(model.clone(), start, rng)?;
    let mut out = Vec::new();
    while let Some(t) = src.peek() {
        if t >= horizon {
            break;
        }
        out.extend(src.next_arrival());
    }
    Ok(out)
}
