//! Link abstraction for the WLAN and FWA hops.
//!
//! Each device draws a normalized spectral efficiency (bits per symbol) from
//! a clamped lognormal, held for one coherence period. A hop converts it to
//! bits per resource unit through `symbols_per_unit`. Link adaptation is
//! assumed to hit the hop's target BLER exactly, so every transport block
//! fails independently with that probability.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::model::{Hop, LinkState, ResourceGrid, SimTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Mean of the efficiency draw, bits/symbol.
    pub mean_efficiency: f64,
    /// Standard deviation of the underlying normal (log domain).
    pub sigma: f64,
    pub min_efficiency: f64,
    pub max_efficiency: f64,
    pub coherence_ms: u64,
}

impl ChannelModel {
    pub fn wlan_default() -> Self {
        ChannelModel {
            mean_efficiency: 3.0,
            sigma: 0.5,
            min_efficiency: 0.5,
            max_efficiency: 8.0,
            coherence_ms: 100,
        }
    }

    pub fn fwa_default() -> Self {
        ChannelModel {
            mean_efficiency: 4.0,
            ..Self::wlan_default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mean_efficiency > 0.0 && self.sigma >= 0.0) {
            return Err("channel mean must be positive and sigma non-negative".into());
        }
        if !(self.min_efficiency > 0.0 && self.min_efficiency <= self.max_efficiency) {
            return Err(format!(
                "channel clamp [{}, {}] invalid",
                self.min_efficiency, self.max_efficiency
            ));
        }
        if self.coherence_ms == 0 {
            return Err("channel coherence must be positive".into());
        }
        Ok(())
    }

    pub fn clamp(&self, raw: f64) -> f64 {
        raw.clamp(self.min_efficiency, self.max_efficiency)
    }

    /// One clamped draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.clamp(self.mean_efficiency);
        }
        let mu = self.mean_efficiency.ln() - self.sigma * self.sigma / 2.0;
        let d = LogNormal::new(mu, self.sigma).expect("validated lognormal parameters");
        self.clamp(d.sample(rng))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopConfig {
    pub grid: ResourceGrid,
    pub target_bler: f64,
    pub max_retx: u32,
    /// Symbols carried by one resource unit; scales efficiency to bits/unit.
    pub symbols_per_unit: f64,
    /// Units a single device can use per interval (spatial-layer limit).
    #[serde(default)]
    pub max_units_per_device: Option<u32>,
    /// Fixed per-packet medium access delay added on delivery.
    #[serde(default)]
    pub access_delay_us: u64,
    pub channel: ChannelModel,
}

impl HopConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.grid.validate()?;
        self.channel.validate()?;
        if !(0.0..1.0).contains(&self.target_bler) {
            return Err(format!(
                "{} target BLER {} outside [0, 1)",
                self.grid.hop.as_str(),
                self.target_bler
            ));
        }
        if self.symbols_per_unit.is_nan() || self.symbols_per_unit <= 0.0 {
            return Err("symbols per unit must be positive".into());
        }
        if self.max_units_per_device == Some(0) {
            return Err("per-device unit cap must be positive".into());
        }
        Ok(())
    }

    pub fn hop(&self) -> Hop {
        self.grid.hop
    }
}

/// Per-device channel process with its own random stream.
#[derive(Clone, Debug)]
pub struct DeviceChannel<R> {
    rng: R,
    epoch: Option<u64>,
    efficiency: f64,
}

impl<R: Rng> DeviceChannel<R> {
    pub fn new(rng: R) -> Self {
        DeviceChannel {
            rng,
            epoch: None,
            efficiency: 0.0,
        }
    }

    /// Efficiency in bits/symbol for the coherence block containing `now`.
    pub fn efficiency_at(&mut self, now: SimTime, model: &ChannelModel) -> f64 {
        let epoch = now.as_us() / (model.coherence_ms * 1_000);
        if self.epoch != Some(epoch) {
            self.epoch = Some(epoch);
            self.efficiency = model.sample(&mut self.rng);
        }
        self.efficiency
    }
}

/// Refreshes `link` from the device's current channel draw.
pub fn link_adapt<R: Rng>(
    link: &LinkState,
    channel: &mut DeviceChannel<R>,
    now: SimTime,
    hop: &HopConfig,
) -> LinkState {
    let eff = channel.efficiency_at(now, &hop.channel);
    LinkState {
        spectral_efficiency: eff * hop.symbols_per_unit,
        target_bler: link.target_bler,
        avg_rate: link.avg_rate,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxOutcome {
    /// Bits carried by the transport block.
    pub bits_attempted: u64,
    /// Bits actually delivered (zero when the block failed).
    pub bits_served: u64,
    pub success: bool,
}

/// Sends one transport block of `allocated_units` for a packet with
/// `remaining_bits` left. A failed block delivers nothing; the caller
/// retries it in a later interval and counts the attempt.
pub fn transmit<R: Rng>(remaining_bits: u64, allocated_units: u32, link: &LinkState, rng: &mut R) -> TxOutcome {
    let capacity = (allocated_units as f64 * link.spectral_efficiency).floor() as u64;
    let bits_attempted = remaining_bits.min(capacity);
    if bits_attempted == 0 {
        return TxOutcome {
            bits_attempted: 0,
            bits_served: 0,
            success: true,
        };
    }
    let success = link.target_bler <= 0.0 || rng.random::<f64>() >= link.target_bler;
    TxOutcome {
        bits_attempted,
        bits_served: if success { bits_attempted } else { 0 },
        success,
    }
}

/// Whether a packet with `retx` failed attempts has exhausted its budget.
pub fn retx_exhausted(retx: u32, hop: &HopConfig) -> bool {
    retx > hop.max_retx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fwa() -> HopConfig {
        HopConfig {
            grid: ResourceGrid {
                hop: Hop::Fwa,
                interval_us: 1000,
                units_per_interval: 1600,
                legacy_reserved_fraction: 0.0,
            },
            target_bler: 0.01,
            max_retx: 8,
            symbols_per_unit: 1.0,
            max_units_per_device: None,
            access_delay_us: 0,
            channel: ChannelModel::fwa_default(),
        }
    }

    #[test]
    fn efficiency_maps_to_bits_per_unit() {
        let mut hop = fwa();
        hop.channel.sigma = 0.0;
        hop.channel.mean_efficiency = 4.0;
        let mut ch = DeviceChannel::new(ChaCha8Rng::seed_from_u64(0));
        let l = link_adapt(&LinkState::new(1.0, 0.01), &mut ch, SimTime::ZERO, &hop);
        assert_eq!(l.spectral_efficiency, 4.0);
        assert_eq!(l.target_bler, 0.01);
    }

    #[test]
    fn clamp_floor() {
        let m = ChannelModel::wlan_default();
        assert_eq!(m.clamp(0.0), 0.5);
        assert_eq!(m.clamp(100.0), 8.0);
    }

    #[test]
    fn coherence_holds_draw() {
        let hop = fwa();
        let mut ch = DeviceChannel::new(ChaCha8Rng::seed_from_u64(3));
        let a = ch.efficiency_at(SimTime::from_ms(10), &hop.channel);
        let b = ch.efficiency_at(SimTime::from_ms(60), &hop.channel);
        assert_eq!(a, b);
        let draws: Vec<f64> = (0..20)
            .map(|k| ch.efficiency_at(SimTime::from_ms(100 * k), &hop.channel))
            .collect();
        assert!(draws.iter().all(|&d| (0.5..=8.0).contains(&d)));
        assert!(draws.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn transmit_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let link = LinkState::new(4_000.0, 0.0);
        let full = transmit(10_000, 5, &link, &mut rng);
        assert_eq!(full.bits_served, 10_000);
        assert!(full.success);
        let part = transmit(10_000, 1, &link, &mut rng);
        assert_eq!(part.bits_served, 4_000);
    }

    #[test]
    fn retx_budget() {
        let hop = fwa();
        assert!(!retx_exhausted(8, &hop));
        assert!(retx_exhausted(9, &hop));
    }

    #[test]
    fn validation_rejects_bad_bler() {
        let mut hop = fwa();
        hop.target_bler = 1.0;
        assert!(hop.validate().is_err());
        hop.target_bler = -0.1;
        assert!(hop.validate().is_err());
        hop.target_bler = 0.0;
        assert!(hop.validate().is_ok());
        hop.target_bler = 0.01;
        assert!(hop.validate().is_ok());
    }

    proptest::proptest! {
        #[test]
        fn served_never_exceeds_allocation(bits in 0u64..1_000_000, units in 0u32..400, eff in 0.5f64..8000.0, bler in 0.0f64..0.5, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let link = LinkState::new(eff, bler);
            let out = transmit(bits, units, &link, &mut rng);
            proptest::prop_assert!(out.bits_served as f64 <= units as f64 * eff);
            proptest::prop_assert!(out.bits_served <= bits);
        }
    }
}
