//! Evaluation quantities computed from run traces: end-to-end latency,
//! communication service availability and the share of packets meeting
//! their QoS, plus cross-seed aggregation helpers.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::model::{Outcome, SimTime, SliceType};
use crate::trace::{PacketRecord, Trace};

/// Which packets a metric pools: one slice type, or both healthcare types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SliceSelector {
    One(SliceType),
    Healthcare,
}

impl SliceSelector {
    pub const ALL: [SliceSelector; 4] = [
        SliceSelector::One(SliceType::Embb),
        SliceSelector::One(SliceType::RegularMonitoring),
        SliceSelector::One(SliceType::Emergency),
        SliceSelector::Healthcare,
    ];

    pub fn matches(self, t: SliceType) -> bool {
        match self {
            SliceSelector::One(s) => s == t,
            SliceSelector::Healthcare => t.is_healthcare(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SliceSelector::One(t) => t.as_str(),
            SliceSelector::Healthcare => "healthcare",
        }
    }
}

impl From<SliceType> for SliceSelector {
    fn from(t: SliceType) -> Self {
        SliceSelector::One(t)
    }
}

impl fmt::Display for SliceSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SliceSelector {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "healthcare" {
            Ok(SliceSelector::Healthcare)
        } else {
            s.parse().map(SliceSelector::One)
        }
    }
}

/// Packets counted by the metrics: created after the warm-up, with a
/// deadline inside the run.
pub fn measured<'a>(trace: &'a Trace, sel: SliceSelector) -> impl Iterator<Item = &'a PacketRecord> + 'a {
    trace
        .records
        .iter()
        .filter(move |r| sel.matches(r.slice_type) && r.created_us >= trace.warmup_us && r.deadline_us <= trace.end_us)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    /// Delivered packets the statistics are computed over.
    pub count: usize,
    pub dropped: usize,
    pub lost: usize,
}

/// Latency of delivered packets; `None` when nothing was delivered.
pub fn e2e_latency_stats(trace: &Trace, sel: impl Into<SliceSelector>) -> Option<LatencyStats> {
    let sel = sel.into();
    let mut lat: Vec<u64> = Vec::new();
    let (mut dropped, mut lost) = (0, 0);
    for r in measured(trace, sel) {
        match r.outcome {
            Outcome::Delivered => lat.extend(r.latency().map(|l| l.as_us())),
            Outcome::DroppedExpired => dropped += 1,
            Outcome::LostRetx => lost += 1,
            Outcome::InFlight => {}
        }
    }
    if lat.is_empty() {
        return None;
    }
    lat.sort_unstable();
    let sum: u128 = lat.iter().map(|&l| l as u128).sum();
    let rank = ((0.95 * lat.len() as f64).ceil() as usize).clamp(1, lat.len());
    Some(LatencyStats {
        mean_ms: sum as f64 / lat.len() as f64 / 1_000.0,
        p95_ms: lat[rank - 1] as f64 / 1_000.0,
        count: lat.len(),
        dropped,
        lost,
    })
}

/// Per-window outcome of the availability computation.
#[derive(Clone, Debug, PartialEq)]
pub struct AvailabilityWindows {
    pub window: SimTime,
    /// For each window tiling `[warmup, end)`: `None` when no packet of the
    /// slice was due in it, otherwise whether every due packet met its deadline.
    pub met: Vec<Option<bool>>,
}

impl AvailabilityWindows {
    /// Available windows over windows with packets due; `None` if there are none.
    pub fn ratio(&self) -> Option<f64> {
        let due: Vec<bool> = self.met.iter().flatten().copied().collect();
        if due.is_empty() {
            return None;
        }
        Some(due.iter().filter(|&&m| m).count() as f64 / due.len() as f64)
    }
}

/// Bins measured packets by deadline into windows of `window` length.
pub fn availability_windows(trace: &Trace, sel: impl Into<SliceSelector>, window: SimTime) -> AvailabilityWindows {
    let sel = sel.into();
    let w = window.as_us().max(1);
    let span = trace.end_us.saturating_sub(trace.warmup_us);
    let mut met: Vec<Option<bool>> = vec![None; span.div_ceil(w) as usize];
    for r in measured(trace, sel) {
        let Some(i) = r.deadline_us.checked_sub(trace.warmup_us).map(|d| (d / w) as usize) else {
            continue;
        };
        let i = i.min(met.len().saturating_sub(1));
        let ok = r.met_deadline();
        met[i] = Some(met[i].unwrap_or(true) && ok);
    }
    AvailabilityWindows { window, met }
}

/// Communication service availability A of one run.
pub fn availability(trace: &Trace, sel: impl Into<SliceSelector>, window: SimTime) -> Option<f64> {
    availability_windows(trace, sel, window).ratio()
}

/// Fraction of per-run availabilities above 0.99.
pub fn prob_availability_above(values: &[f64], threshold: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().filter(|&&a| a > threshold).count() as f64 / values.len() as f64)
}

/// Share of measured packets delivered within their survival deadline.
pub fn qos_met_fraction(trace: &Trace, sel: impl Into<SliceSelector>) -> Option<f64> {
    let (mut n, mut ok) = (0usize, 0usize);
    for r in measured(trace, sel.into()) {
        n += 1;
        ok += r.met_deadline() as usize;
    }
    (n > 0).then(|| ok as f64 / n as f64)
}

/// Delivered packets of the selection that arrived after their deadline,
/// over the whole trace.
pub fn late_deliveries(trace: &Trace, sel: impl Into<SliceSelector>) -> usize {
    let sel = sel.into();
    trace
        .records
        .iter()
        .filter(|r| sel.matches(r.slice_type) && r.outcome == Outcome::Delivered && !r.met_deadline())
        .count()
}

/// Sample mean and 95% normal-approximation half-width.
pub fn mean_ci95(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, 1.96 * (var / n as f64).sqrt()))
}

/// Mean over runs that produced a value, warning about the ones that did not.
pub fn mean_of_present(label: &str, values: &[Option<f64>]) -> Option<(f64, f64)> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.len() < values.len() {
        warn!(
            "{label}: {} of {} runs had no value",
            values.len() - present.len(),
            values.len()
        );
    }
    mean_ci95(&present)
}
