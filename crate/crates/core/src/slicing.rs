//! Slice lifecycle at the gateway: promotion of a regular monitoring slice to
//! the emergency type, demotion when the emergency is over, and the mapping
//! of slice types onto WLAN service classes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{SimTime, SliceInstance, SliceState, SliceType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Promote,
    Demote,
}

impl TransitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransitionKind::Promote => "promote",
            TransitionKind::Demote => "demote",
        }
    }
}

/// A requested type change for one patient's slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceEvent {
    pub at_ms: u64,
    pub kind: TransitionKind,
    pub patient: usize,
    /// Free-form origin label, e.g. "device" or "network".
    #[serde(default)]
    pub source: Option<String>,
}

impl SliceEvent {
    pub fn at(&self) -> SimTime {
        SimTime::from_ms(self.at_ms)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationProfile {
    /// One-shot reconfiguration delay before a type change takes effect.
    pub activation_delay_ms: u64,
}

impl Default for ActivationProfile {
    fn default() -> Self {
        ActivationProfile {
            activation_delay_ms: 50,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransitionError {
    #[error("cannot promote a slice of type {0}")]
    NotRegular(SliceType),
    #[error("cannot demote a slice of type {0}")]
    NotEmergency(SliceType),
    #[error("slice already has a transition in flight")]
    InFlight,
}

/// A change accepted by [`apply_event`], to be completed at `effective_at`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduledChange {
    pub requested_at: SimTime,
    pub effective_at: SimTime,
    pub new_type: SliceType,
}

/// Validates `event` against the slice and marks the transition in flight.
/// On error the slice is left untouched.
pub fn apply_event(
    slice: &mut SliceInstance,
    event: &SliceEvent,
    profile: &ActivationProfile,
) -> Result<ScheduledChange, TransitionError> {
    if slice.state != SliceState::Active {
        return Err(TransitionError::InFlight);
    }
    let (state, new_type) = match event.kind {
        TransitionKind::Promote => {
            if slice.current_type != SliceType::RegularMonitoring {
                return Err(TransitionError::NotRegular(slice.current_type));
            }
            (SliceState::Promoting, SliceType::Emergency)
        }
        TransitionKind::Demote => {
            if slice.current_type != SliceType::Emergency {
                return Err(TransitionError::NotEmergency(slice.current_type));
            }
            (SliceState::Demoting, SliceType::RegularMonitoring)
        }
    };
    slice.state = state;
    Ok(ScheduledChange {
        requested_at: event.at(),
        effective_at: event.at() + SimTime::from_ms(profile.activation_delay_ms),
        new_type,
    })
}

/// Applies a scheduled change: type, priority and state switch together.
pub fn complete_change(slice: &mut SliceInstance, change: &ScheduledChange) {
    slice.current_type = change.new_type;
    slice.priority = change.new_type.is_healthcare();
    slice.state = SliceState::Active;
}

/// WLAN service class of a slice type; 0 is served first.
pub fn wlan_class_of(slice_type: SliceType) -> u8 {
    match slice_type {
        SliceType::Emergency => 0,
        SliceType::RegularMonitoring => 1,
        SliceType::Embb => 2,
    }
}
