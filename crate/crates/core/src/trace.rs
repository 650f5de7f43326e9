//! Per-packet run traces and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::{Outcome, SimTime, SliceType};

/// Final state of one packet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PacketRecord {
    pub packet_id: u64,
    pub slice_type: SliceType,
    /// Index into [`Trace::flow_names`].
    pub flow: u32,
    pub created_us: u64,
    pub deadline_us: u64,
    pub hop1_delay_us: Option<u64>,
    pub rg_wait_us: Option<u64>,
    pub delivered_us: Option<u64>,
    pub outcome: Outcome,
}

impl PacketRecord {
    pub fn latency(&self) -> Option<SimTime> {
        self.delivered_us.map(|d| SimTime(d - self.created_us))
    }

    pub fn survival(&self) -> SimTime {
        SimTime(self.deadline_us - self.created_us)
    }

    /// Delivered no later than its survival deadline.
    pub fn met_deadline(&self) -> bool {
        self.outcome == Outcome::Delivered && self.delivered_us.is_some_and(|d| d <= self.deadline_us)
    }
}

/// Every packet generated in one run, ordered by packet id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub flow_names: Vec<String>,
    pub records: Vec<PacketRecord>,
    /// Packets created before this instant are excluded from metrics.
    pub warmup_us: u64,
    pub end_us: u64,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    packet_id: u64,
    slice_type: String,
    flow: String,
    created_us: u64,
    deadline_us: u64,
    hop1_delay_us: Option<u64>,
    rg_wait_us: Option<u64>,
    delivered_us: Option<u64>,
    outcome: String,
}

impl Trace {
    pub fn flow_name(&self, r: &PacketRecord) -> &str {
        &self.flow_names[r.flow as usize]
    }

    /// Writes the trace as CSV with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(CsvRow {
                packet_id: r.packet_id,
                slice_type: r.slice_type.as_str().to_string(),
                flow: self.flow_name(r).to_string(),
                created_us: r.created_us,
                deadline_us: r.deadline_us,
                hop1_delay_us: r.hop1_delay_us,
                rg_wait_us: r.rg_wait_us,
                delivered_us: r.delivered_us,
                outcome: r.outcome.as_str().to_string(),
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, warmup_us: u64, end_us: u64) -> Result<Trace, SimError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut names: Vec<String> = Vec::new();
        let mut records = Vec::new();
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            let flow = match names.iter().position(|n| *n == row.flow) {
                Some(i) => i,
                None => {
                    names.push(row.flow.clone());
                    names.len() - 1
                }
            } as u32;
            records.push(PacketRecord {
                packet_id: row.packet_id,
                slice_type: row.slice_type.parse().map_err(SimError::Parse)?,
                flow,
                created_us: row.created_us,
                deadline_us: row.deadline_us,
                hop1_delay_us: row.hop1_delay_us,
                rg_wait_us: row.rg_wait_us,
                delivered_us: row.delivered_us,
                outcome: row.outcome.parse().map_err(SimError::Parse)?,
            });
        }
        Ok(Trace {
            flow_names: names,
            records,
            warmup_us,
            end_us,
        })
    }
}

/// One slice type transition as it happened during a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub patient: usize,
    pub kind: crate::slicing::TransitionKind,
    pub requested_us: u64,
    /// `None` when the request was rejected.
    pub effective_us: Option<u64>,
}

/// Units handed to one packet in one interval (debug trace).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub time_us: u64,
    pub hop: crate::model::Hop,
    /// Patient home for WLAN records; `None` on the FWA hop.
    pub cell: Option<usize>,
    pub slice: u32,
    pub packet_id: u64,
    pub units: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = Trace {
            flow_names: vec!["EEG".into(), "embb".into()],
            records: vec![
                PacketRecord {
                    packet_id: 0,
                    slice_type: SliceType::RegularMonitoring,
                    flow: 0,
                    created_us: 10,
                    deadline_us: 175_010,
                    hop1_delay_us: Some(2000),
                    rg_wait_us: Some(0),
                    delivered_us: Some(3010),
                    outcome: Outcome::Delivered,
                },
                PacketRecord {
                    packet_id: 1,
                    slice_type: SliceType::Embb,
                    flow: 1,
                    created_us: 20,
                    deadline_us: 300_020,
                    hop1_delay_us: None,
                    rg_wait_us: None,
                    delivered_us: None,
                    outcome: Outcome::InFlight,
                },
            ],
            warmup_us: 0,
            end_us: 1_000_000,
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("packet_id,slice_type,flow,created_us"));
        let back = Trace::read_csv(&buf[..], 0, 1_000_000).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn deadline_check_is_inclusive() {
        let mut r = PacketRecord {
            packet_id: 0,
            slice_type: SliceType::Emergency,
            flow: 0,
            created_us: 0,
            deadline_us: 175_000,
            hop1_delay_us: Some(0),
            rg_wait_us: Some(0),
            delivered_us: Some(175_000),
            outcome: Outcome::Delivered,
        };
        assert!(r.met_deadline());
        r.delivered_us = Some(175_001);
        assert!(!r.met_deadline());
    }
}
