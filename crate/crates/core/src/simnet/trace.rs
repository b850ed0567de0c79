use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::plan::Rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    /// Rank entered the exchange (after barrier and skew).
    Start,
    Isend,
    Irecv,
    /// Message reached the destination and was matched or parked.
    /// `queue_len` is the number of posted receives scanned.
    Arrive,
    SendComplete,
    RecvComplete,
    /// Owner observed the completion and emptied the slot.
    Retire,
    /// Rank's schedule returned.
    Finish,
}

impl TraceEvent {
    pub fn name(self) -> &'static str {
        match self {
            TraceEvent::Start => "start",
            TraceEvent::Isend => "isend",
            TraceEvent::Irecv => "irecv",
            TraceEvent::Arrive => "arrive",
            TraceEvent::SendComplete => "send_complete",
            TraceEvent::RecvComplete => "recv_complete",
            TraceEvent::Retire => "retire",
            TraceEvent::Finish => "finish",
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub rank: Rank,
    pub event: TraceEvent,
    pub peer: Rank,
    pub bytes: usize,
    pub queue_len: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("rank {0} started but never finished")]
    Unfinished(Rank),
}

/// Time-ordered record of one simulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    records: Vec<TraceRecord>,
}

pub const TRACE_CSV_HEADER: &str = "time,rank,event,peer,bytes,queue_len";

impl EventTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        debug_assert!(
            self.records.last().is_none_or(|last| last.time <= record.time),
            "trace time went backwards"
        );
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, event: TraceEvent) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.event == event)
    }

    /// Issue order of one rank: `(event, peer)` for every isend/irecv.
    pub fn issue_order(&self, rank: Rank) -> Vec<(TraceEvent, Rank)> {
        self.records
            .iter()
            .filter(|r| r.rank == rank && matches!(r.event, TraceEvent::Isend | TraceEvent::Irecv))
            .map(|r| (r.event, r.peer))
            .collect()
    }

    /// Largest number of issued-but-unretired requests `rank` ever held.
    pub fn max_outstanding(&self, rank: Rank) -> usize {
        let mut live = 0usize;
        let mut peak = 0;
        for r in self.records.iter().filter(|r| r.rank == rank) {
            match r.event {
                TraceEvent::Isend | TraceEvent::Irecv => {
                    live += 1;
                    peak = peak.max(live);
                }
                TraceEvent::Retire => live -= 1,
                _ => {}
            }
        }
        peak
    }

    /// Sum of posted-receive entries scanned by arrivals, over all ranks.
    pub fn total_scanned(&self) -> u64 {
        self.of_kind(TraceEvent::Arrive).map(|r| r.queue_len as u64).sum()
    }

    /// Per-rank durations from start to finish, in rank order.
    pub fn finish_times(&self) -> Result<Vec<f64>, TraceError> {
        let n = self
            .records
            .iter()
            .map(|r| r.rank + 1)
            .max()
            .ok_or(TraceError::Empty)?;
        let mut start = vec![None; n];
        let mut finish = vec![None; n];
        for r in &self.records {
            match r.event {
                TraceEvent::Start => start[r.rank] = Some(r.time),
                TraceEvent::Finish => finish[r.rank] = Some(r.time),
                _ => {}
            }
        }
        (0..n)
            .map(|rank| match (start[rank], finish[rank]) {
                (Some(s), Some(f)) => Ok(f - s),
                _ => Err(TraceError::Unfinished(rank)),
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{TRACE_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.time, r.rank, r.event, r.peer, r.bytes, r.queue_len
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace CSV is ASCII")
    }
}

/// Longest start-to-finish duration over all ranks.
pub fn makespan(trace: &EventTrace) -> Result<f64, TraceError> {
    Ok(trace.finish_times()?.into_iter().fold(0.0, f64::max))
}
