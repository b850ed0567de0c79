//! Nonblocking point-to-point contract the exchange schedules are written
//! against.
//!
//! Requests live in a [`RequestBatch`] owned by the issuing rank. Completion
//! calls retire slots, emptying them, and hand back the received payload for
//! receives. Matching is by `(source, tag)` in FIFO order.

mod threaded;

pub use threaded::{ThreadedEndpoint, ThreadedWorld};

use std::time::Duration;

use thiserror::Error;

use crate::plan::Rank;

pub type Tag = u32;

/// Tag used by every collective invocation in this crate.
pub const COLLECTIVE_TAG: Tag = 0x0a11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestKind {
    Send,
    Recv,
}

/// Identity of one in-flight nonblocking operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RequestHandle {
    pub id: u64,
    pub kind: RequestKind,
    pub peer: Rank,
    pub bytes: usize,
}

/// A slot emptied by a completion call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retired {
    pub slot: usize,
    pub handle: RequestHandle,
    /// Received bytes for receives, empty for sends.
    pub payload: Vec<u8>,
}

/// Result of a nonblocking completion probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TestOutcome {
    /// Nothing completed yet.
    Pending,
    /// Some slot completed and has been retired.
    Completed(Retired),
    /// Every slot was already retired.
    Undefined,
}

/// Fixed-size array of request slots. An empty slot is retired.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestBatch {
    slots: Vec<Option<RequestHandle>>,
}

impl RequestBatch {
    pub fn with_slots(n: usize) -> Self {
        RequestBatch {
            slots: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Places a freshly issued request into an empty slot.
    ///
    /// Panics if the slot is occupied: schedules never overwrite a live
    /// request.
    pub fn put(&mut self, slot: usize, handle: RequestHandle) {
        assert!(
            self.slots[slot].is_none(),
            "slot {slot} still holds a live request"
        );
        self.slots[slot] = Some(handle);
    }

    pub fn get(&self, slot: usize) -> Option<&RequestHandle> {
        self.slots[slot].as_ref()
    }

    pub fn take(&mut self, slot: usize) -> Option<RequestHandle> {
        self.slots[slot].take()
    }

    /// Number of live (non-retired) slots.
    pub fn outstanding(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn all_retired(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub fn live(&self) -> impl Iterator<Item = (usize, &RequestHandle)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|h| (i, h)))
    }
}

/// Per-rank matching statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchQueueStats {
    /// Posted-receive entries examined by arriving messages.
    pub posted_receive_scans: u64,
    /// Arrivals that found no posted receive.
    pub unexpected_messages: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("rank {rank} addressed peer {peer} outside communicator of {size}")]
    InvalidPeer { rank: Rank, peer: Rank, size: usize },
    #[error("message from {src} to {dst} has {bytes} bytes, receive capacity is {capacity}")]
    Truncation {
        src: Rank,
        dst: Rank,
        bytes: usize,
        capacity: usize,
    },
    #[error("wait_all on an empty batch")]
    EmptyBatch,
    #[error("rank {rank} made no progress for {waited:?} waiting on peers {peers:?}")]
    Stalled {
        rank: Rank,
        waited: Duration,
        peers: Vec<Rank>,
    },
    #[error("a peer rank failed: {0}")]
    PeerFailed(String),
}

/// Nonblocking point-to-point operations as seen from one rank.
pub trait Transport {
    fn rank(&self) -> Rank;
    fn size(&self) -> usize;

    /// Starts a send of `data` to `peer`. The bytes are captured before
    /// returning.
    fn isend(&mut self, peer: Rank, data: &[u8], tag: Tag) -> Result<RequestHandle, TransportError>;

    /// Posts a receive from `peer` for a message of at most `capacity` bytes.
    fn irecv(&mut self, peer: Rank, capacity: usize, tag: Tag) -> Result<RequestHandle, TransportError>;

    /// Blocks until every live slot completes; retires them all.
    fn wait_all(&mut self, batch: &mut RequestBatch) -> Result<Vec<Retired>, TransportError>;

    /// Blocks until one live slot completes and retires it. `None` when
    /// every slot is already retired.
    fn wait_any(&mut self, batch: &mut RequestBatch) -> Result<Option<Retired>, TransportError>;

    /// Never blocks.
    fn test_any(&mut self, batch: &mut RequestBatch) -> Result<TestOutcome, TransportError>;

    fn barrier(&mut self) -> Result<(), TransportError>;

    fn match_stats(&self) -> MatchQueueStats;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle(id: u64) -> RequestHandle {
        RequestHandle {
            id,
            kind: RequestKind::Send,
            peer: 0,
            bytes: 0,
        }
    }

    #[test]
    fn batch_slots_retire() {
        let mut batch = RequestBatch::with_slots(3);
        assert!(batch.all_retired());
        batch.put(1, handle(7));
        assert_eq!(batch.outstanding(), 1);
        assert_eq!(batch.live().map(|(i, _)| i).collect::<Vec<_>>(), vec![1]);
        assert_eq!(batch.take(1).map(|h| h.id), Some(7));
        assert!(batch.all_retired());
    }

    #[test]
    #[should_panic(expected = "live request")]
    fn batch_refuses_overwrite() {
        let mut batch = RequestBatch::with_slots(1);
        batch.put(0, handle(1));
        batch.put(0, handle(2));
    }
}
