//! In-process transport: one OS thread per rank, shared mailboxes.
//!
//! Sends are eager: the payload is matched against the destination's posted
//! receives (or parked as unexpected) during `isend`, so a send request is
//! complete as soon as it is issued.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Barrier, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{
    MatchQueueStats, RequestBatch, RequestHandle, RequestKind, Retired, Tag, TestOutcome, Transport,
    TransportError,
};
use crate::plan::Rank;

const DEFAULT_STALL_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug)]
struct PostedRecv {
    id: u64,
    src: Rank,
    tag: Tag,
    capacity: usize,
}

#[derive(Debug)]
struct Envelope {
    src: Rank,
    tag: Tag,
    payload: Vec<u8>,
}

#[derive(Debug, Default)]
struct MailboxState {
    posted: VecDeque<PostedRecv>,
    unexpected: VecDeque<Envelope>,
    completed: HashMap<u64, Result<Vec<u8>, TransportError>>,
    stats: MatchQueueStats,
}

#[derive(Debug, Default)]
struct Mailbox {
    state: Mutex<MailboxState>,
    ready: Condvar,
}

impl Mailbox {
    fn lock(&self) -> MutexGuard<'_, MailboxState> {
        // A poisoned mailbox only means another rank panicked mid-update;
        // the queues themselves stay structurally valid.
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug)]
struct Shared {
    mailboxes: Vec<Mailbox>,
    barrier: Barrier,
    stall_timeout: Duration,
}

/// Factory for a communicator of threaded endpoints.
#[derive(Debug)]
pub struct ThreadedWorld {
    size: usize,
    stall_timeout: Duration,
}

impl ThreadedWorld {
    pub fn new(size: usize) -> Self {
        assert!(size >= 1, "communicator needs at least one rank");
        ThreadedWorld {
            size,
            stall_timeout: DEFAULT_STALL_TIMEOUT,
        }
    }

    /// How long a blocking wait may go without any completion before it
    /// reports [`TransportError::Stalled`].
    pub fn with_stall_timeout(mut self, timeout: Duration) -> Self {
        self.stall_timeout = timeout;
        self
    }

    pub fn into_endpoints(self) -> Vec<ThreadedEndpoint> {
        let shared = Arc::new(Shared {
            mailboxes: (0..self.size).map(|_| Mailbox::default()).collect(),
            barrier: Barrier::new(self.size),
            stall_timeout: self.stall_timeout,
        });
        (0..self.size)
            .map(|rank| ThreadedEndpoint {
                rank,
                shared: Arc::clone(&shared),
                next_id: 0,
            })
            .collect()
    }

    /// Runs `body` on every rank concurrently and collects the results in
    /// rank order.
    pub fn run<T, F>(self, body: F) -> Vec<T>
    where
        T: Send,
        F: Fn(ThreadedEndpoint) -> T + Sync,
    {
        let endpoints = self.into_endpoints();
        std::thread::scope(|scope| {
            let handles: Vec<_> = endpoints
                .into_iter()
                .map(|ep| {
                    let body = &body;
                    scope.spawn(move || body(ep))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
                .collect()
        })
    }
}

/// One rank's view of a threaded communicator.
#[derive(Debug)]
pub struct ThreadedEndpoint {
    rank: Rank,
    shared: Arc<Shared>,
    next_id: u64,
}

impl ThreadedEndpoint {
    fn check_peer(&self, peer: Rank) -> Result<(), TransportError> {
        if peer >= self.size() {
            return Err(TransportError::InvalidPeer {
                rank: self.rank,
                peer,
                size: self.size(),
            });
        }
        Ok(())
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn own(&self) -> &Mailbox {
        &self.shared.mailboxes[self.rank]
    }

    /// Retires the lowest-indexed completed slot, if any.
    fn retire_one(
        state: &mut MailboxState,
        batch: &mut RequestBatch,
    ) -> Result<Option<Retired>, TransportError> {
        let mut found = None;
        for (slot, handle) in batch.live() {
            match handle.kind {
                RequestKind::Send => {
                    found = Some((slot, Vec::new()));
                    break;
                }
                RequestKind::Recv => {
                    if let Some(result) = state.completed.remove(&handle.id) {
                        found = Some((slot, result?));
                        break;
                    }
                }
            }
        }
        Ok(found.map(|(slot, payload)| Retired {
            slot,
            handle: batch.take(slot).expect("live slot"),
            payload,
        }))
    }

    fn block_until_one(&self, batch: &mut RequestBatch) -> Result<Retired, TransportError> {
        let mailbox = self.own();
        let mut state = mailbox.lock();
        let deadline = Instant::now() + self.shared.stall_timeout;
        loop {
            if let Some(retired) = Self::retire_one(&mut state, batch)? {
                return Ok(retired);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Stalled {
                    rank: self.rank,
                    waited: self.shared.stall_timeout,
                    peers: batch.live().map(|(_, h)| h.peer).collect(),
                });
            }
            state = mailbox
                .ready
                .wait_timeout(state, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

fn deliver(payload: Vec<u8>, src: Rank, dst: Rank, capacity: usize) -> Result<Vec<u8>, TransportError> {
    if payload.len() > capacity {
        return Err(TransportError::Truncation {
            src,
            dst,
            bytes: payload.len(),
            capacity,
        });
    }
    Ok(payload)
}

impl Transport for ThreadedEndpoint {
    fn rank(&self) -> Rank {
        self.rank
    }

    fn size(&self) -> usize {
        self.shared.mailboxes.len()
    }

    fn isend(&mut self, peer: Rank, data: &[u8], tag: Tag) -> Result<RequestHandle, TransportError> {
        self.check_peer(peer)?;
        let id = self.fresh_id();
        let dest = &self.shared.mailboxes[peer];
        let mut state = dest.lock();
        let hit = state
            .posted
            .iter()
            .position(|r| r.src == self.rank && r.tag == tag);
        match hit {
            Some(pos) => {
                state.stats.posted_receive_scans += pos as u64 + 1;
                let recv = state.posted.remove(pos).expect("indexed entry");
                let result = deliver(data.to_vec(), self.rank, peer, recv.capacity);
                state.completed.insert(recv.id, result);
                drop(state);
                dest.ready.notify_all();
            }
            None => {
                state.stats.posted_receive_scans += state.posted.len() as u64;
                state.stats.unexpected_messages += 1;
                state.unexpected.push_back(Envelope {
                    src: self.rank,
                    tag,
                    payload: data.to_vec(),
                });
            }
        }
        Ok(RequestHandle {
            id,
            kind: RequestKind::Send,
            peer,
            bytes: data.len(),
        })
    }

    fn irecv(&mut self, peer: Rank, capacity: usize, tag: Tag) -> Result<RequestHandle, TransportError> {
        self.check_peer(peer)?;
        let id = self.fresh_id();
        let rank = self.rank;
        let mut state = self.own().lock();
        let hit = state
            .unexpected
            .iter()
            .position(|m| m.src == peer && m.tag == tag);
        match hit {
            Some(pos) => {
                let msg = state.unexpected.remove(pos).expect("indexed entry");
                let result = deliver(msg.payload, peer, rank, capacity);
                state.completed.insert(id, result);
            }
            None => state.posted.push_back(PostedRecv {
                id,
                src: peer,
                tag,
                capacity,
            }),
        }
        Ok(RequestHandle {
            id,
            kind: RequestKind::Recv,
            peer,
            bytes: capacity,
        })
    }

    fn wait_all(&mut self, batch: &mut RequestBatch) -> Result<Vec<Retired>, TransportError> {
        if batch.is_empty() {
            return Err(TransportError::EmptyBatch);
        }
        let mut retired = Vec::with_capacity(batch.outstanding());
        while !batch.all_retired() {
            retired.push(self.block_until_one(batch)?);
        }
        Ok(retired)
    }

    fn wait_any(&mut self, batch: &mut RequestBatch) -> Result<Option<Retired>, TransportError> {
        if batch.all_retired() {
            return Ok(None);
        }
        self.block_until_one(batch).map(Some)
    }

    fn test_any(&mut self, batch: &mut RequestBatch) -> Result<TestOutcome, TransportError> {
        if batch.all_retired() {
            return Ok(TestOutcome::Undefined);
        }
        let mut state = self.own().lock();
        Ok(match Self::retire_one(&mut state, batch)? {
            Some(retired) => TestOutcome::Completed(retired),
            None => TestOutcome::Pending,
        })
    }

    fn barrier(&mut self) -> Result<(), TransportError> {
        self.shared.barrier.wait();
        Ok(())
    }

    fn match_stats(&self) -> MatchQueueStats {
        self.own().lock().stats
    }
}
