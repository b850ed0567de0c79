//! The five alltoallv schedules as resumable state machines.
//!
//! A [`ScheduleMachine`] never touches a transport. It emits one [`Action`]
//! at a time and is resumed with the [`Reply`] describing what the transport
//! did. [`execute`] drives a machine over any blocking [`Transport`]; the
//! simulator drives the same machines from its event loop.
//!
//! Request slots follow one layout for every schedule: the send of a pair
//! sits at an even slot and its receive at the following odd slot.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::plan::{ExchangePlan, Rank};
use crate::transport::{RequestBatch, RequestKind, Retired, TestOutcome, Transport, TransportError, COLLECTIVE_TAG};

/// Stride used when a run does not choose one.
pub const DEFAULT_STRIDE: usize = 10;

/// Strides swept by default for the multi-pair schedules.
pub const STRIDE_SWEEP: [usize; 3] = [5, 10, 15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScheduleKind {
    Pairwise,
    Nonblocking,
    MultipairWaitall,
    MultipairWaitany,
    MultipairTestany,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 5] = [
        ScheduleKind::Pairwise,
        ScheduleKind::Nonblocking,
        ScheduleKind::MultipairWaitall,
        ScheduleKind::MultipairWaitany,
        ScheduleKind::MultipairTestany,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Pairwise => "pairwise",
            ScheduleKind::Nonblocking => "nonblocking",
            ScheduleKind::MultipairWaitall => "multipair-waitall",
            ScheduleKind::MultipairWaitany => "multipair-waitany",
            ScheduleKind::MultipairTestany => "multipair-testany",
        }
    }

    /// Whether the stride parameter changes this schedule's behavior.
    pub fn uses_stride(self) -> bool {
        matches!(
            self,
            ScheduleKind::MultipairWaitall | ScheduleKind::MultipairWaitany | ScheduleKind::MultipairTestany
        )
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown schedule `{0}` (expected one of pairwise, nonblocking, multipair-waitall, multipair-waitany, multipair-testany)")]
pub struct UnknownSchedule(pub String);

impl FromStr for ScheduleKind {
    type Err = UnknownSchedule;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownSchedule(s.to_owned()))
    }
}

/// Destination of exchange step `i` for rank `p`.
pub fn partner_send(p: Rank, i: usize, n: usize) -> Rank {
    (p + i) % n
}

/// Source of exchange step `i` for rank `p`.
pub fn partner_recv(p: Rank, i: usize, n: usize) -> Rank {
    (p + n - i % n) % n
}

/// What a schedule wants done next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Issue a nonblocking send or receive into an empty slot.
    Post { slot: usize, kind: RequestKind, peer: Rank },
    /// Block until every live slot completes.
    WaitAll,
    /// Block until one live slot completes.
    WaitAny,
    /// Probe for one completed slot without blocking.
    TestAny,
    Done,
}

/// What the transport did with the previous action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reply {
    Start,
    Posted,
    /// `WaitAll` retired this many slots.
    AllRetired(usize),
    /// `WaitAny` retired this slot, or `None` when all were retired.
    Any(Option<usize>),
    /// `TestAny` result.
    Tested(Probe),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Pending,
    Completed(usize),
    Undefined,
}

impl From<&TestOutcome> for Probe {
    fn from(outcome: &TestOutcome) -> Self {
        match outcome {
            TestOutcome::Pending => Probe::Pending,
            TestOutcome::Completed(r) => Probe::Completed(r.slot),
            TestOutcome::Undefined => Probe::Undefined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Replays a precomputed action list; `step_wise` refills it per step.
    Scripted { step_wise: bool },
    /// Refill-on-completion window driven by wait_any or test_any.
    Window { poll: bool },
    Finished,
}

/// Per-rank schedule state.
#[derive(Debug, Clone)]
pub struct ScheduleMachine {
    kind: ScheduleKind,
    rank: Rank,
    n: usize,
    stride: usize,
    slots: usize,
    mode: Mode,
    queue: VecDeque<Action>,
    step: usize,
    sends_issued: usize,
    recvs_issued: usize,
    retired: usize,
    outstanding: usize,
    max_outstanding: usize,
    failed_polls: u64,
}

impl ScheduleMachine {
    /// `stride` is clamped to at least 1 and ignored by the pairwise and
    /// nonblocking schedules.
    pub fn new(kind: ScheduleKind, rank: Rank, n: usize, stride: usize) -> Self {
        assert!(n >= 1 && rank < n, "rank {rank} outside communicator of {n}");
        let stride = stride.max(1);
        // A window at least as wide as the communicator is the nonblocking
        // schedule.
        let effective = match kind {
            ScheduleKind::MultipairWaitany | ScheduleKind::MultipairTestany if stride >= n => {
                ScheduleKind::Nonblocking
            }
            other => other,
        };
        let (slots, mode) = match effective {
            ScheduleKind::Pairwise => (2, Mode::Scripted { step_wise: true }),
            ScheduleKind::Nonblocking => (2 * n, Mode::Scripted { step_wise: false }),
            ScheduleKind::MultipairWaitall => (2 * stride.min(n), Mode::Scripted { step_wise: false }),
            ScheduleKind::MultipairWaitany => (2 * stride, Mode::Window { poll: false }),
            ScheduleKind::MultipairTestany => (2 * stride, Mode::Window { poll: true }),
        };
        ScheduleMachine {
            kind: effective,
            rank,
            n,
            stride,
            slots,
            mode,
            queue: VecDeque::new(),
            step: 0,
            sends_issued: 0,
            recvs_issued: 0,
            retired: 0,
            outstanding: 0,
            max_outstanding: 0,
            failed_polls: 0,
        }
    }

    /// Number of request slots the driver must allocate.
    pub fn slots(&self) -> usize {
        self.slots
    }

    /// The schedule actually executed, after stride degeneration.
    pub fn effective_kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn retired(&self) -> usize {
        self.retired
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    pub fn max_outstanding(&self) -> usize {
        self.max_outstanding
    }

    /// Unsuccessful `TestAny` probes so far.
    pub fn failed_polls(&self) -> u64 {
        self.failed_polls
    }

    pub fn is_done(&self) -> bool {
        self.mode == Mode::Finished
    }

    fn post_pair(&mut self, slot_pair: usize) {
        self.post_send(2 * slot_pair);
        self.post_recv(2 * slot_pair + 1);
    }

    fn post_send(&mut self, slot: usize) {
        let peer = partner_send(self.rank, self.sends_issued, self.n);
        self.sends_issued += 1;
        self.queue.push_back(Action::Post {
            slot,
            kind: RequestKind::Send,
            peer,
        });
    }

    fn post_recv(&mut self, slot: usize) {
        let peer = partner_recv(self.rank, self.recvs_issued, self.n);
        self.recvs_issued += 1;
        self.queue.push_back(Action::Post {
            slot,
            kind: RequestKind::Recv,
            peer,
        });
    }

    fn wait_action(poll: bool) -> Action {
        if poll {
            Action::TestAny
        } else {
            Action::WaitAny
        }
    }

    fn start(&mut self) {
        match self.kind {
            ScheduleKind::Pairwise => {
                self.post_pair(0);
                self.queue.push_back(Action::WaitAll);
            }
            ScheduleKind::Nonblocking => {
                for i in 0..self.n {
                    self.post_pair(i);
                }
                self.queue.push_back(Action::WaitAll);
            }
            ScheduleKind::MultipairWaitall => {
                let width = self.slots / 2;
                for i in 0..self.n {
                    self.post_pair(i % width);
                    if (i + 1) % width == 0 || i + 1 == self.n {
                        self.queue.push_back(Action::WaitAll);
                    }
                }
            }
            ScheduleKind::MultipairWaitany | ScheduleKind::MultipairTestany => {
                for i in 0..self.stride {
                    self.post_pair(i);
                }
                let poll = self.kind == ScheduleKind::MultipairTestany;
                self.queue.push_back(Self::wait_action(poll));
            }
        }
    }

    /// Refills the slot just retired with the next request of the same
    /// direction, if any remain.
    fn refill(&mut self, slot: usize, poll: bool) {
        if slot.is_multiple_of(2) {
            if self.sends_issued < self.n {
                self.post_send(slot);
            }
        } else if self.recvs_issued < self.n {
            self.post_recv(slot);
        }
        self.queue.push_back(Self::wait_action(poll));
    }

    fn retire(&mut self, count: usize) {
        debug_assert!(count <= self.outstanding);
        self.retired += count;
        self.outstanding -= count;
    }

    /// Resumes the machine with the outcome of its previous action.
    pub fn next(&mut self, reply: Reply) -> Action {
        match reply {
            Reply::Start => {
                debug_assert_eq!(self.retired + self.outstanding, 0, "machine started twice");
                self.start();
            }
            Reply::Posted => {}
            Reply::AllRetired(count) => {
                self.retire(count);
                if self.mode == (Mode::Scripted { step_wise: true }) && self.queue.is_empty() {
                    self.step += 1;
                    if self.step < self.n {
                        self.post_pair(0);
                        self.queue.push_back(Action::WaitAll);
                    }
                }
            }
            Reply::Any(Some(slot)) | Reply::Tested(Probe::Completed(slot)) => {
                self.retire(1);
                if let Mode::Window { poll } = self.mode {
                    self.refill(slot, poll);
                }
            }
            Reply::Tested(Probe::Pending) => {
                self.failed_polls += 1;
                self.queue.push_back(Action::TestAny);
            }
            Reply::Any(None) | Reply::Tested(Probe::Undefined) => {
                debug_assert!(self.queue.is_empty());
            }
        }
        match self.queue.pop_front() {
            Some(action) => {
                if let Action::Post { .. } = action {
                    self.outstanding += 1;
                    self.max_outstanding = self.max_outstanding.max(self.outstanding);
                }
                action
            }
            None => {
                debug_assert_eq!(self.retired, 2 * self.n, "schedule ended early");
                self.mode = Mode::Finished;
                Action::Done
            }
        }
    }
}

/// Ground-truth alltoallv by direct copy, no transport involved.
pub fn oracle_alltoallv(plan: &ExchangePlan, send_bufs: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let n = plan.n_ranks();
    let mut recv: Vec<Vec<u8>> = (0..n).map(|q| vec![0u8; plan.recv_buf_len(q)]).collect();
    for p in 0..n {
        for q in 0..n {
            recv[q][plan.recv_range(q, p)].copy_from_slice(&send_bufs[p][plan.send_range(p, q)]);
        }
    }
    recv
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("rank {rank}: message from {peer} carried {got} bytes, plan expects {expected}")]
    ShortMessage {
        rank: Rank,
        peer: Rank,
        got: usize,
        expected: usize,
    },
}

/// Summary of one rank's execution over a blocking transport.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecReport {
    pub retired: usize,
    pub max_outstanding: usize,
    pub failed_polls: u64,
}

/// Runs `kind` for the transport's rank, writing into `recv_buf`.
///
/// `on_poll` runs after every unsuccessful `test_any`, giving callers a
/// place to overlap computation with the exchange.
pub fn execute<T: Transport>(
    kind: ScheduleKind,
    stride: usize,
    transport: &mut T,
    plan: &ExchangePlan,
    send_buf: &[u8],
    recv_buf: &mut [u8],
    mut on_poll: Option<&mut dyn FnMut()>,
) -> Result<ExecReport, ExecError> {
    let rank = transport.rank();
    let mut machine = ScheduleMachine::new(kind, rank, plan.n_ranks(), stride);
    let mut batch = RequestBatch::with_slots(machine.slots());
    let mut deposit = |r: &Retired| -> Result<(), ExecError> {
        if r.handle.kind == RequestKind::Recv {
            let range = plan.recv_range(rank, r.handle.peer);
            if r.payload.len() != range.len() {
                return Err(ExecError::ShortMessage {
                    rank,
                    peer: r.handle.peer,
                    got: r.payload.len(),
                    expected: range.len(),
                });
            }
            recv_buf[range].copy_from_slice(&r.payload);
        }
        Ok(())
    };
    let mut reply = Reply::Start;
    loop {
        reply = match machine.next(reply) {
            Action::Post { slot, kind, peer } => {
                let handle = match kind {
                    RequestKind::Send => {
                        transport.isend(peer, &send_buf[plan.send_range(rank, peer)], COLLECTIVE_TAG)?
                    }
                    RequestKind::Recv => {
                        transport.irecv(peer, plan.message_bytes(peer, rank), COLLECTIVE_TAG)?
                    }
                };
                batch.put(slot, handle);
                Reply::Posted
            }
            Action::WaitAll => {
                let retired = transport.wait_all(&mut batch)?;
                for r in &retired {
                    deposit(r)?;
                }
                Reply::AllRetired(retired.len())
            }
            Action::WaitAny => {
                let retired = transport.wait_any(&mut batch)?;
                if let Some(r) = &retired {
                    deposit(r)?;
                }
                Reply::Any(retired.map(|r| r.slot))
            }
            Action::TestAny => {
                let outcome = transport.test_any(&mut batch)?;
                match &outcome {
                    TestOutcome::Completed(r) => deposit(r)?,
                    TestOutcome::Pending => {
                        if let Some(hook) = on_poll.as_mut() {
                            hook();
                        } else {
                            std::hint::spin_loop();
                        }
                    }
                    TestOutcome::Undefined => {}
                }
                Reply::Tested(Probe::from(&outcome))
            }
            Action::Done => break,
        };
    }
    Ok(ExecReport {
        retired: machine.retired(),
        max_outstanding: machine.max_outstanding(),
        failed_polls: machine.failed_polls(),
    })
}

fn run_kind<T: Transport>(
    kind: ScheduleKind,
    stride: usize,
    transport: &mut T,
    plan: &ExchangePlan,
    send_buf: &[u8],
) -> Result<Vec<u8>, ExecError> {
    let mut recv_buf = vec![0u8; plan.recv_buf_len(transport.rank())];
    execute(kind, stride, transport, plan, send_buf, &mut recv_buf, None)?;
    Ok(recv_buf)
}

/// One send and one receive in flight per step, `n` steps.
pub fn run_pairwise<T: Transport>(t: &mut T, plan: &ExchangePlan, send_buf: &[u8]) -> Result<Vec<u8>, ExecError> {
    run_kind(ScheduleKind::Pairwise, 1, t, plan, send_buf)
}

/// All `2n` requests issued up front, then one wait_all.
pub fn run_nonblocking<T: Transport>(t: &mut T, plan: &ExchangePlan, send_buf: &[u8]) -> Result<Vec<u8>, ExecError> {
    run_kind(ScheduleKind::Nonblocking, 1, t, plan, send_buf)
}

/// Batches of `stride` pairs, each flushed with wait_all.
pub fn run_multipair_waitall<T: Transport>(
    t: &mut T,
    plan: &ExchangePlan,
    send_buf: &[u8],
    stride: usize,
) -> Result<Vec<u8>, ExecError> {
    run_kind(ScheduleKind::MultipairWaitall, stride, t, plan, send_buf)
}

/// Window of `stride` pairs refilled as wait_any retires requests.
pub fn run_multipair_waitany<T: Transport>(
    t: &mut T,
    plan: &ExchangePlan,
    send_buf: &[u8],
    stride: usize,
) -> Result<Vec<u8>, ExecError> {
    run_kind(ScheduleKind::MultipairWaitany, stride, t, plan, send_buf)
}

/// Window of `stride` pairs refilled as test_any polls find completions.
pub fn run_multipair_testany<T: Transport>(
    t: &mut T,
    plan: &ExchangePlan,
    send_buf: &[u8],
    stride: usize,
) -> Result<Vec<u8>, ExecError> {
    run_kind(ScheduleKind::MultipairTestany, stride, t, plan, send_buf)
}
