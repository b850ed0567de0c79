use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use super::trace::{EventTrace, TraceEvent, TraceRecord};
use super::{CostModel, RankSimStats, SimConfig, SimError, SimOutcome, StuckRank};
use crate::algorithms::{Action, Probe, Reply, ScheduleMachine};
use crate::plan::{ExchangePlan, Rank};
use crate::transport::RequestKind;

/// A per-rank state machine the engine can drive.
pub trait RankProgram {
    /// Request slots to allocate.
    fn slots(&self) -> usize;
    fn next(&mut self, reply: Reply) -> Action;
}

impl RankProgram for ScheduleMachine {
    fn slots(&self) -> usize {
        ScheduleMachine::slots(self)
    }

    fn next(&mut self, reply: Reply) -> Action {
        ScheduleMachine::next(self, reply)
    }
}

type ReqId = usize;
type MsgId = usize;

#[derive(Debug)]
struct Request {
    owner: Rank,
    kind: RequestKind,
    peer: Rank,
    bytes: usize,
    complete: bool,
}

#[derive(Debug)]
struct Message {
    src: Rank,
    dst: Rank,
    bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Waiting,
    Running,
    /// Blocked in a wait; retried on each completion it owns.
    Blocked,
    /// Between polls; resumed by a timer.
    Polling,
    Done,
}

#[derive(Debug)]
struct RankState {
    start: f64,
    status: Status,
    pending: Option<Action>,
    batch: Vec<Option<ReqId>>,
    posted: VecDeque<ReqId>,
    unexpected: VecDeque<MsgId>,
    nic_free: f64,
    rx_free: f64,
    last_retire: f64,
    outstanding: usize,
    stats: RankSimStats,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Start,
    Resume,
    Arrive(MsgId),
    Complete(ReqId),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    rank: Rank,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.rank.cmp(&other.rank))
            .then(self.seq.cmp(&other.seq))
    }
}

enum Step {
    Reply(Reply),
    /// Park with the current action as the pending one.
    Block,
    /// Park with a pending action already stored, or stop for good.
    Parked,
}

struct Engine<'a, P> {
    plan: &'a ExchangePlan,
    cost: CostModel,
    send_bufs: &'a [Vec<u8>],
    recv_bufs: Vec<Vec<u8>>,
    programs: Vec<P>,
    ranks: Vec<RankState>,
    requests: Vec<Request>,
    messages: Vec<Message>,
    events: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: f64,
    trace: EventTrace,
}

/// Runs one program per rank to completion on the simulated network.
pub fn simulate_programs<P: RankProgram>(
    plan: &ExchangePlan,
    programs: Vec<P>,
    config: &SimConfig,
    send_bufs: &[Vec<u8>],
) -> Result<SimOutcome, SimError> {
    plan.validate()?;
    config.cost.validate()?;
    let n = plan.n_ranks();
    assert_eq!(programs.len(), n, "one program per rank");
    assert_eq!(send_bufs.len(), n, "one send buffer per rank");
    let starts = config.skew.offsets(n, config.seed)?;
    let ranks = programs
        .iter()
        .zip(&starts)
        .map(|(prog, &start)| RankState {
            start,
            status: Status::Waiting,
            pending: None,
            batch: vec![None; prog.slots()],
            posted: VecDeque::new(),
            unexpected: VecDeque::new(),
            nic_free: 0.0,
            rx_free: 0.0,
            last_retire: start,
            outstanding: 0,
            stats: RankSimStats::default(),
        })
        .collect();
    let mut engine = Engine {
        plan,
        cost: config.cost,
        send_bufs,
        recv_bufs: (0..n).map(|r| vec![0u8; plan.recv_buf_len(r)]).collect(),
        programs,
        ranks,
        requests: Vec::new(),
        messages: Vec::new(),
        events: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        trace: EventTrace::new(),
    };
    for (rank, &start) in starts.iter().enumerate() {
        engine.schedule(start, rank, EventKind::Start);
    }
    engine.run()?;
    let finish = engine
        .ranks
        .iter()
        .map(|r| r.last_retire - r.start)
        .collect();
    Ok(SimOutcome {
        starts,
        finish,
        trace: engine.trace,
        recv_bufs: engine.recv_bufs,
        stats: engine.ranks.into_iter().map(|r| r.stats).collect(),
    })
}

impl<P: RankProgram> Engine<'_, P> {
    fn schedule(&mut self, time: f64, rank: Rank, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event {
            time,
            rank,
            seq: self.seq,
            kind,
        }));
    }

    fn record(&mut self, rank: Rank, event: TraceEvent, peer: Rank, bytes: usize, queue_len: usize) {
        self.trace.push(TraceRecord {
            time: self.now,
            rank,
            event,
            peer,
            bytes,
            queue_len,
        });
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse(ev)) = self.events.pop() {
            self.now = ev.time;
            match ev.kind {
                EventKind::Start => {
                    self.ranks[ev.rank].status = Status::Running;
                    self.record(ev.rank, TraceEvent::Start, ev.rank, 0, 0);
                    let first = self.programs[ev.rank].next(Reply::Start);
                    self.drive(ev.rank, first)?;
                }
                EventKind::Resume => self.wake(ev.rank)?,
                EventKind::Arrive(msg) => self.arrive(msg)?,
                EventKind::Complete(req) => self.complete(req)?,
            }
        }
        let stuck: Vec<StuckRank> = self
            .ranks
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status != Status::Done)
            .map(|(rank, r)| StuckRank {
                rank,
                pending_peers: r
                    .batch
                    .iter()
                    .flatten()
                    .filter(|&&id| !self.requests[id].complete)
                    .map(|&id| self.requests[id].peer)
                    .collect(),
            })
            .collect();
        if stuck.is_empty() {
            Ok(())
        } else {
            Err(SimError::Deadlock { stuck })
        }
    }

    /// Performs `action` and keeps feeding the program until it blocks.
    fn drive(&mut self, rank: Rank, mut action: Action) -> Result<(), SimError> {
        loop {
            match self.perform(rank, action)? {
                Step::Reply(reply) => action = self.programs[rank].next(reply),
                Step::Block => {
                    self.ranks[rank].pending = Some(action);
                    return Ok(());
                }
                Step::Parked => return Ok(()),
            }
        }
    }

    /// Retries the action a rank is parked on.
    fn wake(&mut self, rank: Rank) -> Result<(), SimError> {
        let state = &mut self.ranks[rank];
        if !matches!(state.status, Status::Blocked | Status::Polling) {
            return Ok(());
        }
        state.status = Status::Running;
        let action = state.pending.take().expect("parked rank has a pending action");
        self.drive(rank, action)
    }

    fn perform(&mut self, rank: Rank, action: Action) -> Result<Step, SimError> {
        Ok(match action {
            Action::Post { slot, kind, peer } => {
                if peer >= self.plan.n_ranks() {
                    return Err(SimError::InvalidPeer { rank, peer });
                }
                let id = match kind {
                    RequestKind::Send => self.isend(rank, peer),
                    RequestKind::Recv => self.irecv(rank, peer),
                };
                let state = &mut self.ranks[rank];
                assert!(state.batch[slot].is_none(), "slot {slot} still holds a live request");
                state.batch[slot] = Some(id);
                state.outstanding += 1;
                state.stats.max_outstanding = state.stats.max_outstanding.max(state.outstanding);
                Step::Reply(Reply::Posted)
            }
            Action::WaitAll => {
                let live: Vec<usize> = self.live_slots(rank).collect();
                if live.iter().all(|&s| self.slot_complete(rank, s)) {
                    for &slot in &live {
                        self.retire(rank, slot);
                    }
                    Step::Reply(Reply::AllRetired(live.len()))
                } else {
                    self.ranks[rank].status = Status::Blocked;
                    Step::Block
                }
            }
            Action::WaitAny => match self.probe(rank) {
                Probe::Undefined => Step::Reply(Reply::Any(None)),
                Probe::Completed(slot) => Step::Reply(Reply::Any(Some(slot))),
                Probe::Pending => {
                    self.ranks[rank].status = Status::Blocked;
                    Step::Block
                }
            },
            Action::TestAny => match self.probe(rank) {
                Probe::Pending => self.failed_poll(rank)?,
                done => Step::Reply(Reply::Tested(done)),
            },
            Action::Done => {
                let state = &mut self.ranks[rank];
                state.status = Status::Done;
                self.record(rank, TraceEvent::Finish, rank, 0, 0);
                Step::Parked
            }
        })
    }

    /// An unsuccessful test_any. Nothing can change for this rank before
    /// the next queued event, so every poll strictly before that instant is
    /// charged at once and the rank sleeps until the first poll at or after
    /// it.
    fn failed_poll(&mut self, rank: Rank) -> Result<Step, SimError> {
        let poll_cost = self.cost.poll_cost;
        if poll_cost <= 0.0 {
            // Free polls: equivalent to blocking until the next completion.
            self.ranks[rank].stats.failed_polls += 1;
            self.ranks[rank].status = Status::Blocked;
            let retry = self.programs[rank].next(Reply::Tested(Probe::Pending));
            self.ranks[rank].pending = Some(retry);
            return Ok(Step::Parked);
        }
        let polls = match self.events.peek() {
            Some(Reverse(next)) => (((next.time - self.now) / poll_cost).ceil() as u64).max(1),
            None => 1,
        };
        let mut retry = Action::TestAny;
        for _ in 0..polls {
            retry = self.programs[rank].next(Reply::Tested(Probe::Pending));
        }
        let state = &mut self.ranks[rank];
        state.stats.failed_polls += polls;
        state.status = Status::Polling;
        state.pending = Some(retry);
        if self.events.is_empty() {
            // Nothing will ever complete; leave the rank parked for the
            // deadlock report.
            return Ok(Step::Parked);
        }
        let wake_at = self.now + polls as f64 * poll_cost;
        self.schedule(wake_at, rank, EventKind::Resume);
        Ok(Step::Parked)
    }

    fn live_slots(&self, rank: Rank) -> impl Iterator<Item = usize> + '_ {
        self.ranks[rank]
            .batch
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|_| i))
    }

    fn slot_complete(&self, rank: Rank, slot: usize) -> bool {
        self.ranks[rank].batch[slot].is_some_and(|id| self.requests[id].complete)
    }

    /// Retires the lowest completed slot, if any.
    fn probe(&mut self, rank: Rank) -> Probe {
        if self.ranks[rank].batch.iter().all(Option::is_none) {
            return Probe::Undefined;
        }
        let ready = self.live_slots(rank).find(|&s| self.slot_complete(rank, s));
        match ready {
            Some(slot) => {
                self.retire(rank, slot);
                Probe::Completed(slot)
            }
            None => Probe::Pending,
        }
    }

    fn retire(&mut self, rank: Rank, slot: usize) {
        let id = self.ranks[rank].batch[slot].take().expect("live slot");
        let (peer, bytes) = (self.requests[id].peer, self.requests[id].bytes);
        let state = &mut self.ranks[rank];
        state.outstanding -= 1;
        state.stats.retired += 1;
        state.last_retire = self.now;
        self.record(rank, TraceEvent::Retire, peer, bytes, 0);
    }

    fn new_request(&mut self, owner: Rank, kind: RequestKind, peer: Rank, bytes: usize) -> ReqId {
        self.requests.push(Request {
            owner,
            kind,
            peer,
            bytes,
            complete: false,
        });
        self.requests.len() - 1
    }

    fn isend(&mut self, src: Rank, dst: Rank) -> ReqId {
        let bytes = self.plan.message_bytes(src, dst);
        let id = self.new_request(src, RequestKind::Send, dst, bytes);
        self.messages.push(Message { src, dst, bytes });
        let msg = self.messages.len() - 1;
        self.record(src, TraceEvent::Isend, dst, bytes, 0);

        let cost = self.cost;
        let (send_done, arrival) = if src == dst {
            let t = self.now + cost.local_copy_cost * bytes as f64;
            (t, t)
        } else {
            let wire = cost.beta * bytes as f64;
            let depart = if cost.inject_serialize {
                self.now.max(self.ranks[src].nic_free)
            } else {
                self.now
            };
            let wire_end = depart + wire;
            if cost.inject_serialize {
                self.ranks[src].nic_free = wire_end;
            }
            let mut arrival = wire_end + cost.alpha;
            if cost.recv_serialize {
                arrival = arrival.max(self.ranks[dst].rx_free + wire);
                self.ranks[dst].rx_free = arrival;
            }
            (wire_end, arrival)
        };
        self.schedule(send_done, src, EventKind::Complete(id));
        self.schedule(arrival, dst, EventKind::Arrive(msg));
        id
    }

    fn irecv(&mut self, dst: Rank, src: Rank) -> ReqId {
        let capacity = self.plan.message_bytes(src, dst);
        let id = self.new_request(dst, RequestKind::Recv, src, capacity);
        self.record(dst, TraceEvent::Irecv, src, capacity, 0);
        let state = &mut self.ranks[dst];
        let hit = state
            .unexpected
            .iter()
            .position(|&m| self.messages[m].src == src);
        match hit {
            Some(pos) => {
                state.unexpected.remove(pos);
                self.schedule(self.now, dst, EventKind::Complete(id));
            }
            None => {
                state.posted.push_back(id);
                state.stats.max_posted_queue = state.stats.max_posted_queue.max(state.posted.len());
            }
        }
        id
    }

    fn arrive(&mut self, msg: MsgId) -> Result<(), SimError> {
        let Message { src, dst, bytes } = self.messages[msg];
        if self.ranks[dst].status == Status::Waiting {
            // held in the network until the destination enters the exchange
            let start = self.ranks[dst].start;
            self.schedule(start, dst, EventKind::Arrive(msg));
            return Ok(());
        }
        let state = &mut self.ranks[dst];
        let hit = state
            .posted
            .iter()
            .position(|&r| self.requests[r].peer == src);
        let scanned = hit.map_or(state.posted.len(), |pos| pos + 1);
        let match_cost = self.cost.match_cost(scanned);
        state.stats.matching.posted_receive_scans += scanned as u64;
        state.stats.match_cost += match_cost;
        match hit {
            Some(pos) => {
                let req = state.posted.remove(pos).expect("indexed entry");
                let capacity = self.requests[req].bytes;
                if bytes > capacity {
                    return Err(SimError::Truncation {
                        src,
                        dst,
                        bytes,
                        capacity,
                    });
                }
                self.schedule(self.now + match_cost, dst, EventKind::Complete(req));
            }
            None => {
                state.stats.matching.unexpected_messages += 1;
                state.unexpected.push_back(msg);
            }
        }
        self.record(dst, TraceEvent::Arrive, src, bytes, scanned);
        Ok(())
    }

    fn complete(&mut self, id: ReqId) -> Result<(), SimError> {
        let (owner, kind, peer, bytes) = {
            let r = &mut self.requests[id];
            r.complete = true;
            (r.owner, r.kind, r.peer, r.bytes)
        };
        match kind {
            RequestKind::Send => self.record(owner, TraceEvent::SendComplete, peer, bytes, 0),
            RequestKind::Recv => {
                let src_range = self.plan.send_range(peer, owner);
                let dst_range = self.plan.recv_range(owner, peer);
                self.recv_bufs[owner][dst_range].copy_from_slice(&self.send_bufs[peer][src_range]);
                self.record(owner, TraceEvent::RecvComplete, peer, bytes, 0);
            }
        }
        if self.ranks[owner].status == Status::Blocked {
            self.wake(owner)?;
        }
        Ok(())
    }
}
