//! Deterministic discrete-event simulation of a lossy broadcast network.
//!
//! Transmissions are radio-style broadcasts: every other live node is a
//! potential receiver, and each directed sender/receiver pair succeeds
//! independently with a configured link quality. A message is either
//! received intact or not received at all, and neither side learns which;
//! there are no partial deliveries, no corruption, and no implicit acks.
//! Interference windows additionally kill every delivery between two node
//! sets whose flight interval touches the window. Nodes can die on a
//! schedule; a dead node never sends, receives, or fires timers again.
//!
//! Everything is deterministic. Events are processed in `(time, sequence)`
//! order, where the sequence number records scheduling order, and all loss
//! draws come from one seeded stream in event order, with per-receiver
//! draws made in ascending node id. Running the same configuration twice
//! yields an identical event trace, byte for byte.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::NodeId;

/// Anything sent over the simulated radio reports its encoded size so the
/// simulator can account for bandwidth.
pub trait WireSize {
    fn wire_bytes(&self) -> usize;
}

/// What a node can be woken up with.
#[derive(Clone, Debug)]
pub enum Input<M> {
    /// Delivered once to every node at time zero, before anything else.
    Start,
    /// A broadcast from `from` that survived the link.
    Deliver { from: NodeId, msg: M },
    /// A timer the node armed earlier has come due.
    TimerFired { tag: u32 },
}

/// Actions a node requests while handling an input. The simulator applies
/// them after the handler returns: broadcasts first, in push order, then
/// timers.
#[derive(Debug)]
pub struct Outbox<M> {
    broadcasts: Vec<M>,
    timers: Vec<(f64, u32)>,
}

impl<M> Outbox<M> {
    fn new() -> Self {
        Outbox { broadcasts: Vec::new(), timers: Vec::new() }
    }

    /// Queue a broadcast to all other live nodes.
    pub fn broadcast(&mut self, msg: M) {
        self.broadcasts.push(msg);
    }

    /// Arm a timer to fire `delay` seconds from now with the given tag.
    pub fn set_timer(&mut self, delay: f64, tag: u32) {
        assert!(delay >= 0.0, "timer delay must be nonnegative");
        self.timers.push((delay, tag));
    }
}

/// A node participating in the simulation: an isolated state machine that
/// interacts with the world only through its inputs and outbox.
pub trait SimNode {
    type Msg: Clone + WireSize;

    fn handle(&mut self, now: f64, input: Input<Self::Msg>, out: &mut Outbox<Self::Msg>);
}

/// A time span during which no message crosses between node sets `a` and
/// `b`, in either direction. A delivery is killed when any part of its
/// flight interval (send time through arrival time, endpoints included)
/// overlaps the window.
#[derive(Clone, Debug)]
pub struct InterferenceWindow {
    pub start: f64,
    pub end: f64,
    pub a: BTreeSet<NodeId>,
    pub b: BTreeSet<NodeId>,
}

impl InterferenceWindow {
    fn blocks(&self, x: NodeId, y: NodeId, sent: f64, arrives: f64) -> bool {
        if sent > self.end || arrives < self.start {
            return false;
        }
        (self.a.contains(&x) && self.b.contains(&y))
            || (self.a.contains(&y) && self.b.contains(&x))
    }
}

/// Per-directed-pair delivery probabilities plus interference windows.
/// Quality may be asymmetric. Missing pairs default to zero (no link).
#[derive(Clone, Debug, Default)]
pub struct LinkModel {
    quality: BTreeMap<(NodeId, NodeId), f64>,
    windows: Vec<InterferenceWindow>,
}

impl LinkModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every ordered pair among `n` nodes gets quality `q`.
    pub fn full(n: u32, q: f64) -> Self {
        let mut lm = Self::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    lm.set(NodeId(i), NodeId(j), q);
                }
            }
        }
        lm
    }

    pub fn set(&mut self, from: NodeId, to: NodeId, q: f64) {
        assert!(
            (0.0..=1.0).contains(&q),
            "link quality must be a probability, got {q}"
        );
        self.quality.insert((from, to), q);
    }

    /// Make both directions of a pair the same quality.
    pub fn set_sym(&mut self, a: NodeId, b: NodeId, q: f64) {
        self.set(a, b, q);
        self.set(b, a, q);
    }

    pub fn quality(&self, from: NodeId, to: NodeId) -> f64 {
        self.quality.get(&(from, to)).copied().unwrap_or(0.0)
    }

    pub fn add_window(&mut self, w: InterferenceWindow) {
        assert!(w.start <= w.end, "interference window must not be inverted");
        self.windows.push(w);
    }

    fn blocked(&self, from: NodeId, to: NodeId, sent: f64, arrives: f64) -> bool {
        self.windows.iter().any(|w| w.blocks(from, to, sent, arrives))
    }
}

/// When each node dies. Nodes absent from the map live forever.
#[derive(Clone, Debug, Default)]
pub struct FailureSchedule {
    pub death_time: BTreeMap<NodeId, f64>,
}

impl FailureSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn at(times: impl IntoIterator<Item = (NodeId, f64)>) -> Self {
        let death_time: BTreeMap<_, _> = times.into_iter().collect();
        assert!(
            death_time.values().all(|t| *t >= 0.0),
            "death times must be nonnegative"
        );
        FailureSchedule { death_time }
    }

    /// Sample one independent exponential lifetime per node, in ascending
    /// node id, from a stream seeded independently of the simulator's.
    pub fn exponential(n: u32, rate: f64, seed: u64) -> Self {
        assert!(rate > 0.0, "failure rate must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut death_time = BTreeMap::new();
        for id in 0..n {
            let u: f64 = rng.random();
            death_time.insert(NodeId(id), -(1.0 - u).ln() / rate);
        }
        FailureSchedule { death_time }
    }
}

/// Simulator knobs with the defaults used throughout the test corpus.
#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    /// Fixed send-to-arrival delay for every delivery, in seconds.
    pub latency: f64,
    /// Seed of the loss-draw stream.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { latency: 0.05, seed: 0 }
    }
}

enum Pending<M> {
    Start { node: NodeId },
    Death { node: NodeId },
    Timer { node: NodeId, tag: u32 },
    Deliver { from: NodeId, to: NodeId, msg: M, bytes: usize },
}

struct Queued<M> {
    time: f64,
    seq: u64,
    item: Pending<M>,
}

impl<M> PartialEq for Queued<M> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq && self.time.total_cmp(&other.time) == Ordering::Equal
    }
}

impl<M> Eq for Queued<M> {}

impl<M> PartialOrd for Queued<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Queued<M> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

/// One processed event, as reported by [`Sim::step`]. Comparing two runs'
/// step records is how trace-level determinism is asserted.
#[derive(Clone, Debug, PartialEq)]
pub struct Stepped {
    pub time: f64,
    pub kind: SteppedKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SteppedKind {
    Started { node: NodeId },
    NodeDied { node: NodeId },
    TimerFired { node: NodeId, tag: u32 },
    Delivered { from: NodeId, to: NodeId, bytes: usize },
    /// A delivery or timer addressed to a node that died first.
    DroppedAtDeadNode { node: NodeId },
}

/// The event loop. Owns the nodes, the clock, the queue, and the loss
/// stream.
pub struct Sim<N: SimNode> {
    nodes: Vec<N>,
    alive: Vec<bool>,
    links: LinkModel,
    queue: BinaryHeap<Reverse<Queued<N::Msg>>>,
    next_seq: u64,
    now: f64,
    latency: f64,
    rng: ChaCha8Rng,
    bytes_sent: Vec<u64>,
}

impl<N: SimNode> Sim<N> {
    pub fn new(nodes: Vec<N>, links: LinkModel, failures: &FailureSchedule, cfg: SimConfig) -> Self {
        let n = nodes.len();
        let mut sim = Sim {
            alive: vec![true; n],
            nodes,
            links,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0.0,
            latency: cfg.latency,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            bytes_sent: vec![0; n],
        };
        for id in 0..n as u32 {
            sim.push(0.0, Pending::Start { node: NodeId(id) });
        }
        for (&node, &t) in &failures.death_time {
            assert!(node.index() < n, "failure schedule names unknown node {node}");
            if t.is_finite() {
                sim.push(t, Pending::Death { node });
            }
        }
        sim
    }

    fn push(&mut self, time: f64, item: Pending<N::Msg>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued { time, seq, item }));
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &N {
        &self.nodes[id.index()]
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.alive[id.index()]
    }

    pub fn bytes_sent(&self, id: NodeId) -> u64 {
        self.bytes_sent[id.index()]
    }

    pub fn bytes_sent_total(&self) -> u64 {
        self.bytes_sent.iter().sum()
    }

    /// Time of the next queued event, if any.
    pub fn peek_time(&self) -> Option<f64> {
        self.queue.peek().map(|Reverse(q)| q.time)
    }

    /// Pop and process one event. Returns `None` once the queue is empty.
    pub fn step(&mut self) -> Option<Stepped> {
        let Reverse(q) = self.queue.pop()?;
        self.now = q.time;
        let kind = match q.item {
            Pending::Start { node } => {
                self.dispatch(node, Input::Start);
                SteppedKind::Started { node }
            }
            Pending::Death { node } => {
                self.alive[node.index()] = false;
                SteppedKind::NodeDied { node }
            }
            Pending::Timer { node, tag } => {
                if self.alive[node.index()] {
                    self.dispatch(node, Input::TimerFired { tag });
                    SteppedKind::TimerFired { node, tag }
                } else {
                    SteppedKind::DroppedAtDeadNode { node }
                }
            }
            Pending::Deliver { from, to, msg, bytes } => {
                if self.alive[to.index()] {
                    self.dispatch(to, Input::Deliver { from, msg });
                    SteppedKind::Delivered { from, to, bytes }
                } else {
                    SteppedKind::DroppedAtDeadNode { node: to }
                }
            }
        };
        Some(Stepped { time: q.time, kind })
    }

    /// Process every event up to and including time `t`, then advance the
    /// clock to `t`.
    pub fn run_until(&mut self, t: f64) {
        while self.peek_time().is_some_and(|pt| pt <= t) {
            self.step();
        }
        if t > self.now {
            self.now = t;
        }
    }

    fn dispatch(&mut self, node: NodeId, input: Input<N::Msg>) {
        let mut out = Outbox::new();
        self.nodes[node.index()].handle(self.now, input, &mut out);
        let Outbox { broadcasts, timers } = out;
        for msg in broadcasts {
            self.broadcast_now(node, msg);
        }
        for (delay, tag) in timers {
            self.push(self.now + delay, Pending::Timer { node, tag });
        }
    }

    /// One radio transmission: charge the sender once, then draw each
    /// receiver's loss independently in ascending node id. The draw is made
    /// even for links an interference window will kill, so the random
    /// stream does not depend on window placement.
    fn broadcast_now(&mut self, sender: NodeId, msg: N::Msg) {
        let bytes = msg.wire_bytes();
        self.bytes_sent[sender.index()] += bytes as u64;
        let arrives = self.now + self.latency;
        for j in 0..self.nodes.len() as u32 {
            let to = NodeId(j);
            if to == sender || !self.alive[to.index()] {
                continue;
            }
            let q = self.links.quality(sender, to);
            let heard = self.rng.random_bool(q);
            if heard && !self.links.blocked(sender, to, self.now, arrives) {
                self.push(
                    arrives,
                    Pending::Deliver { from: sender, to, msg: msg.clone(), bytes },
                );
            }
        }
    }
}
