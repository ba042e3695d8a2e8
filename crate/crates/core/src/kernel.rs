//! Deterministic discrete-event engine.
//!
//! All agents run on one machine. The kernel pops events in
//! (delivery time, sequence) order, invokes the recipient's handler,
//! measures the handler's real duration with a monotonic clock, and
//! schedules emitted messages at T + duration + network latency. Because
//! client handlers for one round never causally depend on each other,
//! sequential execution with per-handler timing reproduces the timing of
//! parallel client execution: a round lasts as long as its slowest client.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Instant;

use rand_chacha::ChaCha20Rng;

use crate::field::FieldVector;
use crate::net::LatencyMatrix;

/// Agent 0 is always the server; 1..=n are clients.
pub type AgentId = usize;

pub const SERVER_ID: AgentId = 0;

/// Fixed envelope overhead per message: src, dst, round, payload length.
pub const ENVELOPE_BYTES: u64 = 24;

#[derive(Debug, Clone)]
pub struct Message {
    pub src: AgentId,
    pub dst: AgentId,
    pub round: u32,
    pub payload: Vec<u8>,
}

impl Message {
    /// The unit of all communication-cost metrics.
    pub fn size_bytes(&self) -> u64 {
        ENVELOPE_BYTES + self.payload.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Success,
    Failed(String),
    /// Event queue emptied without a terminal call.
    Stalled,
    AgentError(AgentId, String),
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub status: Status,
    /// The protocol's aggregate output, when the server succeeded.
    pub output: Option<FieldVector>,
    /// Agent ids of the clients whose inputs are included in the output.
    pub contributors: Vec<AgentId>,
    /// Final simulated time (total protocol time) in nanoseconds.
    pub total_time_ns: u64,
    /// Per-agent accumulated compute nanoseconds, indexed by agent id.
    pub compute_ns: Vec<u64>,
    pub bytes_sent: Vec<u64>,
    pub bytes_received: Vec<u64>,
    pub rounds_completed: u32,
}

#[derive(Debug)]
enum Terminal {
    Succeed { output: FieldVector, contributors: Vec<AgentId> },
    Fail(String),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("unknown destination agent {0}")]
    UnknownDestination(AgentId),
    #[error("succeed/fail called twice")]
    DoubleTermination,
}

/// Handler-side view of the kernel: queue outgoing messages, or terminate
/// the protocol. Only the server should call succeed/fail.
pub struct Ctx {
    n_agents: usize,
    outbox: Vec<Message>,
    terminal: Option<Terminal>,
    already_terminated: bool,
}

impl Ctx {
    pub fn send(&mut self, dst: AgentId, round: u32, payload: Vec<u8>) -> Result<(), KernelError> {
        if dst >= self.n_agents {
            return Err(KernelError::UnknownDestination(dst));
        }
        self.outbox.push(Message { src: 0, dst, round, payload });
        Ok(())
    }

    pub fn succeed(
        &mut self,
        output: FieldVector,
        contributors: Vec<AgentId>,
    ) -> Result<(), KernelError> {
        if self.terminal.is_some() || self.already_terminated {
            return Err(KernelError::DoubleTermination);
        }
        self.terminal = Some(Terminal::Succeed { output, contributors });
        Ok(())
    }

    pub fn fail(&mut self, reason: impl Into<String>) -> Result<(), KernelError> {
        if self.terminal.is_some() || self.already_terminated {
            return Err(KernelError::DoubleTermination);
        }
        self.terminal = Some(Terminal::Fail(reason.into()));
        Ok(())
    }
}

pub trait Agent {
    /// Handle a delivered message. Emitted messages and termination go
    /// through the context.
    fn on_message(&mut self, ctx: &mut Ctx, msg: &Message);

    /// Whether this agent still accepts deliveries for the given round.
    /// Dropped clients return false; such deliveries count as sent but
    /// not received.
    fn receives(&self, _round: u32) -> bool {
        true
    }
}

struct Event {
    deliver_at: u64,
    sequence: u64,
    msg: Message,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.deliver_at == other.deliver_at && self.sequence == other.sequence
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.deliver_at, self.sequence).cmp(&(other.deliver_at, other.sequence))
    }
}

pub struct Kernel {
    latency: LatencyMatrix,
    rng: ChaCha20Rng,
    /// Multiplier on measured compute times (hardware-class emulation).
    pub compute_scale: f64,
}

impl Kernel {
    pub fn new(latency: LatencyMatrix, rng: ChaCha20Rng) -> Self {
        Kernel { latency, rng, compute_scale: 1.0 }
    }

    /// Run agents to termination. `agents[0]` is the server; it receives a
    /// kickoff message for round 0 at simulated time zero.
    pub fn run(&mut self, agents: &mut [Box<dyn Agent>]) -> SimulationResult {
        let n_agents = agents.len();
        assert!(n_agents >= 1, "need at least a server agent");

        let mut queue: BinaryHeap<Reverse<Event>> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut compute_ns = vec![0u64; n_agents];
        let mut bytes_sent = vec![0u64; n_agents];
        let mut bytes_received = vec![0u64; n_agents];
        let mut rounds_completed = 0u32;
        let mut now = 0u64;

        queue.push(Reverse(Event {
            deliver_at: 0,
            sequence: seq,
            msg: Message { src: SERVER_ID, dst: SERVER_ID, round: 0, payload: Vec::new() },
        }));
        seq += 1;

        let mut terminal: Option<Terminal> = None;
        let mut agent_error: Option<(AgentId, String)> = None;

        while let Some(Reverse(event)) = queue.pop() {
            now = event.deliver_at;
            let msg = event.msg;
            let dst = msg.dst;

            if terminal.is_some() || agent_error.is_some() {
                // drain without invoking handlers, keeping byte accounting
                // consistent for messages already in flight
                if agents[dst].receives(msg.round) {
                    bytes_received[dst] += msg.size_bytes();
                }
                continue;
            }

            if !agents[dst].receives(msg.round) {
                // delivery to a dropped client: sent, never received
                continue;
            }
            bytes_received[dst] += msg.size_bytes();

            let mut ctx = Ctx {
                n_agents,
                outbox: Vec::new(),
                terminal: None,
                already_terminated: false,
            };
            let start = Instant::now();
            let panicked = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                agents[dst].on_message(&mut ctx, &msg);
            }))
            .is_err();
            let elapsed = start.elapsed().as_nanos() as f64 * self.compute_scale;
            // 1 ns floor avoids zero-duration pathologies at clock granularity
            let duration = (elapsed as u64).max(1);
            compute_ns[dst] += duration;

            if panicked {
                agent_error = Some((dst, "handler panicked".to_string()));
                now += duration;
                continue;
            }

            for mut out in ctx.outbox {
                out.src = dst;
                rounds_completed = rounds_completed.max(out.round);
                bytes_sent[dst] += out.size_bytes();
                let delay = self.latency.sample_delay(dst, out.dst, &mut self.rng);
                queue.push(Reverse(Event {
                    deliver_at: now + duration + delay,
                    sequence: seq,
                    msg: out,
                }));
                seq += 1;
            }
            if let Some(t) = ctx.terminal {
                terminal = Some(t);
                now += duration;
            }
        }

        let (status, output, contributors) = match (terminal, agent_error) {
            (_, Some((id, e))) => (Status::AgentError(id, e), None, Vec::new()),
            (Some(Terminal::Succeed { output, contributors }), _) => {
                (Status::Success, Some(output), contributors)
            }
            (Some(Terminal::Fail(reason)), _) => (Status::Failed(reason), None, Vec::new()),
            (None, None) => (Status::Stalled, None, Vec::new()),
        };

        SimulationResult {
            status,
            output,
            contributors,
            total_time_ns: now,
            compute_ns,
            bytes_sent,
            bytes_received,
            rounds_completed,
        }
    }
}
