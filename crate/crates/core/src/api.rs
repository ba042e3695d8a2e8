//! Round-oriented protocol layer on top of the event kernel.
//!
//! Protocols are written as two state machines: `ServerLogic` consumes the
//! full set of client payloads for a round and emits the next round's
//! per-client payloads (or terminates), and `ClientLogic` answers each
//! server message with at most one payload. Wrapper agents adapt both to the
//! kernel and implement dropout semantics from a precomputed `DropoutPlan`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::CryptoError;
use crate::field::{FieldError, FieldVector};
use crate::kernel::{Agent, AgentId, Ctx, Kernel, Message, SimulationResult, SERVER_ID};
use crate::net::LatencyMatrix;
use crate::shamir::ShareError;
use crate::wire::WireError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Share(#[from] ShareError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("protocol state error: {0}")]
    State(String),
}

/// Client-side round handler. Returning Ok(None) ends the client's
/// participation; an error drops the client (the server sees a missing
/// response, exactly like a crash).
pub trait ClientLogic {
    fn on_round(&mut self, round: u32, payload: &[u8]) -> Result<Option<Vec<u8>>, ProtocolError>;
}

/// What the server does once a round's messages are in.
pub enum ServerAction {
    /// Per-client payloads for the next round.
    Send(BTreeMap<AgentId, Vec<u8>>),
    Succeed { output: FieldVector, contributors: Vec<AgentId> },
    Fail(String),
}

/// Server-side round handler. Round 0 is the kickoff (empty message set);
/// afterwards `messages` maps responding client ids to their payloads for
/// the completed round.
pub trait ServerLogic {
    fn on_round(
        &mut self,
        round: u32,
        messages: &BTreeMap<AgentId, Vec<u8>>,
    ) -> Result<ServerAction, ProtocolError>;
}

/// Same payload to every target.
pub fn broadcast(targets: impl IntoIterator<Item = AgentId>, payload: Vec<u8>) -> BTreeMap<AgentId, Vec<u8>> {
    targets.into_iter().map(|c| (c, payload.clone())).collect()
}

/// Transpose {src -> {dst -> payload}} into {dst -> {src -> payload}}.
/// Payloads pass through byte-identical; the router never inspects them.
pub fn route_messages(
    messages: &BTreeMap<AgentId, BTreeMap<AgentId, Vec<u8>>>,
) -> BTreeMap<AgentId, BTreeMap<AgentId, Vec<u8>>> {
    let mut out: BTreeMap<AgentId, BTreeMap<AgentId, Vec<u8>>> = BTreeMap::new();
    for (&src, per_dst) in messages {
        for (&dst, payload) in per_dst {
            out.entry(dst).or_default().insert(src, payload.clone());
        }
    }
    out
}

/// Documented advancement rule: the server may move on once
/// ceil((1 - delta) * n_round) of the clients expected this round responded.
pub fn advance_threshold(n_round: usize, delta: f64) -> usize {
    ((1.0 - delta) * n_round as f64).ceil() as usize
}

/// Precomputed dropout schedule: exactly round(delta * n) clients get a drop
/// round uniform in [1, n_rounds]; from that round on they neither receive
/// nor send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutPlan {
    drop_round: BTreeMap<AgentId, u32>,
}

impl DropoutPlan {
    pub fn none() -> Self {
        DropoutPlan { drop_round: BTreeMap::new() }
    }

    pub fn generate(n_clients: usize, delta: f64, n_rounds: u32, rng: &mut ChaCha20Rng) -> Self {
        assert!((0.0..1.0).contains(&delta), "delta must be in [0, 1)");
        assert!(n_rounds >= 1);
        let n_drop = (delta * n_clients as f64).round() as usize;
        // partial Fisher-Yates over client ids 1..=n picks droppers uniformly
        let mut ids: Vec<AgentId> = (1..=n_clients).collect();
        let mut drop_round = BTreeMap::new();
        for i in 0..n_drop {
            let j = rng.random_range(i..ids.len());
            ids.swap(i, j);
            drop_round.insert(ids[i], rng.random_range(1..=n_rounds));
        }
        DropoutPlan { drop_round }
    }

    pub fn drop_round(&self, id: AgentId) -> Option<u32> {
        self.drop_round.get(&id).copied()
    }

    pub fn dropped_count(&self) -> usize {
        self.drop_round.len()
    }

    /// Whether the client is still alive in the given round.
    pub fn responds(&self, id: AgentId, round: u32) -> bool {
        self.drop_round.get(&id).map_or(true, |&d| round < d)
    }
}

/// Kernel agent wrapping a `ServerLogic`.
///
/// Round gating: the server advances once every client that was messaged
/// this round and is still alive per the dropout plan has responded. The
/// plan stands in for the wall-clock timeout a deployment would use, which
/// keeps the advancement decision (and thus the contributor set) independent
/// of measured handler durations.
pub struct RoundServer {
    logic: Box<dyn ServerLogic>,
    plan: DropoutPlan,
    current_round: u32,
    expected: BTreeSet<AgentId>,
    received: BTreeMap<AgentId, Vec<u8>>,
}

impl RoundServer {
    pub fn new(logic: Box<dyn ServerLogic>, plan: DropoutPlan) -> Self {
        RoundServer {
            logic,
            plan,
            current_round: 0,
            expected: BTreeSet::new(),
            received: BTreeMap::new(),
        }
    }

    fn dispatch(&mut self, ctx: &mut Ctx, action: ServerAction) -> Result<bool, String> {
        match action {
            ServerAction::Send(map) => {
                let next = self.current_round + 1;
                self.expected = map
                    .keys()
                    .copied()
                    .filter(|&c| self.plan.responds(c, next))
                    .collect();
                for (dst, payload) in map {
                    ctx.send(dst, next, payload).map_err(|e| e.to_string())?;
                }
                self.current_round = next;
                self.received.clear();
                Ok(false)
            }
            ServerAction::Succeed { output, contributors } => {
                ctx.succeed(output, contributors).map_err(|e| e.to_string())?;
                Ok(true)
            }
            ServerAction::Fail(reason) => {
                ctx.fail(reason).map_err(|e| e.to_string())?;
                Ok(true)
            }
        }
    }

    fn advance(&mut self, ctx: &mut Ctx) {
        // loop: a round where every messaged client is already dropped
        // completes immediately with an empty message set
        loop {
            let round = self.current_round;
            let messages = std::mem::take(&mut self.received);
            match self.logic.on_round(round, &messages) {
                Ok(action) => match self.dispatch(ctx, action) {
                    Ok(true) => return,
                    Ok(false) => {
                        if !self.expected.is_empty() {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = ctx.fail(format!("server dispatch error: {e}"));
                        return;
                    }
                },
                Err(e) => {
                    let _ = ctx.fail(format!("server error in round {round}: {e}"));
                    return;
                }
            }
        }
    }
}

impl Agent for RoundServer {
    fn on_message(&mut self, ctx: &mut Ctx, msg: &Message) {
        if msg.src == SERVER_ID && msg.round == 0 {
            self.advance(ctx);
            return;
        }
        if msg.round != self.current_round || !self.expected.contains(&msg.src) {
            // stale or duplicate delivery; round already advanced
            return;
        }
        self.received.insert(msg.src, msg.payload.clone());
        if self.received.len() == self.expected.len() {
            self.advance(ctx);
        }
    }
}

/// Kernel agent wrapping a `ClientLogic` plus its drop round.
pub struct RoundClient {
    id: AgentId,
    logic: Box<dyn ClientLogic>,
    drop_round: Option<u32>,
    errored: bool,
}

impl RoundClient {
    pub fn new(id: AgentId, logic: Box<dyn ClientLogic>, drop_round: Option<u32>) -> Self {
        RoundClient { id, logic, drop_round, errored: false }
    }
}

impl Agent for RoundClient {
    fn receives(&self, round: u32) -> bool {
        self.drop_round.map_or(true, |d| round < d)
    }

    fn on_message(&mut self, ctx: &mut Ctx, msg: &Message) {
        if self.errored {
            return;
        }
        match self.logic.on_round(msg.round, &msg.payload) {
            Ok(Some(reply)) => {
                ctx.send(SERVER_ID, msg.round, reply).expect("server always addressable");
            }
            Ok(None) => {}
            Err(e) => {
                // an uncaught protocol error silences the client for good
                log::warn!("client {} error in round {}: {e}", self.id, msg.round);
                self.errored = true;
            }
        }
    }
}

/// Assemble agents and run one protocol instance to termination.
pub fn run_protocol(
    server: Box<dyn ServerLogic>,
    clients: Vec<Box<dyn ClientLogic>>,
    plan: &DropoutPlan,
    latency: LatencyMatrix,
    kernel_rng: ChaCha20Rng,
) -> SimulationResult {
    let mut agents: Vec<Box<dyn Agent>> = Vec::with_capacity(clients.len() + 1);
    agents.push(Box::new(RoundServer::new(server, plan.clone())));
    for (i, logic) in clients.into_iter().enumerate() {
        let id = i + 1;
        agents.push(Box::new(RoundClient::new(id, logic, plan.drop_round(id))));
    }
    let mut kernel = Kernel::new(latency, kernel_rng);
    kernel.run(&mut agents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn advance_threshold_examples() {
        assert_eq!(advance_threshold(100, 0.05), 95);
        assert_eq!(advance_threshold(10, 0.0), 10);
        assert_eq!(advance_threshold(0, 0.05), 0);
        assert_eq!(advance_threshold(7, 0.05), 7); // ceil(6.65)
    }

    #[test]
    fn route_is_exact_transpose() {
        let mut m: BTreeMap<AgentId, BTreeMap<AgentId, Vec<u8>>> = BTreeMap::new();
        m.entry(1).or_default().insert(2, vec![1]);
        let r = route_messages(&m);
        assert_eq!(r[&2][&1], vec![1]);
        assert_eq!(route_messages(&BTreeMap::new()), BTreeMap::new());
    }

    #[test]
    fn route_is_involution_on_random_maps() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut m: BTreeMap<AgentId, BTreeMap<AgentId, Vec<u8>>> = BTreeMap::new();
            for src in 1..=6usize {
                for dst in 1..=6usize {
                    if src != dst && rng.random_range(0..2) == 1 {
                        let len = rng.random_range(0..8);
                        let mut payload = vec![0u8; len];
                        rng.fill(&mut payload[..]);
                        m.entry(src).or_default().insert(dst, payload);
                    }
                }
            }
            assert_eq!(route_messages(&route_messages(&m)), m);
        }
    }

    #[test]
    fn dropout_plan_exact_count_and_rounds() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for (n, delta, expect) in [(100usize, 0.05, 5usize), (64, 0.05, 3), (8, 0.0, 0), (10, 0.25, 3)] {
            let plan = DropoutPlan::generate(n, delta, 4, &mut rng);
            assert_eq!(plan.dropped_count(), expect, "n={n} delta={delta}");
            for id in 1..=n {
                if let Some(d) = plan.drop_round(id) {
                    assert!((1..=4).contains(&d));
                    assert!(plan.responds(id, d - 1) || d == 1);
                    assert!(!plan.responds(id, d));
                    assert!(!plan.responds(id, d + 1));
                }
            }
        }
    }

    #[test]
    fn dropout_plan_deterministic() {
        let a = DropoutPlan::generate(50, 0.1, 4, &mut ChaCha20Rng::seed_from_u64(42));
        let b = DropoutPlan::generate(50, 0.1, 4, &mut ChaCha20Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }
}
