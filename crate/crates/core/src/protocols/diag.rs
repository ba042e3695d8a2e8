//! Diagnostic protocols for validating the simulator itself: a zero-compute
//! stub with a configurable round count (latency laws) and a spin-loop
//! client (parallel-compute law). Neither aggregates anything.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::api::{broadcast, ClientLogic, ProtocolError, ServerAction, ServerLogic};
use crate::field::{Field, FieldVector};
use crate::kernel::AgentId;

pub struct StubServer {
    n_clients: usize,
    n_rounds: u32,
}

pub struct StubClient;

impl ServerLogic for StubServer {
    fn on_round(
        &mut self,
        round: u32,
        messages: &BTreeMap<AgentId, Vec<u8>>,
    ) -> Result<ServerAction, ProtocolError> {
        if round == self.n_rounds {
            Ok(ServerAction::Succeed {
                output: FieldVector::zeros(Field::mersenne31(), 0),
                contributors: messages.keys().copied().collect(),
            })
        } else {
            Ok(ServerAction::Send(broadcast(1..=self.n_clients, Vec::new())))
        }
    }
}

impl ClientLogic for StubClient {
    fn on_round(&mut self, _round: u32, _payload: &[u8]) -> Result<Option<Vec<u8>>, ProtocolError> {
        Ok(Some(Vec::new()))
    }
}

/// Empty-payload protocol with the given number of round trips.
pub fn build_stub(
    n_clients: usize,
    n_rounds: u32,
) -> (Box<dyn ServerLogic>, Vec<Box<dyn ClientLogic>>) {
    let server = StubServer { n_clients, n_rounds };
    let clients = (0..n_clients)
        .map(|_| Box::new(StubClient) as Box<dyn ClientLogic>)
        .collect();
    (Box::new(server), clients)
}

pub struct SpinClient {
    spin: std::time::Duration,
}

impl ClientLogic for SpinClient {
    fn on_round(&mut self, _round: u32, _payload: &[u8]) -> Result<Option<Vec<u8>>, ProtocolError> {
        let start = Instant::now();
        while start.elapsed() < self.spin {
            std::hint::spin_loop();
        }
        Ok(Some(Vec::new()))
    }
}

/// One-round protocol where client i busy-spins for spin_ms[i] of real time.
pub fn build_spin(spin_ms: &[u64]) -> (Box<dyn ServerLogic>, Vec<Box<dyn ClientLogic>>) {
    let server = StubServer { n_clients: spin_ms.len(), n_rounds: 1 };
    let clients = spin_ms
        .iter()
        .map(|&ms| {
            Box::new(SpinClient { spin: std::time::Duration::from_millis(ms) })
                as Box<dyn ClientLogic>
        })
        .collect();
    (Box::new(server), clients)
}
