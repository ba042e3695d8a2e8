//! Insecure baseline: the server signals all clients, each replies with its
//! plaintext input vector, and the server outputs the elementwise sum. One
//! round trip; the reference point for every other protocol's overhead.

use std::collections::BTreeMap;

use crate::api::{broadcast, ClientLogic, ProtocolError, ServerAction, ServerLogic};
use crate::field::{Field, FieldVector};
use crate::kernel::AgentId;
use crate::wire::{Reader, Writer};

pub struct BaselineServer {
    field: Field,
    n_clients: usize,
    dimension: usize,
    /// Minimum responses to produce a result, ceil((1 - delta) * n).
    min_responses: usize,
}

pub struct BaselineClient {
    input: FieldVector,
}

impl ServerLogic for BaselineServer {
    fn on_round(
        &mut self,
        round: u32,
        messages: &BTreeMap<AgentId, Vec<u8>>,
    ) -> Result<ServerAction, ProtocolError> {
        match round {
            0 => Ok(ServerAction::Send(broadcast(1..=self.n_clients, Vec::new()))),
            1 => {
                if messages.len() < self.min_responses {
                    return Ok(ServerAction::Fail(format!(
                        "only {} of {} required responses",
                        messages.len(),
                        self.min_responses
                    )));
                }
                let mut sum = FieldVector::zeros(self.field, self.dimension);
                for payload in messages.values() {
                    let v = Reader::new(payload).get_fv(self.field)?;
                    sum.add_assign(&v)?;
                }
                Ok(ServerAction::Succeed { output: sum, contributors: messages.keys().copied().collect() })
            }
            r => Err(ProtocolError::State(format!("unexpected round {r}"))),
        }
    }
}

impl ClientLogic for BaselineClient {
    fn on_round(&mut self, round: u32, _payload: &[u8]) -> Result<Option<Vec<u8>>, ProtocolError> {
        if round != 1 {
            return Ok(None);
        }
        let mut w = Writer::new();
        w.put_fv(&self.input);
        Ok(Some(w.finish()))
    }
}

pub fn build(
    field: Field,
    inputs: Vec<FieldVector>,
    delta: f64,
) -> (Box<dyn ServerLogic>, Vec<Box<dyn ClientLogic>>) {
    let n = inputs.len();
    let dimension = inputs.first().map_or(0, |v| v.len());
    let server = BaselineServer {
        field,
        n_clients: n,
        dimension,
        min_responses: crate::api::advance_threshold(n, delta),
    };
    let clients = inputs
        .into_iter()
        .map(|input| Box::new(BaselineClient { input }) as Box<dyn ClientLogic>)
        .collect();
    (Box::new(server), clients)
}
