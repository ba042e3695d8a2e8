//! Secret-sharing aggregation: each client Shamir-shares its input vector
//! among all clients (encrypted, server-routed), clients add the shares they
//! hold, and the server reconstructs the sum from the summed shares. The
//! per-client upload is Theta(n * l) field elements.
//!
//! Rounds: 1) public keys, 2) encrypted shares, 3) summed shares; the
//! server then reconstructs and terminates.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::api::{broadcast, ClientLogic, ProtocolError, ServerAction, ServerLogic};
use crate::crypto::{agree, decrypt, encrypt, keygen, KeyPair};
use crate::field::{Field, FieldVector};
use crate::kernel::AgentId;
use crate::shamir::{reconstruct_array, share_array_at, sum_share_array, ShareArray};
use crate::wire::{Reader, Writer};

pub struct ShamirServer {
    field: Field,
    n_clients: usize,
    /// Clients whose shares were distributed; their inputs are in the output.
    share_senders: Vec<AgentId>,
}

pub struct ShamirClient {
    id: AgentId,
    input: FieldVector,
    threshold: usize,
    rng: ChaCha20Rng,
    keys: Option<KeyPair>,
    peer_pks: BTreeMap<AgentId, [u8; 32]>,
    own_share: Option<ShareArray>,
}

impl ServerLogic for ShamirServer {
    fn on_round(
        &mut self,
        round: u32,
        messages: &BTreeMap<AgentId, Vec<u8>>,
    ) -> Result<ServerAction, ProtocolError> {
        match round {
            0 => Ok(ServerAction::Send(broadcast(1..=self.n_clients, Vec::new()))),
            1 => {
                // redistribute each client its peers' public keys
                let mut out = BTreeMap::new();
                for &u in messages.keys() {
                    let mut w = Writer::new();
                    let peers: BTreeMap<u32, Vec<u8>> = messages
                        .iter()
                        .filter(|(&v, _)| v != u)
                        .map(|(&v, pk)| (v as u32, pk.clone()))
                        .collect();
                    w.put_map(&peers);
                    out.insert(u, w.finish());
                }
                Ok(ServerAction::Send(out))
            }
            2 => {
                // route encrypted shares; payloads pass through untouched
                let mut nested: BTreeMap<AgentId, BTreeMap<AgentId, Vec<u8>>> = BTreeMap::new();
                for (&src, payload) in messages {
                    let m = Reader::new(payload).get_map()?;
                    nested.insert(src, m.into_iter().map(|(k, v)| (k as AgentId, v)).collect());
                }
                self.share_senders = nested.keys().copied().collect();
                let routed = crate::api::route_messages(&nested);
                let mut out = BTreeMap::new();
                for &u in messages.keys() {
                    let mut w = Writer::new();
                    let per_src: BTreeMap<u32, Vec<u8>> = routed
                        .get(&u)
                        .map(|m| m.iter().map(|(&s, p)| (s as u32, p.clone())).collect())
                        .unwrap_or_default();
                    w.put_map(&per_src);
                    out.insert(u, w.finish());
                }
                Ok(ServerAction::Send(out))
            }
            3 => {
                let mut shares = Vec::with_capacity(messages.len());
                for payload in messages.values() {
                    shares.push(ShareArray::decode(&mut Reader::new(payload), self.field)?);
                }
                match reconstruct_array(&shares) {
                    Ok(output) => Ok(ServerAction::Succeed {
                        output,
                        contributors: self.share_senders.clone(),
                    }),
                    Err(e) => Ok(ServerAction::Fail(format!("reconstruction failed: {e}"))),
                }
            }
            r => Err(ProtocolError::State(format!("unexpected round {r}"))),
        }
    }
}

impl ClientLogic for ShamirClient {
    fn on_round(&mut self, round: u32, payload: &[u8]) -> Result<Option<Vec<u8>>, ProtocolError> {
        match round {
            1 => {
                let keys = keygen(&mut self.rng);
                let pk = keys.public_bytes().to_vec();
                self.keys = Some(keys);
                Ok(Some(pk))
            }
            2 => {
                let peers = Reader::new(payload).get_map()?;
                for (v, pk) in peers {
                    let pk: [u8; 32] = pk
                        .as_slice()
                        .try_into()
                        .map_err(|_| ProtocolError::State("bad public key length".into()))?;
                    self.peer_pks.insert(v as AgentId, pk);
                }
                let mut points: Vec<u64> =
                    self.peer_pks.keys().map(|&v| v as u64).chain([self.id as u64]).collect();
                points.sort_unstable();
                let shares =
                    share_array_at(&self.input, self.threshold, 1, &points, &mut self.rng)?;
                let keys = self.keys.as_ref().expect("round 1 ran first");
                let mut out: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
                for share in shares {
                    let v = share.owner_point as AgentId;
                    let mut w = Writer::new();
                    share.encode(&mut w);
                    if v == self.id {
                        self.own_share = Some(share);
                        continue;
                    }
                    let key = agree(keys, &self.peer_pks[&v])?.encryption_key();
                    // nonce: round 2, disambiguated by sender id
                    let ct = encrypt(&key, (2 << 32) | self.id as u64, &w.finish());
                    out.insert(v as u32, ct);
                }
                let mut w = Writer::new();
                w.put_map(&out);
                Ok(Some(w.finish()))
            }
            3 => {
                let routed = Reader::new(payload).get_map()?;
                let keys = self.keys.as_ref().expect("round 1 ran first");
                let mut held: Vec<ShareArray> = self.own_share.iter().cloned().collect();
                for (src, ct) in routed {
                    let src = src as AgentId;
                    let key = agree(keys, &self.peer_pks[&src])?.encryption_key();
                    let pt = decrypt(&key, &ct)?;
                    held.push(ShareArray::decode(&mut Reader::new(&pt), self.input.field())?);
                }
                let summed = sum_share_array(&held)?;
                let mut w = Writer::new();
                summed.encode(&mut w);
                Ok(Some(w.finish()))
            }
            _ => Ok(None),
        }
    }
}

/// Build one protocol instance; `threshold` is the Shamir t (typically n/2).
pub fn build(
    field: Field,
    inputs: Vec<FieldVector>,
    threshold: usize,
    rng: &mut ChaCha20Rng,
) -> (Box<dyn ServerLogic>, Vec<Box<dyn ClientLogic>>) {
    let n = inputs.len();
    let server = ShamirServer { field, n_clients: n, share_senders: Vec::new() };
    let clients = inputs
        .into_iter()
        .enumerate()
        .map(|(i, input)| {
            Box::new(ShamirClient {
                id: i + 1,
                input,
                threshold,
                rng: ChaCha20Rng::from_seed(rng.random()),
                keys: None,
                peer_pks: BTreeMap::new(),
                own_share: None,
            }) as Box<dyn ClientLogic>
        })
        .collect();
    (Box::new(server), clients)
}
