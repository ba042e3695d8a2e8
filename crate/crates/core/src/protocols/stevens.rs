//! LWE-masked aggregation: each client hides its input behind B_i = A*S_i
//! (+ optional error E_i) and secret-shares only the short S_i. The server
//! sums the masked vectors, reconstructs sum(S_i), and removes A*sum(S_i):
//!   (sum x_i + B_i) - A * (sum S_i) = sum x_i + sum E_i.
//! With the error distribution off the result is exact. Packing the S
//! shares cuts the round-2 share traffic by about pack_k.
//!
//! Rounds: 1) A-seed out, public keys back, 2) masked vector plus encrypted
//! S shares, 3) summed S shares; the server then unmasks.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::api::{broadcast, ClientLogic, ProtocolError, ServerAction, ServerLogic};
use crate::crypto::{agree, decrypt, encrypt, keygen, KeyPair};
use crate::field::{dot, Field, FieldVector};
use crate::kernel::AgentId;
use crate::shamir::{reconstruct_array, share_array_at, sum_share_array, ShareArray};
use crate::wire::{Reader, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StevensParams {
    /// LWE secret length; much shorter than the input dimension.
    pub s_len: usize,
    /// Secrets per share in the S sharing (1 = standard Shamir).
    pub pack_k: usize,
    /// Shamir threshold for the S sharing.
    pub threshold: usize,
    /// Centered-binomial error parameter eta; None = exact aggregation.
    pub error_eta: Option<u32>,
}

impl StevensParams {
    pub fn new(threshold: usize) -> Self {
        StevensParams { s_len: 710, pack_k: 16, threshold, error_eta: None }
    }
}

/// A * s for the public matrix A derived row-by-row from `a_seed`; A is
/// never materialized, so memory stays O(s_len) at any dimension.
pub fn a_matvec(field: Field, a_seed: &[u8; 32], rows: usize, s: &FieldVector) -> FieldVector {
    let mut rng = ChaCha20Rng::from_seed(*a_seed);
    let s_len = s.len();
    let mut row = vec![0u64; s_len];
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        for e in row.iter_mut() {
            *e = field.sample(&mut rng);
        }
        out.push(dot(field, &row, s.elems()));
    }
    FieldVector::from_canonical(field, out)
}

/// One draw from the centered binomial of parameter eta, in [-eta, eta].
fn centered_binomial(eta: u32, rng: &mut ChaCha20Rng) -> i64 {
    let mut acc = 0i64;
    for _ in 0..eta {
        acc += (rng.next_u32() & 1) as i64;
        acc -= (rng.next_u32() & 1) as i64;
    }
    acc
}

pub struct StevensClient {
    id: AgentId,
    input: FieldVector,
    params: StevensParams,
    rng: ChaCha20Rng,
    a_seed: [u8; 32],
    keys: Option<KeyPair>,
    peer_pks: BTreeMap<AgentId, [u8; 32]>,
    own_share: Option<ShareArray>,
}

impl ClientLogic for StevensClient {
    fn on_round(&mut self, round: u32, payload: &[u8]) -> Result<Option<Vec<u8>>, ProtocolError> {
        let field = self.input.field();
        match round {
            1 => {
                self.a_seed = Reader::new(payload)
                    .get_fixed(32)?
                    .try_into()
                    .expect("fixed-size read");
                let keys = keygen(&mut self.rng);
                let pk = keys.public_bytes().to_vec();
                self.keys = Some(keys);
                Ok(Some(pk))
            }
            2 => {
                for (v, pk) in Reader::new(payload).get_map()? {
                    let pk: [u8; 32] = pk
                        .as_slice()
                        .try_into()
                        .map_err(|_| ProtocolError::State("bad public key length".into()))?;
                    self.peer_pks.insert(v as AgentId, pk);
                }
                // mask the input with A*S (+E), share S among all clients
                let s = FieldVector::random(field, self.params.s_len, &mut self.rng);
                let mut masked = self.input.add(&a_matvec(field, &self.a_seed, self.input.len(), &s))?;
                if let Some(eta) = self.params.error_eta {
                    let e: Vec<u64> = (0..self.input.len())
                        .map(|_| field.from_signed(centered_binomial(eta, &mut self.rng)))
                        .collect();
                    masked.add_assign(&FieldVector::from_canonical(field, e))?;
                }

                let mut points: Vec<u64> =
                    self.peer_pks.keys().map(|&v| v as u64).chain([self.id as u64]).collect();
                points.sort_unstable();
                let shares = share_array_at(
                    &s,
                    self.params.threshold,
                    self.params.pack_k,
                    &points,
                    &mut self.rng,
                )?;
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
                    let ct = encrypt(&key, (2 << 32) | self.id as u64, &w.finish());
                    out.insert(v as u32, ct);
                }
                let mut w = Writer::new();
                w.put_fv(&masked);
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
                    held.push(ShareArray::decode(&mut Reader::new(&pt), field)?);
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

pub struct StevensServer {
    field: Field,
    n_clients: usize,
    dimension: usize,
    a_seed: [u8; 32],
    masked_sum: Option<FieldVector>,
    contributors: Vec<AgentId>,
}

impl ServerLogic for StevensServer {
    fn on_round(
        &mut self,
        round: u32,
        messages: &BTreeMap<AgentId, Vec<u8>>,
    ) -> Result<ServerAction, ProtocolError> {
        match round {
            0 => Ok(ServerAction::Send(broadcast(1..=self.n_clients, self.a_seed.to_vec()))),
            1 => {
                let mut out = BTreeMap::new();
                for &u in messages.keys() {
                    let peers: BTreeMap<u32, Vec<u8>> = messages
                        .iter()
                        .filter(|(&v, _)| v != u)
                        .map(|(&v, pk)| (v as u32, pk.clone()))
                        .collect();
                    let mut w = Writer::new();
                    w.put_map(&peers);
                    out.insert(u, w.finish());
                }
                Ok(ServerAction::Send(out))
            }
            2 => {
                let mut masked_sum = FieldVector::zeros(self.field, self.dimension);
                let mut nested: BTreeMap<AgentId, BTreeMap<AgentId, Vec<u8>>> = BTreeMap::new();
                for (&src, payload) in messages {
                    let mut r = Reader::new(payload);
                    masked_sum.add_assign(&r.get_fv(self.field)?)?;
                    let m = r.get_map()?;
                    nested.insert(src, m.into_iter().map(|(k, v)| (k as AgentId, v)).collect());
                }
                self.masked_sum = Some(masked_sum);
                self.contributors = nested.keys().copied().collect();
                let routed = crate::api::route_messages(&nested);
                let mut out = BTreeMap::new();
                for &u in messages.keys() {
                    let per_src: BTreeMap<u32, Vec<u8>> = routed
                        .get(&u)
                        .map(|m| m.iter().map(|(&s, p)| (s as u32, p.clone())).collect())
                        .unwrap_or_default();
                    let mut w = Writer::new();
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
                let s_sum = match reconstruct_array(&shares) {
                    Ok(s) => s,
                    Err(e) => {
                        return Ok(ServerAction::Fail(format!("S reconstruction failed: {e}")))
                    }
                };
                let mut output = self.masked_sum.clone().expect("round 2 ran first");
                output.sub_assign(&a_matvec(self.field, &self.a_seed, self.dimension, &s_sum))?;
                Ok(ServerAction::Succeed { output, contributors: self.contributors.clone() })
            }
            r => Err(ProtocolError::State(format!("unexpected round {r}"))),
        }
    }
}

pub fn build(
    field: Field,
    inputs: Vec<FieldVector>,
    params: StevensParams,
    rng: &mut ChaCha20Rng,
) -> (Box<dyn ServerLogic>, Vec<Box<dyn ClientLogic>>) {
    let n = inputs.len();
    let dimension = inputs.first().map_or(0, |v| v.len());
    let a_seed: [u8; 32] = rng.random();
    let server = StevensServer {
        field,
        n_clients: n,
        dimension,
        a_seed,
        masked_sum: None,
        contributors: Vec::new(),
    };
    let clients = inputs
        .into_iter()
        .enumerate()
        .map(|(i, input)| {
            Box::new(StevensClient {
                id: i + 1,
                input,
                params,
                rng: ChaCha20Rng::from_seed(rng.random()),
                a_seed: [0; 32],
                keys: None,
                peer_pks: BTreeMap::new(),
                own_share: None,
            }) as Box<dyn ClientLogic>
        })
        .collect();
    (Box::new(server), clients)
}
