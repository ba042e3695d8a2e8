//! Double-masking aggregation over a mask graph: the fully connected case
//! is the classic pairwise-masking protocol, and restricting masks to a
//! Harary-graph neighborhood gives the k-neighbor variant. Both share this
//! implementation; only the graph differs.
//!
//! Each client u submits y_u = x_u + PRNG(b_u)
//!   + sum over neighbors v > u of PRNG(s_uv)
//!   - sum over neighbors v < u of PRNG(s_uv),
//! where s_uv comes from key agreement and b_u is a fresh personal seed.
//! sk_u and b_u are Shamir-shared to u's neighbors so the server can unmask:
//! reconstruct b_u for survivors, sk_u (hence the pairwise seeds) for clients
//! that dropped after distributing shares.
//!
//! Rounds: 1) public keys, 2) encrypted share distribution (server-routed),
//! 3) masked vectors, 4) recovery shares; then the server unmasks.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::api::{broadcast, ClientLogic, ProtocolError, ServerAction, ServerLogic};
use crate::crypto::{
    agree, agree_raw, decrypt, encrypt, expand_mask, keygen, EncryptionKey, KeyPair, MaskSeed,
};
use crate::field::{Field, FieldVector};
use crate::kernel::AgentId;
use crate::protocols::graph::{Graph, GraphError};
use crate::shamir::{reconstruct_array, share_array_at, ShareArray};
use crate::wire::{Reader, Writer};

/// Share threshold over a neighbor set of size m.
pub fn neighbor_threshold(m: usize) -> usize {
    (2 * m).div_ceil(3)
}

/// 32-byte secret as 16 field elements (2 bytes each); needs q > 2^16.
fn secret_to_fv(field: Field, bytes: &[u8; 32]) -> FieldVector {
    let elems: Vec<u64> = bytes
        .chunks(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as u64)
        .collect();
    FieldVector::from_canonical(field, elems)
}

fn fv_to_secret(fv: &FieldVector) -> Result<[u8; 32], ProtocolError> {
    if fv.len() != 16 {
        return Err(ProtocolError::State(format!("secret share length {}", fv.len())));
    }
    let mut out = [0u8; 32];
    for (i, &e) in fv.elems().iter().enumerate() {
        let c: u16 = e
            .try_into()
            .map_err(|_| ProtocolError::State(format!("secret chunk {e} out of range")))?;
        out[2 * i..2 * i + 2].copy_from_slice(&c.to_le_bytes());
    }
    Ok(out)
}

/// The masked upload, factored out for direct testing: input plus personal
/// mask plus signed pairwise masks (positive toward higher-indexed peers).
pub fn masked_vector(
    input: &FieldVector,
    b_seed: &MaskSeed,
    pairwise: &[(bool, MaskSeed)],
) -> FieldVector {
    let field = input.field();
    let len = input.len();
    let mut y = input.add(&expand_mask(b_seed, field, len)).expect("same field");
    for (peer_is_higher, seed) in pairwise {
        let mask = expand_mask(seed, field, len);
        if *peer_is_higher {
            y.add_assign(&mask).expect("same field");
        } else {
            y.sub_assign(&mask).expect("same field");
        }
    }
    y
}

struct Peer {
    enc_key: EncryptionKey,
    mask_seed: MaskSeed,
}

pub struct MaskingClient {
    id: AgentId,
    input: FieldVector,
    rng: ChaCha20Rng,
    keys: Option<KeyPair>,
    b_seed: Option<MaskSeed>,
    peers: BTreeMap<AgentId, Peer>,
    /// Shares this client holds of each neighbor's (sk, b).
    held: BTreeMap<AgentId, (ShareArray, ShareArray)>,
}

impl ClientLogic for MaskingClient {
    fn on_round(&mut self, round: u32, payload: &[u8]) -> Result<Option<Vec<u8>>, ProtocolError> {
        match round {
            1 => {
                let keys = keygen(&mut self.rng);
                let pk = keys.public_bytes().to_vec();
                self.keys = Some(keys);
                Ok(Some(pk))
            }
            2 => {
                // neighbor public keys arrive; derive pairwise secrets and
                // distribute shares of sk and b to the neighbor set
                let keys = self.keys.as_ref().expect("round 1 ran first");
                for (v, pk) in Reader::new(payload).get_map()? {
                    let pk: [u8; 32] = pk
                        .as_slice()
                        .try_into()
                        .map_err(|_| ProtocolError::State("bad public key length".into()))?;
                    let shared = agree(keys, &pk)?;
                    self.peers.insert(
                        v as AgentId,
                        Peer { enc_key: shared.encryption_key(), mask_seed: shared.mask_seed() },
                    );
                }
                let b_seed = MaskSeed::random(&mut self.rng);
                self.b_seed = Some(b_seed);

                let field = self.input.field();
                let points: Vec<u64> = self.peers.keys().map(|&v| v as u64).collect();
                let t = neighbor_threshold(points.len());
                let sk_fv = secret_to_fv(field, &keys.private_bytes());
                let b_fv = secret_to_fv(field, &b_seed.bytes());
                let sk_shares = share_array_at(&sk_fv, t, 1, &points, &mut self.rng)?;
                let b_shares = share_array_at(&b_fv, t, 1, &points, &mut self.rng)?;

                let mut out: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
                for (sk_s, b_s) in sk_shares.into_iter().zip(b_shares) {
                    let v = sk_s.owner_point as AgentId;
                    let mut w = Writer::new();
                    sk_s.encode(&mut w);
                    b_s.encode(&mut w);
                    let ct =
                        encrypt(&self.peers[&v].enc_key, (2 << 32) | self.id as u64, &w.finish());
                    out.insert(v as u32, ct);
                }
                let mut w = Writer::new();
                w.put_map(&out);
                Ok(Some(w.finish()))
            }
            3 => {
                // routed shares arrive; their senders are exactly the mask set
                let field = self.input.field();
                for (v, ct) in Reader::new(payload).get_map()? {
                    let v = v as AgentId;
                    let pt = decrypt(&self.peers[&v].enc_key, &ct)?;
                    let mut r = Reader::new(&pt);
                    let sk_s = ShareArray::decode(&mut r, field)?;
                    let b_s = ShareArray::decode(&mut r, field)?;
                    self.held.insert(v, (sk_s, b_s));
                }
                let pairwise: Vec<(bool, MaskSeed)> = self
                    .held
                    .keys()
                    .map(|&v| (v > self.id, self.peers[&v].mask_seed))
                    .collect();
                let y = masked_vector(
                    &self.input,
                    self.b_seed.as_ref().expect("round 2 ran first"),
                    &pairwise,
                );
                let mut w = Writer::new();
                w.put_fv(&y);
                Ok(Some(w.finish()))
            }
            4 => {
                // per-neighbor status: 1 = survived (return b share),
                // 0 = dropped (return sk share)
                let mut out: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
                for (v, status) in Reader::new(payload).get_map()? {
                    let v = v as AgentId;
                    let survived = status == [1];
                    let (sk_s, b_s) = self
                        .held
                        .get(&v)
                        .ok_or_else(|| ProtocolError::State(format!("no shares held for {v}")))?;
                    let mut w = Writer::new();
                    w.put_u8(survived as u8);
                    if survived { b_s } else { sk_s }.encode(&mut w);
                    out.insert(v as u32, w.finish());
                }
                let mut w = Writer::new();
                w.put_map(&out);
                Ok(Some(w.finish()))
            }
            _ => Ok(None),
        }
    }
}

pub struct MaskingServer {
    field: Field,
    n_clients: usize,
    dimension: usize,
    graph: Graph,
    pks: BTreeMap<AgentId, [u8; 32]>,
    /// Clients whose shares were distributed in round 2.
    u2: BTreeSet<AgentId>,
    /// Clients whose masked vectors arrived in round 3 (the contributors).
    u3: BTreeSet<AgentId>,
    masked_sum: Option<FieldVector>,
}

impl MaskingServer {
    /// Ids of u's graph neighbors (vertex v maps to client id v + 1).
    fn neighbor_ids(&self, u: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.graph.neighbors(u - 1).iter().map(|&v| v + 1)
    }

    fn unmask(
        &self,
        recovery: &BTreeMap<AgentId, Vec<u8>>,
    ) -> Result<ServerAction, ProtocolError> {
        let mut sum = self.masked_sum.clone().expect("round 3 ran first");
        // collect returned shares per subject client
        let mut b_shares: BTreeMap<AgentId, Vec<ShareArray>> = BTreeMap::new();
        let mut sk_shares: BTreeMap<AgentId, Vec<ShareArray>> = BTreeMap::new();
        for (&holder, payload) in recovery {
            for (v, entry) in Reader::new(payload).get_map()? {
                let v = v as AgentId;
                let mut r = Reader::new(&entry);
                let claims_survivor = r.get_u8()? == 1;
                if claims_survivor != self.u3.contains(&v) {
                    return Ok(ServerAction::Fail(format!(
                        "client {holder} classified {v} inconsistently with the survivor set"
                    )));
                }
                let share = ShareArray::decode(&mut r, self.field)?;
                if share.owner_point != holder as u64 {
                    return Ok(ServerAction::Fail(format!(
                        "client {holder} returned a share it does not own"
                    )));
                }
                if claims_survivor { &mut b_shares } else { &mut sk_shares }
                    .entry(v)
                    .or_default()
                    .push(share);
            }
        }

        // survivors: remove personal masks
        for &v in &self.u3 {
            let shares = b_shares.remove(&v).unwrap_or_default();
            let b_fv = reconstruct_array(&shares)
                .map_err(|e| ProtocolError::State(format!("b recovery for {v}: {e}")))?;
            let seed = MaskSeed::from_bytes(fv_to_secret(&b_fv)?);
            sum.sub_assign(&expand_mask(&seed, self.field, self.dimension))?;
        }
        // droppers that distributed shares: cancel their pairwise masks
        for &v in &self.u2 {
            if self.u3.contains(&v) {
                continue;
            }
            let shares = sk_shares.remove(&v).unwrap_or_default();
            let sk_fv = reconstruct_array(&shares)
                .map_err(|e| ProtocolError::State(format!("sk recovery for {v}: {e}")))?;
            let sk = fv_to_secret(&sk_fv)?;
            for u in self.neighbor_ids(v) {
                if !self.u3.contains(&u) {
                    continue;
                }
                // u masked with s_uv; undo the sign u applied
                let seed = agree_raw(&sk, &self.pks[&u])?.mask_seed();
                let mask = expand_mask(&seed, self.field, self.dimension);
                if v > u {
                    sum.sub_assign(&mask)?;
                } else {
                    sum.add_assign(&mask)?;
                }
            }
        }
        Ok(ServerAction::Succeed { output: sum, contributors: self.u3.iter().copied().collect() })
    }
}

impl ServerLogic for MaskingServer {
    fn on_round(
        &mut self,
        round: u32,
        messages: &BTreeMap<AgentId, Vec<u8>>,
    ) -> Result<ServerAction, ProtocolError> {
        match round {
            0 => Ok(ServerAction::Send(broadcast(1..=self.n_clients, Vec::new()))),
            1 => {
                for (&u, pk) in messages {
                    let pk: [u8; 32] = pk
                        .as_slice()
                        .try_into()
                        .map_err(|_| ProtocolError::State("bad public key length".into()))?;
                    self.pks.insert(u, pk);
                }
                let mut out = BTreeMap::new();
                for &u in messages.keys() {
                    let peers: BTreeMap<u32, Vec<u8>> = self
                        .neighbor_ids(u)
                        .filter_map(|v| self.pks.get(&v).map(|pk| (v as u32, pk.to_vec())))
                        .collect();
                    let mut w = Writer::new();
                    w.put_map(&peers);
                    out.insert(u, w.finish());
                }
                Ok(ServerAction::Send(out))
            }
            2 => {
                let mut nested: BTreeMap<AgentId, BTreeMap<AgentId, Vec<u8>>> = BTreeMap::new();
                for (&src, payload) in messages {
                    let m = Reader::new(payload).get_map()?;
                    nested.insert(src, m.into_iter().map(|(k, v)| (k as AgentId, v)).collect());
                }
                self.u2 = nested.keys().copied().collect();
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
                let mut sum = FieldVector::zeros(self.field, self.dimension);
                for payload in messages.values() {
                    sum.add_assign(&Reader::new(payload).get_fv(self.field)?)?;
                }
                self.u3 = messages.keys().copied().collect();
                self.masked_sum = Some(sum);
                // ask each survivor for recovery shares covering its mask set
                let mut out = BTreeMap::new();
                for &u in &self.u3 {
                    let statuses: BTreeMap<u32, Vec<u8>> = self
                        .neighbor_ids(u)
                        .filter(|v| self.u2.contains(v))
                        .map(|v| (v as u32, vec![self.u3.contains(&v) as u8]))
                        .collect();
                    let mut w = Writer::new();
                    w.put_map(&statuses);
                    out.insert(u, w.finish());
                }
                Ok(ServerAction::Send(out))
            }
            4 => self.unmask(messages),
            r => Err(ProtocolError::State(format!("unexpected round {r}"))),
        }
    }
}

/// Build a masking-protocol instance over an explicit graph.
pub fn build(
    field: Field,
    inputs: Vec<FieldVector>,
    graph: Graph,
    rng: &mut ChaCha20Rng,
) -> (Box<dyn ServerLogic>, Vec<Box<dyn ClientLogic>>) {
    let n = inputs.len();
    assert_eq!(graph.n(), n, "graph size must match client count");
    let dimension = inputs.first().map_or(0, |v| v.len());
    let server = MaskingServer {
        field,
        n_clients: n,
        dimension,
        graph,
        pks: BTreeMap::new(),
        u2: BTreeSet::new(),
        u3: BTreeSet::new(),
        masked_sum: None,
    };
    let clients = inputs
        .into_iter()
        .enumerate()
        .map(|(i, input)| {
            Box::new(MaskingClient {
                id: i + 1,
                input,
                rng: ChaCha20Rng::from_seed(rng.random()),
                keys: None,
                b_seed: None,
                peers: BTreeMap::new(),
                held: BTreeMap::new(),
            }) as Box<dyn ClientLogic>
        })
        .collect();
    (Box::new(server), clients)
}

/// Fully connected masking (every client masks with every other).
pub fn build_bonawitz(
    field: Field,
    inputs: Vec<FieldVector>,
    rng: &mut ChaCha20Rng,
) -> (Box<dyn ServerLogic>, Vec<Box<dyn ClientLogic>>) {
    let n = inputs.len();
    build(field, inputs, Graph::complete(n), rng)
}

/// Masking restricted to a Harary graph of degree k.
pub fn build_bell(
    field: Field,
    inputs: Vec<FieldVector>,
    k: usize,
    rng: &mut ChaCha20Rng,
) -> Result<(Box<dyn ServerLogic>, Vec<Box<dyn ClientLogic>>), GraphError> {
    let n = inputs.len();
    let graph = Graph::harary(n, k)?;
    Ok(build(field, inputs, graph, rng))
}
