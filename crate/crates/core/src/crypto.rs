//! Key agreement, authenticated share encryption, and deterministic mask
//! expansion from seeds.
//!
//! Key agreement is x25519; the rest of the simulator only relies on the
//! symmetry property agree(sk_a, pk_b) = agree(sk_b, pk_a). Encryption keys
//! and mask seeds are derived from the shared secret under distinct labels
//! so the two uses never share key material.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::field::{Field, FieldVector};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed public key encoding")]
    InvalidPublicKey,
    #[error("authentication failure on decrypt")]
    AuthFailure,
}

/// An x25519 keypair. The private scalar is kept so it can be secret-shared
/// for dropout recovery.
#[derive(Clone)]
pub struct KeyPair {
    sk: [u8; 32],
    pk: [u8; 32],
}

impl KeyPair {
    pub fn public_bytes(&self) -> [u8; 32] {
        self.pk
    }

    pub fn private_bytes(&self) -> [u8; 32] {
        self.sk
    }
}

/// Generate a keypair; deterministic under a seeded rng.
pub fn keygen<R: RngCore>(rng: &mut R) -> KeyPair {
    let mut sk = [0u8; 32];
    rng.fill_bytes(&mut sk);
    let secret = StaticSecret::from(sk);
    let pk = PublicKey::from(&secret).to_bytes();
    KeyPair { sk, pk }
}

/// 32 bytes of symmetric key material produced by key agreement.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SharedSecret([u8; 32]);

impl SharedSecret {
    /// Domain-separated derivation of sub-keys (encryption key, mask seed).
    pub fn derive(&self, label: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(label.as_bytes());
        h.update(self.0);
        h.finalize().into()
    }

    pub fn encryption_key(&self) -> EncryptionKey {
        EncryptionKey(self.derive("enc"))
    }

    pub fn mask_seed(&self) -> MaskSeed {
        MaskSeed(self.derive("mask"))
    }
}

/// Diffie-Hellman agreement: agree(sk_a, pk_b) = agree(sk_b, pk_a).
pub fn agree(own: &KeyPair, peer_pk: &[u8]) -> Result<SharedSecret, CryptoError> {
    let pk: [u8; 32] = peer_pk.try_into().map_err(|_| CryptoError::InvalidPublicKey)?;
    let secret = StaticSecret::from(own.sk);
    let shared = secret.diffie_hellman(&PublicKey::from(pk));
    // all-zero output means a small-order peer point
    if shared.as_bytes().iter().all(|&b| b == 0) {
        return Err(CryptoError::InvalidPublicKey);
    }
    Ok(SharedSecret(*shared.as_bytes()))
}

/// Agreement from raw private-key bytes (used by the server after
/// reconstructing a dropped client's key from shares).
pub fn agree_raw(sk: &[u8; 32], peer_pk: &[u8]) -> Result<SharedSecret, CryptoError> {
    let pair = KeyPair {
        sk: *sk,
        pk: PublicKey::from(&StaticSecret::from(*sk)).to_bytes(),
    };
    agree(&pair, peer_pk)
}

/// Symmetric authenticated-encryption key derived from a shared secret.
#[derive(Clone)]
pub struct EncryptionKey([u8; 32]);

/// Authenticated encryption. The nonce counter must be unique per
/// (key, direction); the caller uses (round << 32) | message_index.
/// The counter is embedded in the ciphertext so decrypt is self-contained.
pub fn encrypt(key: &EncryptionKey, nonce_counter: u64, plaintext: &[u8]) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(&Key::from(key.0));
    let mut nonce = [0u8; 12];
    nonce[4..].copy_from_slice(&nonce_counter.to_le_bytes());
    let ct = cipher
        .encrypt(&Nonce::from(nonce), plaintext)
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    let mut out = Vec::with_capacity(8 + ct.len());
    out.extend_from_slice(&nonce_counter.to_le_bytes());
    out.extend_from_slice(&ct);
    out
}

pub fn decrypt(key: &EncryptionKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < 8 + 16 {
        return Err(CryptoError::AuthFailure);
    }
    let cipher = ChaCha20Poly1305::new(&Key::from(key.0));
    let mut nonce = [0u8; 12];
    nonce[4..].copy_from_slice(&ciphertext[..8]);
    cipher
        .decrypt(&Nonce::from(nonce), &ciphertext[8..])
        .map_err(|_| CryptoError::AuthFailure)
}

/// A 32-byte seed for deterministic mask expansion. Pairwise seeds derived
/// from key agreement satisfy seed(u,v) = seed(v,u).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MaskSeed([u8; 32]);

impl MaskSeed {
    pub fn from_bytes(b: [u8; 32]) -> Self {
        MaskSeed(b)
    }

    pub fn bytes(&self) -> [u8; 32] {
        self.0
    }

    /// Fresh random seed (the per-client personal mask seed).
    pub fn random<R: RngCore>(rng: &mut R) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        MaskSeed(b)
    }
}

/// Expand a seed into a deterministic stream of uniform field elements.
/// Rejection sampling removes modulo bias, so the stream is exactly uniform.
pub fn expand_mask(seed: &MaskSeed, field: Field, len: usize) -> FieldVector {
    let mut rng = ChaCha20Rng::from_seed(seed.0);
    FieldVector::random(field, len, &mut rng)
}
