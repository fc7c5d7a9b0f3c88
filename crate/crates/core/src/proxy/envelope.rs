//! Client-boundary AEAD envelopes: `nonce(12) ‖ tag(16) ‖ ciphertext`.

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use rand::RngCore;

use crate::codec::{ByteReader, DecodeError};

pub const ENVELOPE_NONCE: usize = 12;
pub const ENVELOPE_TAG: usize = 16;
pub const ENVELOPE_OVERHEAD: usize = ENVELOPE_NONCE + ENVELOPE_TAG;

#[derive(Clone, PartialEq, Eq)]
pub struct ClientEnvelope {
    pub nonce: [u8; ENVELOPE_NONCE],
    pub tag: [u8; ENVELOPE_TAG],
    pub ciphertext: Vec<u8>,
}

impl std::fmt::Debug for ClientEnvelope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ClientEnvelope({} bytes)", self.len())
    }
}

impl ClientEnvelope {
    pub fn len(&self) -> usize {
        ENVELOPE_OVERHEAD + self.ciphertext.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.tag);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = ByteReader::new(bytes);
        Ok(ClientEnvelope {
            nonce: r.array()?,
            tag: r.array()?,
            ciphertext: r.raw(r.remaining())?.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("envelope failed authentication")]
pub struct EnvelopeAuthError;

/// AES-256-GCM under one key. Used by clients and by the privacy zone, which
/// share the session key.
#[derive(Clone)]
pub struct EnvelopeCipher {
    aead: Aes256Gcm,
}

impl EnvelopeCipher {
    pub fn new(key: &[u8; 32]) -> Self {
        EnvelopeCipher {
            aead: Aes256Gcm::new(key.into()),
        }
    }

    pub fn seal(&self, plaintext: &[u8], rng: &mut impl RngCore) -> ClientEnvelope {
        let mut nonce = [0u8; ENVELOPE_NONCE];
        rng.fill_bytes(&mut nonce);
        let mut ciphertext = plaintext.to_vec();
        let tag = self
            .aead
            .encrypt_in_place_detached(Nonce::from_slice(&nonce), b"", &mut ciphertext)
            .expect("field length is within AES-GCM limits");
        ClientEnvelope {
            nonce,
            tag: tag.into(),
            ciphertext,
        }
    }

    pub fn open(&self, env: &ClientEnvelope) -> Result<Vec<u8>, EnvelopeAuthError> {
        let mut buf = env.ciphertext.clone();
        self.aead
            .decrypt_in_place_detached(
                Nonce::from_slice(&env.nonce),
                b"",
                &mut buf,
                Tag::from_slice(&env.tag),
            )
            .map_err(|_| EnvelopeAuthError)?;
        Ok(buf)
    }
}

/// Pads to exactly `width` bytes: the value, one 0x80 byte, then zeros.
pub fn pad(value: &[u8], width: usize) -> Option<Vec<u8>> {
    if value.len() >= width {
        return None;
    }
    let mut out = Vec::with_capacity(width);
    out.extend_from_slice(value);
    out.push(0x80);
    out.resize(width, 0);
    Some(out)
}

pub fn unpad(padded: &[u8]) -> Option<&[u8]> {
    let end = padded.iter().rposition(|&b| b != 0)?;
    (padded[end] == 0x80).then_some(&padded[..end])
}
