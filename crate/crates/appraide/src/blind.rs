//! RSA blind signatures on pseudonyms, anonymous learner credentials, the
//! revocation list preventing credential reuse, and blind digital
//! certificates.
//!
//! The signer only ever sees the blinded value `t = u * r^e mod N`; the
//! unblinded signature `s` satisfies `s^e = u (mod N)` and can be checked by
//! anyone holding the signer's public key.

use std::collections::BTreeSet;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::crypto::{
    self, biguint_from_hex, biguint_to_hex, modular_inverse, Envelope, KeyPair, PrivateKey,
    PublicKey, Signature,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlindError {
    #[error("value to blind must satisfy 0 < u < N")]
    ValueOutOfRange,
}

/// Why a credential presentation was refused.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PresentError {
    #[error("credential signature does not verify")]
    BadSignature,
    #[error("pseudonym already present in the revocation list")]
    AlreadyUsed,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RevealError {
    #[error("certificate authority signature does not verify")]
    BadCaSignature,
    #[error("identity could not be decrypted with the supplied key")]
    DecryptionFailure,
}

/// Client-side state kept between blinding and unblinding.
#[derive(Debug, Clone)]
pub struct BlindingState {
    pub r: BigUint,
    pub r_inverse: BigUint,
    pub signer_modulus: BigUint,
}

/// A blind-signed pseudonymous certificate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonymousCredential {
    pub pseudonym_u: BigUint,
    /// Enrollment attestation text.
    pub message_m: Vec<u8>,
    /// Issuer's plain signature over the attestation.
    pub inner_signature: Signature,
    /// Blind signature over encode(u || m || inner_signature).
    pub blind_signature_s: BigUint,
}

/// Revocation of Anonymous Credentials List: pseudonyms already presented.
#[derive(Debug, Clone, Default)]
pub struct Racl {
    used_pseudonyms: BTreeSet<BigUint>,
}

impl Racl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.used_pseudonyms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used_pseudonyms.is_empty()
    }

    pub fn contains(&self, u: &BigUint) -> bool {
        self.used_pseudonyms.contains(u)
    }
}

/// A certificate over an encrypted identity: revealing the holder's private
/// key lets a verifier decrypt `y` back to the identity.
#[derive(Debug, Clone)]
pub struct BlindDigitalCertificate {
    pub encrypted_identity_y: Envelope,
    pub holder_public_key: PublicKey,
    pub ca_signature: Signature,
}

/// Blinds `u` with a random factor drawn from `rng`.
pub fn blind(
    u: &BigUint,
    signer_pub: &PublicKey,
    rng: &mut impl RngCore,
) -> Result<(BigUint, BlindingState), BlindError> {
    let r = loop {
        let candidate = rng.gen_biguint_range(&BigUint::one(), &signer_pub.modulus_n);
        if candidate.gcd(&signer_pub.modulus_n).is_one() {
            break candidate;
        }
    };
    blind_with_factor(u, signer_pub, &r)
}

/// Blinds `u` with an explicit factor; `r` must be coprime to the modulus.
/// Exposed so worked examples and exhaustive sweeps can pin `r`.
pub fn blind_with_factor(
    u: &BigUint,
    signer_pub: &PublicKey,
    r: &BigUint,
) -> Result<(BigUint, BlindingState), BlindError> {
    if u.is_zero() || u >= &signer_pub.modulus_n {
        return Err(BlindError::ValueOutOfRange);
    }
    let n = &signer_pub.modulus_n;
    let r_inverse = modular_inverse(r, n).ok_or(BlindError::ValueOutOfRange)?;
    let t = (u * r.modpow(&signer_pub.public_e, n)) % n;
    Ok((
        t,
        BlindingState {
            r: r.clone(),
            r_inverse,
            signer_modulus: n.clone(),
        },
    ))
}

/// Signer side: t' = t^d mod N. The signer's transcript holds only `t`.
pub fn sign_blinded(t: &BigUint, signer_priv: &PrivateKey) -> BigUint {
    t.modpow(&signer_priv.private_d, &signer_priv.modulus_n)
}

/// Removes the blinding factor: s = t' * r^-1 mod N.
pub fn unblind(t_prime: &BigUint, state: &BlindingState) -> BigUint {
    (t_prime * &state.r_inverse) % &state.signer_modulus
}

/// Maps the credential payload u || m || S_SK(m) into the signing domain
/// [1, N-1] by hashing a length-framed concatenation and reducing.
pub fn encode_credential_payload(
    u: &BigUint,
    m: &[u8],
    inner_signature: &Signature,
    modulus: &BigUint,
) -> BigUint {
    let mut h = Sha256::new();
    for part in [
        u.to_bytes_be(),
        m.to_vec(),
        inner_signature.value.to_bytes_be(),
    ] {
        h.update((part.len() as u64).to_be_bytes());
        h.update(&part);
    }
    let digest = BigUint::from_bytes_be(&h.finalize());
    digest % (modulus - BigUint::one()) + BigUint::one()
}

/// Full issuance: the issuer signs the attestation in the clear, then blindly
/// signs the combined payload without ever seeing it unblinded.
pub fn issue_credential(
    learner_pseudonym_u: &BigUint,
    attestation_m: &[u8],
    issuer_keys: &KeyPair,
    rng: &mut impl RngCore,
) -> Result<AnonymousCredential, BlindError> {
    let inner_signature = crypto::sign(&issuer_keys.private(), attestation_m);
    let payload = encode_credential_payload(
        learner_pseudonym_u,
        attestation_m,
        &inner_signature,
        &issuer_keys.modulus_n,
    );
    let (t, state) = blind(&payload, &issuer_keys.public(), rng)?;
    let t_prime = sign_blinded(&t, &issuer_keys.private());
    let blind_signature_s = unblind(&t_prime, &state);
    Ok(AnonymousCredential {
        pseudonym_u: learner_pseudonym_u.clone(),
        message_m: attestation_m.to_vec(),
        inner_signature,
        blind_signature_s,
    })
}

pub fn verify_credential(cred: &AnonymousCredential, issuer_pub: &PublicKey) -> bool {
    if !crypto::verify(issuer_pub, &cred.message_m, &cred.inner_signature) {
        return false;
    }
    let payload = encode_credential_payload(
        &cred.pseudonym_u,
        &cred.message_m,
        &cred.inner_signature,
        &issuer_pub.modulus_n,
    );
    cred.blind_signature_s
        .modpow(&issuer_pub.public_e, &issuer_pub.modulus_n)
        == payload
}

/// Two-step validation: verify the issuer signature, then look up the
/// pseudonym in the RACL. On accept the pseudonym is inserted atomically;
/// on any reject the list is unchanged.
pub fn present_credential(
    cred: &AnonymousCredential,
    issuer_pub: &PublicKey,
    racl: &mut Racl,
) -> Result<(), PresentError> {
    if !verify_credential(cred, issuer_pub) {
        return Err(PresentError::BadSignature);
    }
    if !racl.used_pseudonyms.insert(cred.pseudonym_u.clone()) {
        return Err(PresentError::AlreadyUsed);
    }
    Ok(())
}

/// Creates a blind digital certificate: the holder generates a fresh keypair,
/// encrypts the identity under its own public key, and has the CA sign
/// z = [y, PK].
pub fn create_bdc(
    identity: &[u8],
    holder_key_bits: u64,
    rng: &mut impl RngCore,
    ca_keys: &KeyPair,
) -> Result<(BlindDigitalCertificate, PrivateKey), crypto::CryptoError> {
    let holder = crypto::generate_key_pair_with(holder_key_bits, rng)?;
    let encrypted_identity_y = crypto::encrypt_envelope(&holder.public(), identity, rng);
    let payload = bdc_payload(&encrypted_identity_y, &holder.public());
    let ca_signature = crypto::sign(&ca_keys.private(), &payload);
    Ok((
        BlindDigitalCertificate {
            encrypted_identity_y,
            holder_public_key: holder.public(),
            ca_signature,
        },
        holder.private(),
    ))
}

/// Verifies the CA signature over [y, PK], then decrypts y with the revealed
/// holder key.
pub fn reveal_bdc(
    bdc: &BlindDigitalCertificate,
    holder_private_key: &PrivateKey,
    ca_pub: &PublicKey,
) -> Result<Vec<u8>, RevealError> {
    let payload = bdc_payload(&bdc.encrypted_identity_y, &bdc.holder_public_key);
    if !crypto::verify(ca_pub, &payload, &bdc.ca_signature) {
        return Err(RevealError::BadCaSignature);
    }
    crypto::decrypt_envelope(holder_private_key, &bdc.encrypted_identity_y)
        .map_err(|_| RevealError::DecryptionFailure)
}

fn bdc_payload(y: &Envelope, pk: &PublicKey) -> Vec<u8> {
    let mut out = Vec::new();
    for part in [
        y.wrapped_key.to_bytes_be(),
        y.nonce.to_vec(),
        y.body.clone(),
        y.tag.to_vec(),
        pk.modulus_n.to_bytes_be(),
        pk.public_e.to_bytes_be(),
    ] {
        out.extend((part.len() as u64).to_be_bytes());
        out.extend(part);
    }
    out
}

/// Structured-text serialization: one `key: value` line per field, big
/// integers as lowercase hex, octet strings as base64.
pub fn serialize_credential(cred: &AnonymousCredential) -> String {
    use base64::Engine as _;
    let b64 = base64::engine::general_purpose::STANDARD;
    format!(
        "appraide-credential v1\n\
         pseudonym_u: {}\n\
         message_m: {}\n\
         inner_signature: {}\n\
         blind_signature_s: {}\n",
        biguint_to_hex(&cred.pseudonym_u),
        b64.encode(&cred.message_m),
        biguint_to_hex(&cred.inner_signature.value),
        biguint_to_hex(&cred.blind_signature_s),
    )
}

pub fn parse_credential(text: &str) -> Option<AnonymousCredential> {
    use base64::Engine as _;
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut lines = text.lines();
    if lines.next()? != "appraide-credential v1" {
        return None;
    }
    let mut field = |name: &str| -> Option<String> {
        let line = lines.next()?;
        let (k, v) = line.split_once(": ")?;
        (k == name).then(|| v.to_string())
    };
    let pseudonym_u = biguint_from_hex(&field("pseudonym_u")?)?;
    let message_m = b64.decode(field("message_m")?).ok()?;
    let inner_signature = Signature {
        value: biguint_from_hex(&field("inner_signature")?)?,
    };
    let blind_signature_s = biguint_from_hex(&field("blind_signature_s")?)?;
    Some(AnonymousCredential {
        pseudonym_u,
        message_m,
        inner_signature,
        blind_signature_s,
    })
}
