//! Seedable textbook-RSA primitives: key generation, hashing, hash-then-sign
//! signatures and a hybrid envelope for arbitrary-length content.
//!
//! Everything here is deterministic given its inputs and the caller-supplied
//! RNG. Toy key sizes (16 bits and up) are accepted so tests can brute-force
//! the underlying arithmetic; real use should stick to the 2048-bit default.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Default modulus size outside tests.
pub const DEFAULT_KEY_BITS: u64 = 2048;

/// Smallest accepted modulus size; anything below is useless even as a toy.
pub const MIN_KEY_BITS: u64 = 16;

pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key size {0} below minimum of {MIN_KEY_BITS} bits")]
    KeyTooSmall(u64),
    #[error("envelope integrity check failed")]
    IntegrityFailure,
    #[error("value out of range for modulus")]
    OutOfRange,
}

/// SHA-256 digest of some input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MessageDigest(pub [u8; DIGEST_LEN]);

impl MessageDigest {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

pub fn hash(data: &[u8]) -> MessageDigest {
    let mut h = Sha256::new();
    h.update(data);
    MessageDigest(h.finalize().into())
}

/// RSA public half: (e, n).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey {
    pub modulus_n: BigUint,
    pub public_e: BigUint,
}

/// RSA private half: (d, n).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrivateKey {
    pub modulus_n: BigUint,
    pub private_d: BigUint,
}

/// A full RSA keypair over big integers, no padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KeyPair {
    pub modulus_n: BigUint,
    pub public_e: BigUint,
    pub private_d: BigUint,
}

impl KeyPair {
    pub fn from_parts(n: BigUint, e: BigUint, d: BigUint) -> Self {
        KeyPair {
            modulus_n: n,
            public_e: e,
            private_d: d,
        }
    }

    pub fn public(&self) -> PublicKey {
        PublicKey {
            modulus_n: self.modulus_n.clone(),
            public_e: self.public_e.clone(),
        }
    }

    pub fn private(&self) -> PrivateKey {
        PrivateKey {
            modulus_n: self.modulus_n.clone(),
            private_d: self.private_d.clone(),
        }
    }

    /// Checks that (m^e)^d = m (mod n). Exhaustive for toy moduli, sampled
    /// otherwise.
    pub fn is_consistent(&self) -> bool {
        let ed = &self.public_e * &self.private_d;
        let small = BigUint::from(1u32 << 16);
        if self.modulus_n <= small {
            let n: u64 = self.modulus_n.to_u64_digits().first().copied().unwrap_or(0);
            (0..n).all(|m| {
                let m = BigUint::from(m);
                m.modpow(&ed, &self.modulus_n) == m
            })
        } else {
            let mut rng = ChaCha20Rng::seed_from_u64(0x6b65795f636865); // fixed check seed
            (0..64).all(|_| {
                let m = rng.gen_biguint_below(&self.modulus_n);
                m.modpow(&ed, &self.modulus_n) == m
            })
        }
    }
}

/// Textbook RSA signature: the digest encrypted with the private exponent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub value: BigUint,
}

/// Hybrid ciphertext: a session key wrapped under RSA plus a symmetric body
/// with an integrity tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub wrapped_key: BigUint,
    pub nonce: [u8; 16],
    pub body: Vec<u8>,
    pub tag: [u8; DIGEST_LEN],
}

/// Deterministic keypair generation from a seed.
pub fn generate_key_pair(bit_length: u64, rng_seed: u64) -> Result<KeyPair, CryptoError> {
    if bit_length < MIN_KEY_BITS {
        return Err(CryptoError::KeyTooSmall(bit_length));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    generate_key_pair_with(bit_length, &mut rng)
}

/// Keypair generation drawing from a caller-supplied RNG.
pub fn generate_key_pair_with(
    bit_length: u64,
    rng: &mut impl RngCore,
) -> Result<KeyPair, CryptoError> {
    if bit_length < MIN_KEY_BITS {
        return Err(CryptoError::KeyTooSmall(bit_length));
    }
    let half = bit_length / 2;
    loop {
        let p = random_prime(half, rng);
        let q = random_prime(bit_length - half, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let phi = (&p - 1u32) * (&q - 1u32);
        let e = match [3u32, 5, 17, 257, 65537]
            .iter()
            .map(|&c| BigUint::from(c))
            .find(|c| c < &phi && c.gcd(&phi).is_one())
        {
            Some(e) => e,
            None => continue,
        };
        let d = match modular_inverse(&e, &phi) {
            Some(d) => d,
            None => continue,
        };
        return Ok(KeyPair::from_parts(n, e, d));
    }
}

pub fn sign(private: &PrivateKey, message: &[u8]) -> Signature {
    let digest = BigUint::from_bytes_be(hash(message).as_bytes()) % &private.modulus_n;
    Signature {
        value: digest.modpow(&private.private_d, &private.modulus_n),
    }
}

/// Returns false on any mismatch; never errors.
pub fn verify(public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    if sig.value >= public.modulus_n {
        return false;
    }
    let digest = BigUint::from_bytes_be(hash(message).as_bytes()) % &public.modulus_n;
    sig.value.modpow(&public.public_e, &public.modulus_n) == digest
}

pub fn encrypt_envelope(
    public: &PublicKey,
    plaintext: &[u8],
    rng: &mut impl RngCore,
) -> Envelope {
    // Session key strictly below n so the RSA wrap is injective.
    let one = BigUint::one();
    let session_key = rng.gen_biguint_range(&one, &public.modulus_n);
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);

    let material = key_material(&session_key, &nonce);
    let body = xor_keystream(&material, plaintext);
    let tag = body_tag(&material, &nonce, &body);
    let wrapped_key = session_key.modpow(&public.public_e, &public.modulus_n);
    Envelope {
        wrapped_key,
        nonce,
        body,
        tag,
    }
}

pub fn decrypt_envelope(private: &PrivateKey, env: &Envelope) -> Result<Vec<u8>, CryptoError> {
    if env.wrapped_key >= private.modulus_n {
        return Err(CryptoError::IntegrityFailure);
    }
    let session_key = env.wrapped_key.modpow(&private.private_d, &private.modulus_n);
    let material = key_material(&session_key, &env.nonce);
    let expected = body_tag(&material, &env.nonce, &env.body);
    if expected != env.tag {
        return Err(CryptoError::IntegrityFailure);
    }
    Ok(xor_keystream(&material, &env.body))
}

fn key_material(session_key: &BigUint, nonce: &[u8; 16]) -> [u8; 32] {
    let key_bytes = session_key.to_bytes_be();
    let mut h = Sha256::new();
    h.update((key_bytes.len() as u64).to_be_bytes());
    h.update(&key_bytes);
    h.update(nonce);
    h.finalize().into()
}

fn xor_keystream(material: &[u8; 32], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    for (block_idx, chunk) in data.chunks(DIGEST_LEN).enumerate() {
        let mut h = Sha256::new();
        h.update(material);
        h.update(b"ks");
        h.update((block_idx as u64).to_be_bytes());
        let block: [u8; 32] = h.finalize().into();
        out.extend(chunk.iter().zip(block.iter()).map(|(a, b)| a ^ b));
    }
    out
}

fn body_tag(material: &[u8; 32], nonce: &[u8; 16], body: &[u8]) -> [u8; DIGEST_LEN] {
    let mut h = Sha256::new();
    h.update(material);
    h.update(b"mac");
    h.update(nonce);
    h.update((body.len() as u64).to_be_bytes());
    h.update(body);
    h.finalize().into()
}

/// Extended Euclid; None when gcd(a, m) != 1.
pub fn modular_inverse(a: &BigUint, modulus: &BigUint) -> Option<BigUint> {
    use num_bigint::BigInt;
    let a = BigInt::from(a.clone());
    let m = BigInt::from(modulus.clone());
    let egcd = a.extended_gcd(&m);
    if !egcd.gcd.is_one() {
        return None;
    }
    let mut x = egcd.x % &m;
    if x.sign() == num_bigint::Sign::Minus {
        x += &m;
    }
    x.to_biguint()
}

fn random_prime(bits: u64, rng: &mut impl RngCore) -> BigUint {
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate) {
            return candidate;
        }
    }
}

const MR_WITNESSES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Miller-Rabin with a fixed witness set (deterministic below 3.3e24, and a
/// negligible error rate above).
pub fn is_probable_prime(n: &BigUint) -> bool {
    if n < &BigUint::from(2u32) {
        return false;
    }
    for w in MR_WITNESSES {
        let w = BigUint::from(w);
        if &w == n {
            return true;
        }
        if (n % &w).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for w in MR_WITNESSES {
        let mut x = BigUint::from(w).modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 0..s.saturating_sub(1) {
            x = x.modpow(&BigUint::from(2u32), n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Big integers serialize as lowercase hex everywhere.
pub fn biguint_to_hex(v: &BigUint) -> String {
    format!("{:x}", v)
}

pub fn biguint_from_hex(s: &str) -> Option<BigUint> {
    if s.is_empty() || s.chars().any(|c| !c.is_ascii_hexdigit() || c.is_ascii_uppercase()) {
        return None;
    }
    BigUint::parse_bytes(s.as_bytes(), 16)
}
