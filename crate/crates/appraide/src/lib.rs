//! ApprAide: privacy-preserving decentralized social-learning protocols and a
//! deterministic discrete-event simulator to exercise them.
//!
//! The crate is organized around the protocol layers:
//!
//! - [`crypto`]: seedable textbook-RSA primitives and the hybrid envelope.
//! - [`blind`]: RSA blind signatures, anonymous credentials, the revocation
//!   list (RACL) and blind digital certificates.
//! - [`profile`]: user profiles, connection classes, publication metadata and
//!   default privacy settings.
//! - [`engine`]: placement/encryption rules, access and duplication control,
//!   re-share intersection and signed deletion propagation.
//! - [`message`]: sign-then-encrypt private messaging.
//! - [`matching`]: helper search, offer ranking, evaluations and reputation
//!   thresholds.
//! - [`sim`]: the deterministic peer/server world everything runs in.
//! - [`scenario`]: the scripted-scenario parser and runner behind the CLI.

pub mod blind;
pub mod crypto;
pub mod engine;
pub mod matching;
pub mod message;
pub mod profile;
pub mod scenario;
pub mod sim;
