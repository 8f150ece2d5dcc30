//! Deterministic discrete-event simulation of the hybrid architecture: peer
//! nodes, one logical server (directory, authentication, public store, feed
//! diffusion, deletion escrow, reputation table), churn, and 1-tick message
//! delivery. Identical (scenario, seed) pairs produce identical traces.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::blind::Racl;
use crate::crypto::{self, KeyPair};
use crate::engine::{
    self, AccessDecision, DeletionConfirmation, DeletionRequest, DeletionScope, PlacementTarget,
    ReplicaBody, ReplicaForm, ReplicaRecord,
};
use crate::matching::{
    filter_and_rank_offers, match_request_to_prefs, update_reputation, AbuseCategory, Decision,
    HelpOffer, HelpRequest, HelpeeRating, HelperPreferences, HelperRating, ReputationAction,
    ReputationEvent, ReputationRecord,
};
use crate::message::{self, SignedMessage};
use crate::profile::{
    AudienceSpec, Distribution, Profile, Publication, PublicationMetadata, PublicationType, Role,
    SelfTestResult, UserId, DEFAULT_CLASS_NAMES, MIN_PSEUDONYM_LEN,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("pseudonym shorter than {MIN_PSEUDONYM_LEN} characters")]
    PseudonymTooShort,
    #[error("pseudonym already taken")]
    PseudonymTaken,
    #[error("bad credentials")]
    BadCredentials,
    #[error("teacher registration awaiting administrator approval")]
    PendingApproval,
    #[error("account suspended")]
    Suspended,
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown content {0}")]
    UnknownContent(u64),
    #[error("unknown connection class {0}")]
    UnknownClass(String),
    #[error("peer is not connected")]
    NotConnected,
    #[error("profile error: {0}")]
    Profile(#[from] crate::profile::ProfileError),
    #[error("matching error: {0}")]
    Matching(#[from] crate::matching::MatchingError),
    #[error("engine error: {0}")]
    Engine(#[from] engine::EngineError),
    #[error("viewer may not render this content")]
    RenderDenied,
    #[error("no such session")]
    NoSession,
    #[error("evaluation already recorded for this session")]
    DuplicateEvaluation,
    #[error("users cannot report themselves")]
    SelfReport,
    #[error("account already deleted")]
    AccountDeleted,
    #[error("no active help request")]
    NoActiveRequest,
}

/// Tunables; defaults match the documented behavior (1-tick latency, 10-tick
/// offer window, small fast keys).
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub key_bits: u64,
    pub latency: u64,
    pub offer_window: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            key_bits: 64,
            latency: 1,
            offer_window: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeRef {
    Server,
    Peer(UserId),
}

impl std::fmt::Display for NodeRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeRef::Server => write!(f, "server"),
            NodeRef::Peer(id) => write!(f, "{id}"),
        }
    }
}

/// Everything that crosses the simulated network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Replica(ReplicaRecord),
    ClassKey {
        owner: UserId,
        class_id: String,
        keypair: KeyPair,
    },
    Private(SignedMessage),
    Deletion(DeletionRequest),
    DeletionAck {
        owner: UserId,
        confirmation: DeletionConfirmation,
    },
    PublishPublic(Publication),
    FeedItem(Publication),
    HelpRequestMsg(HelpRequest),
    HelpBroadcast(HelpRequest),
    OfferMsg {
        requester: UserId,
        offer: HelpOffer,
    },
    AbuseReport {
        reporter: UserId,
        offender: UserId,
        category: AbuseCategory,
        incident: u64,
    },
    SpamBlock {
        blocker: UserId,
        offender: UserId,
    },
    EscrowDeletion {
        holder: UserId,
        request: DeletionRequest,
    },
    WarnQuery {
        asker: UserId,
        suspect: UserId,
    },
    WarnReply {
        suspect: UserId,
        prior_reports: u32,
    },
}

/// Serialized form used for trace digests and privacy scans of the wire.
pub fn wire_bytes(msg: &WireMessage) -> Vec<u8> {
    fn body_text(body: &ReplicaBody) -> String {
        match body {
            // Clear bodies legitimately travel to listed persons.
            ReplicaBody::Clear(bytes) => format!("clear:{}", hex::encode(bytes)),
            ReplicaBody::Encrypted(env) => format!(
                "enc:{}:{}:{}",
                crypto::biguint_to_hex(&env.wrapped_key),
                hex::encode(env.nonce),
                hex::encode(&env.body)
            ),
        }
    }
    let text = match msg {
        WireMessage::Replica(r) => format!(
            "replica|{}|{}|{}|{}",
            r.owner,
            r.content_id,
            crate::profile::serialize_metadata(&r.metadata).replace('\n', "~"),
            body_text(&r.body)
        ),
        WireMessage::ClassKey {
            owner, class_id, ..
        } => format!("class-key|{owner}|{class_id}"),
        WireMessage::Private(m) => format!(
            "private|{}|{}|enc:{}:{}:{}",
            m.sender,
            m.receiver,
            crypto::biguint_to_hex(&m.wire.wrapped_key),
            hex::encode(m.wire.nonce),
            hex::encode(&m.wire.body)
        ),
        WireMessage::Deletion(req) => engine::deletion_request_record(req),
        WireMessage::DeletionAck {
            owner,
            confirmation,
        } => format!("to={owner} {}", engine::deletion_confirmation_record(confirmation)),
        WireMessage::PublishPublic(p) | WireMessage::FeedItem(p) => format!(
            "public|{}|{}|{}",
            p.metadata.owner,
            p.metadata.content_id,
            String::from_utf8_lossy(&p.body)
        ),
        WireMessage::HelpRequestMsg(r) | WireMessage::HelpBroadcast(r) => format!(
            "help-request|{}|{}|{}|{}|{}",
            r.requester,
            r.subject,
            r.level.label(),
            r.chapter,
            r.duration_minutes
        ),
        WireMessage::OfferMsg { requester, offer } => {
            format!("offer|{}|{}|{}", offer.offerer, requester, offer.proposal)
        }
        WireMessage::AbuseReport {
            reporter,
            offender,
            category,
            incident,
        } => format!("abuse-report|{reporter}|{offender}|{category:?}|{incident}"),
        WireMessage::SpamBlock { blocker, offender } => {
            format!("spam-block|{blocker}|{offender}")
        }
        WireMessage::EscrowDeletion { holder, request } => {
            format!("escrow|{holder}|{}", engine::deletion_request_record(request))
        }
        WireMessage::WarnQuery { asker, suspect } => format!("warn-query|{asker}|{suspect}"),
        WireMessage::WarnReply {
            suspect,
            prior_reports,
        } => format!("warn-reply|{suspect}|{prior_reports}"),
    };
    text.into_bytes()
}

/// One logged wire transmission.
#[derive(Debug, Clone)]
pub struct WireRecord {
    pub tick: u64,
    pub from: NodeRef,
    pub to: NodeRef,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
struct MatchState {
    request: HelpRequest,
    started_at: u64,
    offers: Vec<HelpOffer>,
    escalated: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub helper: UserId,
    pub helpee: UserId,
    pub ended: bool,
    pub evaluated_by: BTreeSet<UserId>,
}

/// A simulated client machine.
#[derive(Debug, Clone)]
pub struct PeerNode {
    pub id: UserId,
    pub connected: bool,
    pub deleted: bool,
    pub profile: Profile,
    pub keypair: KeyPair,
    pub publications: BTreeMap<u64, Publication>,
    pub replicas: Vec<ReplicaRecord>,
    pub inbox: Vec<(UserId, Vec<u8>)>,
    /// Class private keys received from other owners, newest last (keys
    /// rotate when members are removed).
    pub class_keys: BTreeMap<(UserId, String), Vec<KeyPair>>,
    pub prefs: HelperPreferences,
    pub hidden_users: BTreeSet<UserId>,
    pub past_helpee_ratings: BTreeMap<UserId, HelpeeRating>,
    pub evaluations: BTreeMap<u64, Vec<(UserId, String)>>,
    pub confirmations: BTreeMap<(UserId, DeletionScope), BTreeSet<UserId>>,
    /// Replication Manager log: where each content's replicas were placed.
    pub replication_log: BTreeMap<u64, BTreeSet<UserId>>,
    pending_replication: BTreeMap<u64, BTreeSet<UserId>>,
    pending_keys: BTreeMap<UserId, Vec<(String, KeyPair)>>,
    pending_outbound: Vec<(UserId, WireMessage)>,
    active_request: Option<MatchState>,
    pending_warn: Option<(UserId, bool, Option<bool>)>,
}

#[derive(Debug, Clone)]
pub struct DirectoryEntry {
    /// Opaque token, not a real address.
    pub address: String,
    pub connected: bool,
    pub suspended: bool,
    pub deleted: bool,
    pub public_key: crypto::PublicKey,
}

#[derive(Debug, Clone)]
struct Credential {
    salt: [u8; 16],
    digest: crypto::MessageDigest,
    user: UserId,
    approved: bool,
}

/// The single logical server.
#[derive(Debug)]
pub struct ServerNode {
    pub directory: BTreeMap<UserId, DirectoryEntry>,
    credentials: BTreeMap<String, Credential>,
    pub public_store: Vec<Publication>,
    pub deletion_escrow: BTreeMap<UserId, Vec<DeletionRequest>>,
    pub reputation: BTreeMap<UserId, ReputationRecord>,
    /// Confirmations recorded on behalf of offline owners.
    pub confirmed: BTreeMap<(UserId, DeletionScope), BTreeSet<UserId>>,
    pub racl: Racl,
}

#[derive(Debug, Clone)]
struct QueuedDelivery {
    from: NodeRef,
    to: NodeRef,
    msg: WireMessage,
}

pub struct SimWorld {
    pub clock: u64,
    pub config: SimConfig,
    pub peers: BTreeMap<UserId, PeerNode>,
    pub server: ServerNode,
    pub trace: Vec<String>,
    pub wire_log: Vec<WireRecord>,
    /// Confidentiality violations found by the per-tick scanner.
    pub violations: Vec<String>,
    queue: BTreeMap<(u64, u64), QueuedDelivery>,
    seq: u64,
    rng: ChaCha20Rng,
    next_numeric_id: u64,
    next_session_id: u64,
    next_incident_id: u64,
    pub sessions: BTreeMap<u64, Session>,
}

impl SimWorld {
    pub fn new(seed: u64, config: SimConfig) -> Self {
        SimWorld {
            clock: 0,
            config,
            peers: BTreeMap::new(),
            server: ServerNode {
                directory: BTreeMap::new(),
                credentials: BTreeMap::new(),
                public_store: Vec::new(),
                deletion_escrow: BTreeMap::new(),
                reputation: BTreeMap::new(),
                confirmed: BTreeMap::new(),
                racl: Racl::new(),
            },
            trace: Vec::new(),
            wire_log: Vec::new(),
            violations: Vec::new(),
            queue: BTreeMap::new(),
            seq: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            next_numeric_id: 1,
            next_session_id: 1,
            next_incident_id: 1,
            sessions: BTreeMap::new(),
        }
    }

    fn trace_event(&mut self, node: NodeRef, event: &str, payload: &[u8]) {
        let digest = if payload.is_empty() {
            "-".to_string()
        } else {
            crypto::hash(payload).to_hex()[..16].to_string()
        };
        self.trace.push(format!("{}|{}|{}|{}", self.clock, node, event, digest));
    }

    fn send(&mut self, from: NodeRef, to: NodeRef, msg: WireMessage) {
        let at = self.clock + self.config.latency;
        self.seq += 1;
        self.queue.insert((at, self.seq), QueuedDelivery { from, to, msg });
    }

    fn keygen(&mut self) -> KeyPair {
        crypto::generate_key_pair_with(self.config.key_bits, &mut self.rng)
            .expect("configured key size is above the minimum")
    }

    pub fn lookup(&self, pseudonym: &str) -> Option<UserId> {
        self.server.credentials.get(pseudonym).map(|c| c.user)
    }

    fn peer(&self, id: UserId) -> Result<&PeerNode, SimError> {
        self.peers.get(&id).ok_or(SimError::UnknownUser(id.to_string()))
    }

    fn peer_mut(&mut self, id: UserId) -> Result<&mut PeerNode, SimError> {
        self.peers.get_mut(&id).ok_or(SimError::UnknownUser(id.to_string()))
    }

    pub fn public_key_of(&self, id: UserId) -> Option<crypto::PublicKey> {
        self.server.directory.get(&id).map(|e| e.public_key.clone())
    }

    // -----------------------------------------------------------------------
    // Registration and connectivity
    // -----------------------------------------------------------------------

    pub fn register(
        &mut self,
        pseudonym: &str,
        password: &str,
        role: Role,
    ) -> Result<UserId, SimError> {
        if pseudonym.chars().count() < MIN_PSEUDONYM_LEN {
            return Err(SimError::PseudonymTooShort);
        }
        if self.server.credentials.contains_key(pseudonym) {
            return Err(SimError::PseudonymTaken);
        }
        let numeric = self.next_numeric_id;
        self.next_numeric_id += 1;
        let id = UserId { role, numeric_id: numeric };
        let keypair = self.keygen();

        let mut salt = [0u8; 16];
        rand::RngCore::fill_bytes(&mut self.rng, &mut salt);
        let mut salted = salt.to_vec();
        salted.extend(password.as_bytes());
        self.server.credentials.insert(
            pseudonym.to_string(),
            Credential {
                salt,
                digest: crypto::hash(&salted),
                user: id,
                approved: role == Role::Apprenant, // teachers await admin approval
            },
        );
        self.server.directory.insert(
            id,
            DirectoryEntry {
                address: format!("addr-{numeric}"),
                connected: false,
                suspended: false,
                deleted: false,
                public_key: keypair.public(),
            },
        );

        let mut profile = Profile::new(pseudonym.to_string());
        for (i, name) in DEFAULT_CLASS_NAMES.iter().enumerate() {
            let class_id = format!("CC{}", i + 1);
            let class_kp = self.keygen();
            profile.classes.insert(
                class_id.clone(),
                crate::profile::ConnectionClass {
                    class_id,
                    name: name.to_string(),
                    members: BTreeSet::new(),
                    keypair: class_kp,
                },
            );
        }
        self.peers.insert(
            id,
            PeerNode {
                id,
                connected: false,
                deleted: false,
                profile,
                keypair,
                publications: BTreeMap::new(),
                replicas: Vec::new(),
                inbox: Vec::new(),
                class_keys: BTreeMap::new(),
                prefs: HelperPreferences::default(),
                hidden_users: BTreeSet::new(),
                past_helpee_ratings: BTreeMap::new(),
                evaluations: BTreeMap::new(),
                confirmations: BTreeMap::new(),
                replication_log: BTreeMap::new(),
                pending_replication: BTreeMap::new(),
                pending_keys: BTreeMap::new(),
                pending_outbound: Vec::new(),
                active_request: None,
                pending_warn: None,
            },
        );
        self.trace_event(NodeRef::Server, "register", pseudonym.as_bytes());
        Ok(id)
    }

    pub fn approve_teacher(&mut self, pseudonym: &str) -> Result<(), SimError> {
        let cred = self
            .server
            .credentials
            .get_mut(pseudonym)
            .ok_or_else(|| SimError::UnknownUser(pseudonym.to_string()))?;
        cred.approved = true;
        self.trace_event(NodeRef::Server, "approve-teacher", pseudonym.as_bytes());
        Ok(())
    }

    pub fn authenticate(&mut self, pseudonym: &str, password: &str) -> Result<UserId, SimError> {
        let cred = self
            .server
            .credentials
            .get(pseudonym)
            .ok_or(SimError::BadCredentials)?;
        let mut salted = cred.salt.to_vec();
        salted.extend(password.as_bytes());
        if crypto::hash(&salted) != cred.digest {
            return Err(SimError::BadCredentials);
        }
        if !cred.approved {
            return Err(SimError::PendingApproval);
        }
        let id = cred.user;
        let entry = self.server.directory.get(&id).ok_or(SimError::BadCredentials)?;
        if entry.suspended {
            return Err(SimError::Suspended);
        }
        if entry.deleted {
            return Err(SimError::AccountDeleted);
        }
        self.connect_peer(id)?;
        Ok(id)
    }

    pub fn connect_peer(&mut self, id: UserId) -> Result<(), SimError> {
        let peer = self.peer_mut(id)?;
        if peer.deleted {
            return Err(SimError::AccountDeleted);
        }
        if peer.connected {
            return Ok(()); // idempotent
        }
        peer.connected = true;
        if let Some(entry) = self.server.directory.get_mut(&id) {
            entry.connected = true;
        }
        self.trace_event(NodeRef::Peer(id), "connect", &[]);

        // Server side of login: forward escrowed deletion requests and the
        // public store.
        if let Some(reqs) = self.server.deletion_escrow.remove(&id) {
            for req in reqs {
                self.trace_event(NodeRef::Server, "escrow-forward", &engine::deletion_request_record(&req).into_bytes());
                self.send(NodeRef::Server, NodeRef::Peer(id), WireMessage::Deletion(req));
            }
        }
        for publication in self.server.public_store.clone() {
            self.send(NodeRef::Server, NodeRef::Peer(id), WireMessage::FeedItem(publication));
        }

        // Peer side: flush everything queued while offline, in both
        // directions.
        self.flush_pending_toward(id);
        self.flush_pending_from(id);
        Ok(())
    }

    /// Connected peers holding data destined for `target` deliver it now.
    fn flush_pending_toward(&mut self, target: UserId) {
        let holders: Vec<UserId> = self
            .peers
            .values()
            .filter(|p| p.connected && p.id != target)
            .map(|p| p.id)
            .collect();
        for holder in holders {
            self.flush_one_direction(holder, Some(target));
        }
    }

    /// A freshly connected peer delivers its own backlog to whoever is
    /// online.
    fn flush_pending_from(&mut self, from: UserId) {
        self.flush_one_direction(from, None);
    }

    /// Delivers pending class keys, replicas and queued private messages
    /// from `sender` to `only` (or to every connected peer when `only` is
    /// None).
    fn flush_one_direction(&mut self, sender: UserId, only: Option<UserId>) {
        let sender_connected = self.peers.get(&sender).map(|p| p.connected).unwrap_or(false);
        if !sender_connected {
            return;
        }
        let eligible = |world: &SimWorld, target: UserId| -> bool {
            only.map(|o| o == target).unwrap_or(true)
                && world.peers.get(&target).map(|p| p.connected).unwrap_or(false)
        };

        // Class keys first so renders do not stall on key delivery.
        let key_targets: Vec<UserId> = self.peers[&sender]
            .pending_keys
            .keys()
            .copied()
            .filter(|t| eligible(self, *t))
            .collect();
        for target in key_targets {
            let keys = self
                .peers
                .get_mut(&sender)
                .unwrap()
                .pending_keys
                .remove(&target)
                .unwrap_or_default();
            for (class_id, keypair) in keys {
                self.send(
                    NodeRef::Peer(sender),
                    NodeRef::Peer(target),
                    WireMessage::ClassKey {
                        owner: sender,
                        class_id,
                        keypair,
                    },
                );
            }
        }

        // Replicas owed to now-reachable targets.
        let mut deliveries: Vec<(u64, UserId)> = Vec::new();
        for (cid, targets) in &self.peers[&sender].pending_replication {
            for t in targets {
                if eligible(self, *t) {
                    deliveries.push((*cid, *t));
                }
            }
        }
        for (cid, target) in deliveries {
            if let Some(p) = self.peers.get_mut(&sender) {
                if let Some(set) = p.pending_replication.get_mut(&cid) {
                    set.remove(&target);
                    if set.is_empty() {
                        p.pending_replication.remove(&cid);
                    }
                }
            }
            self.send_replica(sender, target, cid);
        }

        // Queued private messages and other outbound wires.
        let outbound = std::mem::take(&mut self.peers.get_mut(&sender).unwrap().pending_outbound);
        let (now, later): (Vec<_>, Vec<_>) = outbound
            .into_iter()
            .partition(|(target, _)| eligible(self, *target));
        self.peers.get_mut(&sender).unwrap().pending_outbound = later;
        for (target, msg) in now {
            self.send(NodeRef::Peer(sender), NodeRef::Peer(target), msg);
        }
    }

    pub fn disconnect_peer(&mut self, id: UserId) -> Result<(), SimError> {
        let peer = self.peer_mut(id)?;
        peer.connected = false;
        if let Some(entry) = self.server.directory.get_mut(&id) {
            entry.connected = false;
        }
        self.trace_event(NodeRef::Peer(id), "disconnect", &[]);

        // In-flight deliveries to the peer fall back to their senders.
        let keys: Vec<(u64, u64)> = self
            .queue
            .iter()
            .filter(|(_, d)| d.to == NodeRef::Peer(id))
            .map(|(k, _)| *k)
            .collect();
        for key in keys {
            let delivery = self.queue.remove(&key).unwrap();
            self.return_to_sender(delivery);
        }
        Ok(())
    }

    fn return_to_sender(&mut self, delivery: QueuedDelivery) {
        let target = match delivery.to {
            NodeRef::Peer(p) => p,
            NodeRef::Server => return,
        };
        match (delivery.from, delivery.msg) {
            (NodeRef::Peer(sender), WireMessage::Replica(rec)) => {
                if let Some(p) = self.peers.get_mut(&sender) {
                    p.pending_replication.entry(rec.content_id).or_default().insert(target);
                }
            }
            (NodeRef::Peer(sender), WireMessage::ClassKey { class_id, keypair, .. }) => {
                if let Some(p) = self.peers.get_mut(&sender) {
                    p.pending_keys.entry(target).or_default().push((class_id, keypair));
                }
            }
            (NodeRef::Peer(sender), msg @ WireMessage::Private(_)) => {
                if let Some(p) = self.peers.get_mut(&sender) {
                    p.pending_outbound.push((target, msg));
                }
            }
            (NodeRef::Peer(sender), WireMessage::Deletion(req)) => {
                // Holder went offline before the request landed: escrow it.
                self.send(
                    NodeRef::Peer(sender),
                    NodeRef::Server,
                    WireMessage::EscrowDeletion { holder: target, request: req },
                );
            }
            (NodeRef::Server, WireMessage::Deletion(req)) => {
                self.server.deletion_escrow.entry(target).or_default().push(req);
            }
            (from, _) => {
                self.trace_event(from, "delivery-dropped", &[]);
            }
        }
    }

    // -----------------------------------------------------------------------
    // Social graph
    // -----------------------------------------------------------------------

    pub fn befriend(&mut self, a: UserId, b: UserId) -> Result<(), SimError> {
        self.peer_mut(a)?.profile.friends.insert(b);
        self.peer_mut(b)?.profile.friends.insert(a);
        self.trace_event(NodeRef::Peer(a), "befriend", b.to_string().as_bytes());
        Ok(())
    }

    fn class_id_by_name(&self, owner: UserId, class_name: &str) -> Result<String, SimError> {
        self.peer(owner)?
            .profile
            .class_by_name(class_name)
            .map(|c| c.class_id.clone())
            .ok_or_else(|| SimError::UnknownClass(class_name.to_string()))
    }

    pub fn assign_class(
        &mut self,
        owner: UserId,
        member: UserId,
        class_name: &str,
    ) -> Result<(), SimError> {
        let class_id = self.class_id_by_name(owner, class_name)?;
        self.peer_mut(owner)?.profile.add_to_class(member, &class_id)?;
        let keypair = self.peer(owner)?.profile.class(&class_id)?.keypair.clone();
        self.trace_event(NodeRef::Peer(owner), "assign-class", format!("{member}|{class_id}").as_bytes());
        self.queue_class_key(owner, member, class_id, keypair);
        Ok(())
    }

    fn queue_class_key(&mut self, owner: UserId, member: UserId, class_id: String, keypair: KeyPair) {
        let both_online = self.peers.get(&owner).map(|p| p.connected).unwrap_or(false)
            && self.peers.get(&member).map(|p| p.connected).unwrap_or(false);
        if both_online {
            self.send(
                NodeRef::Peer(owner),
                NodeRef::Peer(member),
                WireMessage::ClassKey { owner, class_id, keypair },
            );
        } else if let Some(p) = self.peers.get_mut(&owner) {
            p.pending_keys.entry(member).or_default().push((class_id, keypair));
        }
    }

    /// Removing a member rotates the class key: remaining members receive a
    /// fresh keypair, so future publications are unreadable to the removed
    /// member (already-delivered replicas stay under the old key).
    pub fn remove_class_member(
        &mut self,
        owner: UserId,
        member: UserId,
        class_name: &str,
    ) -> Result<(), SimError> {
        let class_id = self.class_id_by_name(owner, class_name)?;
        self.peer_mut(owner)?.profile.remove_from_class(member, &class_id);
        let new_kp = self.keygen();
        let members = {
            let p = self.peer_mut(owner)?;
            let class = p.profile.classes.get_mut(&class_id).expect("checked above");
            class.keypair = new_kp.clone();
            class.members.clone()
        };
        self.trace_event(NodeRef::Peer(owner), "remove-class", format!("{member}|{class_id}").as_bytes());
        for m in members {
            self.queue_class_key(owner, m, class_id.clone(), new_kp.clone());
        }
        Ok(())
    }

    pub fn block(&mut self, user: UserId, target: UserId, silent: bool) -> Result<(), SimError> {
        let class_ids: Vec<String> = {
            let p = self.peer_mut(user)?;
            p.profile.blocked.insert(target);
            p.profile.classes.keys().cloned().collect()
        };
        for cid in class_ids {
            self.peer_mut(user)?.profile.remove_from_class(target, &cid);
        }
        self.trace_event(NodeRef::Peer(user), "block", target.to_string().as_bytes());
        if silent {
            self.send(
                NodeRef::Peer(user),
                NodeRef::Server,
                WireMessage::SpamBlock { blocker: user, offender: target },
            );
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Publication, viewing, re-sharing
    // -----------------------------------------------------------------------

    /// Resolves an audience into metadata and runs the placement algorithm.
    /// Returns the new content id.
    #[allow(clippy::too_many_arguments)]
    pub fn publish(
        &mut self,
        owner: UserId,
        publication_type: PublicationType,
        science: &str,
        level: crate::profile::Level,
        audience: AudienceSpec,
        distribution: Distribution,
        body: &[u8],
    ) -> Result<u64, SimError> {
        let metadata = self.build_metadata(owner, publication_type, science, level, audience, distribution)?;
        let content_id = metadata.content_id;
        self.place(owner, metadata, body.to_vec())?;
        Ok(content_id)
    }

    fn build_metadata(
        &mut self,
        owner: UserId,
        publication_type: PublicationType,
        science: &str,
        level: crate::profile::Level,
        audience: AudienceSpec,
        distribution: Distribution,
    ) -> Result<PublicationMetadata, SimError> {
        let (audience_name, audience_members) = {
            let p = self.peer(owner)?;
            match &audience {
                AudienceSpec::MeOnly | AudienceSpec::Public => (None, BTreeSet::new()),
                AudienceSpec::Class(class_id) => {
                    let class = p.profile.class(class_id)?;
                    let members: BTreeSet<UserId> = class
                        .members
                        .iter()
                        .filter(|m| !p.profile.blocked.contains(m) && !p.profile.removed.contains(m))
                        .copied()
                        .collect();
                    (Some(class.name.clone()), members)
                }
                AudienceSpec::PersonList(list) => {
                    let members: BTreeSet<UserId> = list
                        .iter()
                        .filter(|m| !p.profile.blocked.contains(m) && !p.profile.removed.contains(m))
                        .copied()
                        .collect();
                    (None, members)
                }
            }
        };
        let mut rights = crate::profile::AccessRights::default_for(&audience);
        rights.distribution = distribution;
        let p = self.peer_mut(owner)?;
        Ok(PublicationMetadata {
            owner,
            owner_pseudonym: p.profile.pseudonym.clone(),
            content_id: p.allocate(),
            publication_type,
            science: science.to_string(),
            level,
            audience,
            audience_name,
            audience_members,
            rights,
            via: None,
        })
    }

    fn place(&mut self, owner: UserId, metadata: PublicationMetadata, body: Vec<u8>) -> Result<(), SimError> {
        let friends: BTreeSet<UserId> = {
            let p = self.peer(owner)?;
            p.profile
                .friends
                .iter()
                .filter(|f| !p.profile.blocked.contains(f) && !p.profile.removed.contains(f))
                .copied()
                .collect()
        };
        let plan = engine::placement_plan(&metadata, &friends);
        let content_id = metadata.content_id;
        let publication = Publication { metadata: metadata.clone(), body };
        self.peer_mut(owner)?.publications.insert(content_id, publication.clone());
        self.trace_event(
            NodeRef::Peer(owner),
            "publish",
            crate::profile::serialize_metadata(&metadata).as_bytes(),
        );

        let mut peer_targets = BTreeSet::new();
        for (target, _form) in &plan {
            match target {
                PlacementTarget::Server => {
                    self.send(NodeRef::Peer(owner), NodeRef::Server, WireMessage::PublishPublic(publication.clone()));
                }
                PlacementTarget::Peer(p) => {
                    peer_targets.insert(*p);
                }
            }
        }
        if !peer_targets.is_empty() {
            self.peer_mut(owner)?.pending_replication.insert(content_id, peer_targets.clone());
            let online: Vec<UserId> = peer_targets
                .into_iter()
                .filter(|t| self.peers.get(t).map(|p| p.connected).unwrap_or(false))
                .collect();
            if self.peers[&owner].connected {
                for target in online {
                    if let Some(set) = self.peer_mut(owner)?.pending_replication.get_mut(&content_id) {
                        set.remove(&target);
                    }
                    self.send_replica(owner, target, content_id);
                }
            }
        }
        Ok(())
    }

    /// Builds the wire replica for one target per the placement form and
    /// schedules its delivery.
    fn send_replica(&mut self, owner: UserId, target: UserId, content_id: u64) {
        let Some(publication) = self.peers.get(&owner).and_then(|p| p.publications.get(&content_id)).cloned()
        else {
            return; // deleted since it was queued
        };
        let metadata = publication.metadata.for_duplication();
        let (form, body) = match &publication.metadata.audience {
            AudienceSpec::Class(class_id) => {
                let class_pub = self.peers[&owner]
                    .profile
                    .class(class_id)
                    .expect("audience class exists at publish time")
                    .keypair
                    .public();
                let env = crypto::encrypt_envelope(&class_pub, &publication.body, &mut self.rng);
                (ReplicaForm::Encrypted(class_id.clone()), ReplicaBody::Encrypted(env))
            }
            _ => (ReplicaForm::Clear, ReplicaBody::Clear(publication.body.clone())),
        };
        let record = ReplicaRecord {
            content_id,
            owner,
            holder: target,
            form,
            metadata,
            received_at: 0, // stamped on receipt
            body,
        };
        self.send(NodeRef::Peer(owner), NodeRef::Peer(target), WireMessage::Replica(record));
    }

    /// Feed rendering: returns true when the viewer sees plaintext. Metadata
    /// membership is checked before any decryption attempt.
    pub fn view(&mut self, viewer: UserId, owner: UserId, content_id: u64) -> Result<bool, SimError> {
        let decision = self.render_lookup(viewer, owner, content_id)?;
        let event = if decision { "view-render" } else { "view-hidden" };
        self.trace_event(NodeRef::Peer(viewer), event, format!("{owner}|{content_id}").as_bytes());
        Ok(decision)
    }

    fn render_lookup(&self, viewer: UserId, owner: UserId, content_id: u64) -> Result<bool, SimError> {
        let viewer_node = self.peer(viewer)?;
        if viewer_node.hidden_users.contains(&owner) {
            return Ok(false); // filtered after an abuse report
        }
        let blocked_by_owner = self
            .peers
            .get(&owner)
            .map(|p| p.profile.blocked.contains(&viewer))
            .unwrap_or(false);

        // Owner's own copy.
        if viewer == owner {
            return Ok(viewer_node.publications.contains_key(&content_id));
        }
        // Local replica.
        if let Some(rec) = viewer_node
            .replicas
            .iter()
            .find(|r| r.owner == owner && r.content_id == content_id)
        {
            let has_key = match &rec.body {
                ReplicaBody::Clear(_) => true,
                ReplicaBody::Encrypted(env) => {
                    // Metadata check comes first; only attempt decryption when
                    // the audience ids admit the viewer.
                    if !engine::render_decision(viewer, &rec.metadata, true, blocked_by_owner) {
                        return Ok(false);
                    }
                    let class_id = match &rec.form {
                        ReplicaForm::Encrypted(c) => c.clone(),
                        ReplicaForm::Clear => unreachable!("clear form with encrypted body"),
                    };
                    viewer_node
                        .class_keys
                        .get(&(owner, class_id))
                        .map(|keys| {
                            keys.iter().any(|kp| crypto::decrypt_envelope(&kp.private(), env).is_ok())
                        })
                        .unwrap_or(false)
                }
            };
            return Ok(engine::render_decision(viewer, &rec.metadata, has_key, blocked_by_owner));
        }
        // Server public store.
        if let Some(publication) = self
            .server
            .public_store
            .iter()
            .find(|p| p.metadata.owner == owner && p.metadata.content_id == content_id)
        {
            return Ok(engine::render_decision(viewer, &publication.metadata, true, blocked_by_owner));
        }
        Ok(false)
    }

    /// A viewer asks the owner's machine for a content item (access +
    /// duplication control).
    pub fn request_access(
        &mut self,
        requester: UserId,
        owner: UserId,
        content_id: u64,
    ) -> Result<AccessDecision, SimError> {
        let Some(metadata) = self
            .peers
            .get(&owner)
            .and_then(|p| p.publications.get(&content_id))
            .map(|p| p.metadata.clone())
        else {
            return Ok(AccessDecision::DenyUnknownContent);
        };
        let is_friend = self.peers[&owner].profile.friends.contains(&requester)
            && !self.peers[&owner].profile.blocked.contains(&requester)
            && !self.peers[&owner].profile.removed.contains(&requester);
        let decision = engine::handle_access_request(requester, &metadata, is_friend);
        let duplicate = match &decision {
            AccessDecision::Allow { duplicate } => duplicate.clone(),
            AccessDecision::DenyNotAuthorized { duplicate } => duplicate.clone(),
            AccessDecision::DenyUnknownContent => None,
        };
        if duplicate.is_some()
            && self.peers[&owner].connected
            && self.peers.get(&requester).map(|p| p.connected).unwrap_or(false)
        {
            self.peer_mut(owner)?.pending_replication.entry(content_id).or_default().remove(&requester);
            self.send_replica(owner, requester, content_id);
        }
        self.trace_event(
            NodeRef::Peer(owner),
            match decision {
                AccessDecision::Allow { .. } => "access-allow",
                _ => "access-deny",
            },
            format!("{requester}|{content_id}").as_bytes(),
        );
        Ok(decision)
    }

    /// Re-shares content the resharer can render; the engine intersects the
    /// audiences and the derived copy is placed like a fresh publication.
    pub fn reshare(
        &mut self,
        resharer: UserId,
        original_owner: UserId,
        content_id: u64,
        new_audience: AudienceSpec,
    ) -> Result<u64, SimError> {
        if !self.render_lookup(resharer, original_owner, content_id)? {
            return Err(SimError::RenderDenied);
        }
        let (original_meta, body) = self.plaintext_of(resharer, original_owner, content_id)?;
        let (audience_name, members) = {
            let p = self.peer(resharer)?;
            match &new_audience {
                AudienceSpec::MeOnly | AudienceSpec::Public => (None, BTreeSet::new()),
                AudienceSpec::Class(class_id) => {
                    let class = p.profile.class(class_id)?;
                    (Some(class.name.clone()), class.members.clone())
                }
                AudienceSpec::PersonList(list) => (None, list.clone()),
            }
        };
        let new_content_id = self.peer_mut(resharer)?.allocate();
        let pseudonym = self.peers[&resharer].profile.pseudonym.clone();
        let derived = engine::reshare_metadata(
            &original_meta,
            resharer,
            &pseudonym,
            new_audience,
            audience_name,
            members,
            new_content_id,
        )?;
        self.place(resharer, derived, body)?;
        Ok(new_content_id)
    }

    /// Plaintext of a renderable item, decrypting a local replica if needed.
    fn plaintext_of(
        &self,
        viewer: UserId,
        owner: UserId,
        content_id: u64,
    ) -> Result<(PublicationMetadata, Vec<u8>), SimError> {
        if viewer == owner {
            let publication = self.peers[&owner]
                .publications
                .get(&content_id)
                .ok_or(SimError::UnknownContent(content_id))?;
            return Ok((publication.metadata.clone(), publication.body.clone()));
        }
        let viewer_node = self.peer(viewer)?;
        if let Some(rec) = viewer_node
            .replicas
            .iter()
            .find(|r| r.owner == owner && r.content_id == content_id)
        {
            let body = match &rec.body {
                ReplicaBody::Clear(b) => b.clone(),
                ReplicaBody::Encrypted(env) => {
                    let class_id = match &rec.form {
                        ReplicaForm::Encrypted(c) => c.clone(),
                        ReplicaForm::Clear => unreachable!(),
                    };
                    viewer_node
                        .class_keys
                        .get(&(owner, class_id))
                        .and_then(|keys| {
                            keys.iter().find_map(|kp| crypto::decrypt_envelope(&kp.private(), env).ok())
                        })
                        .ok_or(SimError::RenderDenied)?
                }
            };
            return Ok((rec.metadata.clone(), body));
        }
        if let Some(publication) = self
            .server
            .public_store
            .iter()
            .find(|p| p.metadata.owner == owner && p.metadata.content_id == content_id)
        {
            return Ok((publication.metadata.clone(), publication.body.clone()));
        }
        Err(SimError::UnknownContent(content_id))
    }

    // -----------------------------------------------------------------------
    // Messaging
    // -----------------------------------------------------------------------

    pub fn send_message(&mut self, from: UserId, to: UserId, body: &[u8]) -> Result<(), SimError> {
        let receiver_pub = self.public_key_of(to).ok_or(SimError::UnknownUser(to.to_string()))?;
        let sender_priv = self.peer(from)?.keypair.private();
        let msg = message::compose_signed(from, &sender_priv, to, &receiver_pub, body, &mut self.rng);
        self.trace_event(NodeRef::Peer(from), "send-message", &wire_bytes(&WireMessage::Private(msg.clone())));
        if self.peers.get(&to).map(|p| p.connected).unwrap_or(false)
            && self.peers[&from].connected
        {
            self.send(NodeRef::Peer(from), NodeRef::Peer(to), WireMessage::Private(msg));
        } else {
            // Queued at the sender; retried on the receiver's next connection.
            self.peer_mut(from)?.pending_outbound.push((to, WireMessage::Private(msg)));
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Deletion (right to be forgotten)
    // -----------------------------------------------------------------------

    pub fn delete_content(&mut self, owner: UserId, content_id: u64) -> Result<(), SimError> {
        let publication = self
            .peer(owner)?
            .publications
            .get(&content_id)
            .cloned()
            .ok_or(SimError::UnknownContent(content_id))?;
        let holders: BTreeSet<UserId> = self
            .peer(owner)?
            .replication_log
            .get(&content_id)
            .cloned()
            .unwrap_or_default();
        let owner_priv = self.peers[&owner].keypair.private();
        let request = engine::sign_deletion_request(owner, DeletionScope::Content(content_id), &owner_priv);
        self.trace_event(NodeRef::Peer(owner), "delete-content", &engine::deletion_request_record(&request).into_bytes());

        // Undelivered replicas must never go out now.
        self.peer_mut(owner)?.pending_replication.remove(&content_id);
        self.peer_mut(owner)?.publications.remove(&content_id);

        if matches!(publication.metadata.audience, AudienceSpec::Public) {
            self.send(NodeRef::Peer(owner), NodeRef::Server, WireMessage::Deletion(request.clone()));
        }
        self.dispatch_deletion(owner, request, holders);
        Ok(())
    }

    pub fn delete_account(&mut self, owner: UserId) -> Result<(), SimError> {
        if self.peer(owner)?.deleted {
            return Ok(()); // already gone; no-op
        }
        let holders: BTreeSet<UserId> = self
            .peers[&owner]
            .replication_log
            .values()
            .flatten()
            .copied()
            .collect();
        let owner_priv = self.peers[&owner].keypair.private();
        let request = engine::sign_deletion_request(owner, DeletionScope::Account, &owner_priv);
        self.trace_event(NodeRef::Peer(owner), "delete-account", &engine::deletion_request_record(&request).into_bytes());

        // Server purges public data, credentials and the directory entry
        // synchronously; the public key stays so holders can still verify
        // the escrowed requests.
        self.server.public_store.retain(|p| p.metadata.owner != owner);
        let pseudonym = self.peers[&owner].profile.pseudonym.clone();
        self.server.credentials.remove(&pseudonym);
        if let Some(entry) = self.server.directory.get_mut(&owner) {
            entry.deleted = true;
            entry.connected = false;
        }

        self.dispatch_deletion(owner, request, holders);
        let peer = self.peer_mut(owner)?;
        peer.deleted = true;
        peer.connected = false;
        peer.publications.clear();
        peer.pending_replication.clear();
        Ok(())
    }

    fn dispatch_deletion(&mut self, owner: UserId, request: DeletionRequest, holders: BTreeSet<UserId>) {
        for holder in holders {
            let online = self.peers.get(&holder).map(|p| p.connected).unwrap_or(false);
            if online {
                self.send(NodeRef::Peer(owner), NodeRef::Peer(holder), WireMessage::Deletion(request.clone()));
            } else {
                let mut escrowed = request.clone();
                escrowed.pending_holders.insert(holder);
                self.send(
                    NodeRef::Peer(owner),
                    NodeRef::Server,
                    WireMessage::EscrowDeletion { holder, request: escrowed },
                );
            }
        }
    }

    /// Replicas of `scope` still present anywhere (peers; the server's
    /// public store counts for content scope).
    pub fn replica_count(&self, owner: UserId, content_id: u64) -> usize {
        let on_peers = self
            .peers
            .values()
            .flat_map(|p| &p.replicas)
            .filter(|r| r.owner == owner && r.content_id == content_id)
            .count();
        let on_server = self
            .server
            .public_store
            .iter()
            .filter(|p| p.metadata.owner == owner && p.metadata.content_id == content_id)
            .count();
        on_peers + on_server
    }

    /// All confirmations for a deletion, whether they reached the owner or
    /// were recorded by the server while the owner was offline.
    pub fn confirmation_count(&self, owner: UserId, scope: DeletionScope) -> usize {
        let mut set: BTreeSet<UserId> = self
            .peers
            .get(&owner)
            .and_then(|p| p.confirmations.get(&(owner, scope)))
            .cloned()
            .unwrap_or_default();
        if let Some(server_side) = self.server.confirmed.get(&(owner, scope)) {
            set.extend(server_side);
        }
        set.len()
    }

    pub fn escrow_count(&self) -> usize {
        self.server.deletion_escrow.values().map(|v| v.len()).sum()
    }

    // -----------------------------------------------------------------------
    // Learning records, matching, reputation
    // -----------------------------------------------------------------------

    pub fn record_self_test(&mut self, user: UserId, test_id: &str, score: f64) -> Result<(), SimError> {
        let at = self.clock;
        self.peer_mut(user)?.profile.record_self_test(SelfTestResult {
            owner: user,
            test_id: test_id.to_string(),
            score,
            taken_at: at,
        })?;
        self.trace_event(NodeRef::Peer(user), "self-test", test_id.as_bytes());
        Ok(())
    }

    pub fn set_prefs(&mut self, user: UserId, prefs: HelperPreferences) -> Result<(), SimError> {
        self.peer_mut(user)?.prefs = prefs;
        self.trace_event(NodeRef::Peer(user), "set-prefs", &[]);
        Ok(())
    }

    /// Phase 1 of the helper search: the request goes to connected friends;
    /// the server is contacted only if no offer arrives within the window.
    pub fn request_help(&mut self, request: HelpRequest) -> Result<(), SimError> {
        request.validate()?;
        let requester = request.requester;
        if !self.peer(requester)?.connected {
            return Err(SimError::NotConnected);
        }
        let friends: Vec<UserId> = {
            let p = &self.peers[&requester];
            p.profile
                .friends
                .iter()
                .filter(|f| {
                    !p.profile.blocked.contains(f)
                        && !p.profile.removed.contains(f)
                        && self.peers.get(f).map(|n| n.connected).unwrap_or(false)
                })
                .copied()
                .collect()
        };
        self.trace_event(NodeRef::Peer(requester), "request-help", request.subject.as_bytes());
        let started_at = self.clock;
        self.peer_mut(requester)?.active_request = Some(MatchState {
            request: request.clone(),
            started_at,
            offers: Vec::new(),
            escalated: false,
        });
        if friends.is_empty() {
            self.escalate_request(requester);
        } else {
            for f in friends {
                self.send(NodeRef::Peer(requester), NodeRef::Peer(f), WireMessage::HelpRequestMsg(request.clone()));
            }
        }
        Ok(())
    }

    fn escalate_request(&mut self, requester: UserId) {
        let Some(state) = self.peers.get_mut(&requester).and_then(|p| p.active_request.as_mut()) else {
            return;
        };
        if state.escalated {
            return;
        }
        state.escalated = true;
        let request = state.request.clone();
        self.trace_event(NodeRef::Peer(requester), "help-escalate", &[]);
        self.send(NodeRef::Peer(requester), NodeRef::Server, WireMessage::HelpBroadcast(request));
    }

    pub fn offer_help(&mut self, helper: UserId, requester: UserId, proposal: &str) -> Result<(), SimError> {
        if !self.peer(helper)?.connected {
            return Err(SimError::NotConnected);
        }
        let offer = HelpOffer { offerer: helper, proposal: proposal.to_string() };
        self.send(NodeRef::Peer(helper), NodeRef::Peer(requester), WireMessage::OfferMsg { requester, offer });
        Ok(())
    }

    /// The ranked offer list the requester's assistant would show right now.
    pub fn ranked_offers(&self, requester: UserId) -> Result<Vec<HelpOffer>, SimError> {
        let p = self.peer(requester)?;
        let state = p.active_request.as_ref().ok_or(SimError::NoActiveRequest)?;
        Ok(filter_and_rank_offers(
            &state.offers,
            &p.profile.blocked,
            &p.profile.removed,
            &p.past_helpee_ratings,
        ))
    }

    pub fn accept_offer(&mut self, requester: UserId, helper: UserId) -> Result<u64, SimError> {
        let p = self.peer_mut(requester)?;
        let state = p.active_request.as_ref().ok_or(SimError::NoActiveRequest)?;
        if !state.offers.iter().any(|o| o.offerer == helper) {
            return Err(SimError::NoSession);
        }
        p.active_request = None;
        let sid = self.next_session_id;
        self.next_session_id += 1;
        self.sessions.insert(
            sid,
            Session { helper, helpee: requester, ended: false, evaluated_by: BTreeSet::new() },
        );
        self.trace_event(NodeRef::Peer(requester), "accept-offer", helper.to_string().as_bytes());
        Ok(sid)
    }

    fn session_between(&self, a: UserId, b: UserId) -> Option<u64> {
        self.sessions
            .iter()
            .rev()
            .find(|(_, s)| (s.helper == a && s.helpee == b) || (s.helper == b && s.helpee == a))
            .map(|(id, _)| *id)
    }

    pub fn end_session(&mut self, a: UserId, b: UserId) -> Result<u64, SimError> {
        let sid = self.session_between(a, b).ok_or(SimError::NoSession)?;
        self.sessions.get_mut(&sid).unwrap().ended = true;
        self.trace_event(NodeRef::Peer(a), "end-session", sid.to_string().as_bytes());
        Ok(sid)
    }

    /// Post-session evaluation: stored locally by both parties and exchanged
    /// only inside an encrypted private message, never via the server.
    pub fn evaluate(
        &mut self,
        rater: UserId,
        other: UserId,
        helpee_rating: Option<HelpeeRating>,
        helper_rating: Option<HelperRating>,
        again: bool,
    ) -> Result<(), SimError> {
        let sid = self.session_between(rater, other).ok_or(SimError::NoSession)?;
        let session = self.sessions.get(&sid).unwrap();
        if !session.ended {
            return Err(SimError::NoSession);
        }
        if session.evaluated_by.contains(&rater) {
            return Err(SimError::DuplicateEvaluation);
        }
        let label = match (helpee_rating, helper_rating) {
            (Some(r), _) => format!("{r:?}"),
            (_, Some(r)) => format!("{r:?}"),
            _ => return Err(SimError::NoSession),
        };
        // The helpee remembers their own rating of the helper for future
        // offer ranking.
        if let Some(r) = helpee_rating {
            self.peer_mut(rater)?.past_helpee_ratings.insert(other, r);
        }
        self.sessions.get_mut(&sid).unwrap().evaluated_by.insert(rater);
        let body = format!("evaluation|{sid}|{label}|{again}");
        self.send_message(rater, other, body.as_bytes())?;
        self.trace_event(NodeRef::Peer(rater), "evaluate", sid.to_string().as_bytes());
        Ok(())
    }

    pub fn report_abuse(
        &mut self,
        victim: UserId,
        offender: UserId,
        category: AbuseCategory,
        incident: Option<u64>,
    ) -> Result<(), SimError> {
        if victim == offender {
            return Err(SimError::SelfReport);
        }
        let incident = incident.unwrap_or_else(|| {
            let i = self.next_incident_id;
            self.next_incident_id += 1;
            i
        });
        // The victim's agent hides all of the offender's content at once.
        self.peer_mut(victim)?.hidden_users.insert(offender);
        self.trace_event(NodeRef::Peer(victim), "report-abuse", offender.to_string().as_bytes());
        self.send(
            NodeRef::Peer(victim),
            NodeRef::Server,
            WireMessage::AbuseReport { reporter: victim, offender, category, incident },
        );
        Ok(())
    }

    pub fn admin_review(
        &mut self,
        user: UserId,
        false_declarations: u32,
        decision: Decision,
    ) -> Result<(), SimError> {
        let record = self
            .server
            .reputation
            .entry(user)
            .or_insert_with(|| ReputationRecord::new(user));
        update_reputation(record, ReputationEvent::AdminReview { false_declarations, decision });
        if decision == Decision::Suspendu {
            self.suspend(user);
        }
        self.trace_event(NodeRef::Server, "admin-review", user.to_string().as_bytes());
        Ok(())
    }

    fn suspend(&mut self, user: UserId) {
        if let Some(entry) = self.server.directory.get_mut(&user) {
            entry.suspended = true;
        }
        let connected = self.peers.get(&user).map(|p| p.connected).unwrap_or(false);
        self.trace_event(NodeRef::Server, "suspend", user.to_string().as_bytes());
        if connected {
            let _ = self.disconnect_peer(user);
        }
    }

    pub fn reputation_decision(&self, user: UserId) -> Decision {
        self.server
            .reputation
            .get(&user)
            .map(|r| r.decision)
            .unwrap_or(Decision::Aucune)
    }

    /// Privacy Assistant warning dialogue. The answers come from the
    /// scenario; the reputation query travels over the wire.
    pub fn warn(
        &mut self,
        user: UserId,
        suspect: UserId,
        answer_block: bool,
        second_answer: Option<bool>,
    ) -> Result<(), SimError> {
        if !self.peer(user)?.connected {
            return Err(SimError::NotConnected);
        }
        self.peer_mut(user)?.pending_warn = Some((suspect, answer_block, second_answer));
        self.send(NodeRef::Peer(user), NodeRef::Server, WireMessage::WarnQuery { asker: user, suspect });
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Event loop
    // -----------------------------------------------------------------------

    /// True while wire deliveries are still queued.
    pub fn has_pending_deliveries(&self) -> bool {
        !self.queue.is_empty()
    }

    /// Processes every delivery at the next queued timestamp.
    pub fn step(&mut self) {
        let Some((&(time, _), _)) = self.queue.iter().next() else {
            return; // empty queue leaves the clock untouched
        };
        self.clock = self.clock.max(time);
        self.process_tick(time);
    }

    /// Advances the clock to `until`, tick by tick, running deliveries, the
    /// offer-window check and the confidentiality scanner at each tick.
    pub fn run_until(&mut self, until: u64) {
        while self.clock < until {
            self.clock += 1;
            let now = self.clock;
            self.process_tick(now);
            self.check_offer_windows();
            self.scan_tick();
        }
    }

    fn process_tick(&mut self, time: u64) {
        loop {
            let Some((&key @ (t, _), _)) = self.queue.iter().next() else {
                break;
            };
            if t > time {
                break;
            }
            let delivery = self.queue.remove(&key).unwrap();
            self.deliver(delivery);
        }
    }

    fn check_offer_windows(&mut self) {
        let due: Vec<UserId> = self
            .peers
            .values()
            .filter(|p| {
                p.connected
                    && p.active_request
                        .as_ref()
                        .map(|s| !s.escalated && s.offers.is_empty() && self.clock >= s.started_at + self.config.offer_window)
                        .unwrap_or(false)
            })
            .map(|p| p.id)
            .collect();
        for requester in due {
            self.escalate_request(requester);
        }
    }

    fn deliver(&mut self, delivery: QueuedDelivery) {
        // Drop-back when the destination peer disconnected in flight.
        if let NodeRef::Peer(target) = delivery.to {
            let reachable = self
                .peers
                .get(&target)
                .map(|p| p.connected && !p.deleted)
                .unwrap_or(false);
            if !reachable {
                self.return_to_sender(delivery);
                return;
            }
        }
        self.wire_log.push(WireRecord {
            tick: self.clock,
            from: delivery.from,
            to: delivery.to,
            bytes: wire_bytes(&delivery.msg),
        });
        match delivery.to {
            NodeRef::Server => self.server_receive(delivery.from, delivery.msg),
            NodeRef::Peer(id) => self.peer_receive(id, delivery.from, delivery.msg),
        }
    }

    fn server_receive(&mut self, from: NodeRef, msg: WireMessage) {
        match msg {
            WireMessage::PublishPublic(publication) => {
                if !matches!(publication.metadata.audience, AudienceSpec::Public) {
                    self.trace_event(NodeRef::Server, "reject-private-publication", &[]);
                    return;
                }
                self.trace_event(NodeRef::Server, "public-stored", &publication.body);
                // Feed diffusion to every connected peer except the owner.
                let owner = publication.metadata.owner;
                let connected: Vec<UserId> = self
                    .peers
                    .values()
                    .filter(|p| p.connected && p.id != owner)
                    .map(|p| p.id)
                    .collect();
                self.server.public_store.push(publication.clone());
                for peer in connected {
                    self.send(NodeRef::Server, NodeRef::Peer(peer), WireMessage::FeedItem(publication.clone()));
                }
            }
            WireMessage::EscrowDeletion { holder, request } => {
                self.trace_event(NodeRef::Server, "escrow-stored", holder.to_string().as_bytes());
                self.server.deletion_escrow.entry(holder).or_default().push(request);
            }
            WireMessage::Deletion(request) => {
                // The server is the holder of public content.
                if let Some(pubkey) = self.public_key_of(request.owner) {
                    if engine::verify_deletion_request(&request, &pubkey) {
                        match request.scope {
                            DeletionScope::Content(cid) => self
                                .server
                                .public_store
                                .retain(|p| !(p.metadata.owner == request.owner && p.metadata.content_id == cid)),
                            DeletionScope::Account => {
                                self.server.public_store.retain(|p| p.metadata.owner != request.owner)
                            }
                        }
                        self.trace_event(NodeRef::Server, "public-deleted", &[]);
                    } else {
                        self.trace_event(NodeRef::Server, "deletion-ignored", &[]);
                    }
                }
            }
            WireMessage::DeletionAck { owner, confirmation } => {
                // Recorded server-side while the owner is unreachable.
                self.server
                    .confirmed
                    .entry((owner, confirmation.scope))
                    .or_default()
                    .insert(confirmation.confirming_holder);
                self.trace_event(NodeRef::Server, "confirmation-recorded", &[]);
            }
            WireMessage::HelpBroadcast(request) => {
                let requester = request.requester;
                let friends = self
                    .peers
                    .get(&requester)
                    .map(|p| p.profile.friends.clone())
                    .unwrap_or_default();
                let targets: Vec<UserId> = self
                    .peers
                    .values()
                    .filter(|p| p.connected && p.id != requester && !friends.contains(&p.id))
                    .map(|p| p.id)
                    .collect();
                self.trace_event(NodeRef::Server, "help-broadcast", request.subject.as_bytes());
                for t in targets {
                    self.send(NodeRef::Server, NodeRef::Peer(t), WireMessage::HelpRequestMsg(request.clone()));
                }
            }
            WireMessage::AbuseReport { reporter, offender, category, incident } => {
                let record = self
                    .server
                    .reputation
                    .entry(offender)
                    .or_insert_with(|| ReputationRecord::new(offender));
                let action = update_reputation(record, ReputationEvent::Report { reporter, category, incident });
                match action {
                    ReputationAction::ReviewRequested => {
                        self.trace_event(NodeRef::Server, "review-requested", offender.to_string().as_bytes())
                    }
                    ReputationAction::AutoSuspended => self.suspend(offender),
                    ReputationAction::None => {}
                }
            }
            WireMessage::SpamBlock { blocker, offender } => {
                let record = self
                    .server
                    .reputation
                    .entry(offender)
                    .or_insert_with(|| ReputationRecord::new(offender));
                update_reputation(record, ReputationEvent::BlockWithoutReport { blocker });
            }
            WireMessage::WarnQuery { asker, suspect } => {
                let record = self
                    .server
                    .reputation
                    .entry(suspect)
                    .or_insert_with(|| ReputationRecord::new(suspect));
                update_reputation(record, ReputationEvent::AssistantVisit);
                let prior = record.report_count();
                self.send(NodeRef::Server, NodeRef::Peer(asker), WireMessage::WarnReply { suspect, prior_reports: prior });
            }
            other => {
                self.trace_event(NodeRef::Server, "unexpected-message", &wire_bytes(&other));
                let _ = from;
            }
        }
    }

    fn peer_receive(&mut self, id: UserId, from: NodeRef, msg: WireMessage) {
        match msg {
            WireMessage::Replica(mut record) => {
                record.received_at = self.clock;
                record.holder = id;
                let owner = record.owner;
                let content_id = record.content_id;
                {
                    let p = self.peers.get_mut(&id).expect("delivery checked connectivity");
                    p.replicas.retain(|r| !(r.owner == owner && r.content_id == content_id));
                    p.replicas.push(record);
                }
                if let Some(owner_node) = self.peers.get_mut(&owner) {
                    owner_node.replication_log.entry(content_id).or_default().insert(id);
                }
                self.trace_event(NodeRef::Peer(id), "replica-stored", format!("{owner}|{content_id}").as_bytes());
            }
            WireMessage::ClassKey { owner, class_id, keypair } => {
                self.peers
                    .get_mut(&id)
                    .unwrap()
                    .class_keys
                    .entry((owner, class_id.clone()))
                    .or_default()
                    .push(keypair);
                self.trace_event(NodeRef::Peer(id), "class-key-stored", format!("{owner}|{class_id}").as_bytes());
            }
            WireMessage::Private(signed) => {
                let sender = signed.sender;
                let Some(sender_pub) = self.public_key_of(sender) else {
                    self.trace_event(NodeRef::Peer(id), "message-rejected", &[]);
                    return;
                };
                let receiver_priv = self.peers[&id].keypair.private();
                match message::receive_signed(id, &receiver_priv, &sender_pub, &signed) {
                    Ok(body) => {
                        self.trace_event(NodeRef::Peer(id), "message-stored", &body);
                        if let Some(rest) = body
                            .strip_prefix(b"evaluation|".as_slice())
                            .and_then(|r| std::str::from_utf8(r).ok())
                        {
                            let mut parts = rest.splitn(3, '|');
                            if let Some(sid) = parts.next().and_then(|s| s.parse::<u64>().ok()) {
                                let rating = parts.next().unwrap_or("").to_string();
                                self.peers
                                    .get_mut(&id)
                                    .unwrap()
                                    .evaluations
                                    .entry(sid)
                                    .or_default()
                                    .push((sender, rating));
                            }
                        }
                        self.peers.get_mut(&id).unwrap().inbox.push((sender, body));
                    }
                    Err(_) => self.trace_event(NodeRef::Peer(id), "message-rejected", &[]),
                }
            }
            WireMessage::Deletion(request) => {
                let Some(owner_pub) = self.public_key_of(request.owner) else {
                    self.trace_event(NodeRef::Peer(id), "deletion-ignored", &[]);
                    return;
                };
                if !engine::verify_deletion_request(&request, &owner_pub) {
                    self.trace_event(NodeRef::Peer(id), "deletion-ignored", &[]);
                    return;
                }
                // The Privacy Defender deletes automatically, then confirms.
                let owner = request.owner;
                {
                    let p = self.peers.get_mut(&id).unwrap();
                    match request.scope {
                        DeletionScope::Content(cid) => {
                            p.replicas.retain(|r| !(r.owner == owner && r.content_id == cid))
                        }
                        DeletionScope::Account => p.replicas.retain(|r| r.owner != owner),
                    }
                }
                let holder_priv = self.peers[&id].keypair.private();
                let confirmation = engine::sign_deletion_confirmation(id, owner, request.scope, &holder_priv);
                self.trace_event(NodeRef::Peer(id), "replica-deleted", &engine::deletion_confirmation_record(&confirmation).into_bytes());
                let owner_online = self.peers.get(&owner).map(|p| p.connected && !p.deleted).unwrap_or(false);
                let to = if owner_online { NodeRef::Peer(owner) } else { NodeRef::Server };
                self.send(NodeRef::Peer(id), to, WireMessage::DeletionAck { owner, confirmation });
            }
            WireMessage::DeletionAck { owner, confirmation } => {
                let holder = confirmation.confirming_holder;
                let verified = self
                    .public_key_of(holder)
                    .map(|k| engine::verify_deletion_confirmation(&confirmation, owner, &k))
                    .unwrap_or(false);
                if verified {
                    self.peers
                        .get_mut(&id)
                        .unwrap()
                        .confirmations
                        .entry((owner, confirmation.scope))
                        .or_default()
                        .insert(holder);
                    self.trace_event(NodeRef::Peer(id), "confirmation-stored", holder.to_string().as_bytes());
                }
            }
            WireMessage::FeedItem(publication) => {
                // Rendered by the Privacy Defender, never stored as a replica.
                self.trace_event(NodeRef::Peer(id), "feed-item", &publication.body);
            }
            WireMessage::HelpRequestMsg(request) => {
                let matched = match_request_to_prefs(&request, &self.peers[&id].prefs);
                self.trace_event(
                    NodeRef::Peer(id),
                    if matched { "help-request-matched" } else { "help-request-unmatched" },
                    request.requester.to_string().as_bytes(),
                );
            }
            WireMessage::OfferMsg { requester, offer } => {
                if requester != id {
                    return;
                }
                if let Some(state) = self.peers.get_mut(&id).unwrap().active_request.as_mut() {
                    state.offers.push(offer.clone());
                    self.trace_event(NodeRef::Peer(id), "offer-received", offer.offerer.to_string().as_bytes());
                }
            }
            WireMessage::WarnReply { suspect, prior_reports } => {
                let Some((pending_suspect, answer1, answer2)) = self.peers.get_mut(&id).unwrap().pending_warn.take()
                else {
                    return;
                };
                if pending_suspect != suspect {
                    return;
                }
                let mut block = answer1;
                let mut prompts = 1;
                if !answer1 && prior_reports > 0 {
                    // "You are not the first victim": the second prompt.
                    prompts = 2;
                    block = answer2.unwrap_or(false);
                }
                self.trace_event(NodeRef::Peer(id), if prompts == 2 { "warn-second-prompt" } else { "warn-prompt" }, suspect.to_string().as_bytes());
                if block {
                    let _ = self.block(id, suspect, false);
                }
            }
            other => {
                self.trace_event(NodeRef::Peer(id), "unexpected-message", &wire_bytes(&other));
                let _ = from;
            }
        }
    }

    // -----------------------------------------------------------------------
    // Scanners and snapshots
    // -----------------------------------------------------------------------

    /// Per-tick confidentiality scan: clear replicas of non-public content
    /// may only sit with the owner or a listed audience member, and the
    /// server's public store may contain only public items.
    fn scan_tick(&mut self) {
        let mut found = Vec::new();
        for peer in self.peers.values() {
            for rec in &peer.replicas {
                if matches!(rec.form, ReplicaForm::Clear)
                    && !matches!(rec.metadata.audience, AudienceSpec::Public)
                    && rec.holder != rec.owner
                    && !rec.metadata.audience_members.contains(&rec.holder)
                {
                    found.push(format!(
                        "tick {}: clear replica of {}/{} held by non-audience peer {}",
                        self.clock, rec.owner, rec.content_id, rec.holder
                    ));
                }
            }
        }
        for publication in &self.server.public_store {
            if !matches!(publication.metadata.audience, AudienceSpec::Public) {
                found.push(format!(
                    "tick {}: private publication {}/{} in the public store",
                    self.clock, publication.metadata.owner, publication.metadata.content_id
                ));
            }
        }
        self.violations.extend(found);
    }

    /// Text snapshot of the world for `--dump-world` and debugging.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("clock {}\n", self.clock));
        out.push_str(&format!("public-store {}\n", self.server.public_store.len()));
        out.push_str(&format!("escrow {}\n", self.escrow_count()));
        for (id, entry) in &self.server.directory {
            out.push_str(&format!(
                "directory {} connected={} suspended={} deleted={}\n",
                id, entry.connected, entry.suspended, entry.deleted
            ));
        }
        for record in self.server.reputation.values() {
            out.push_str(&format!("reputation {}\n", crate::matching::reputation_table_line(record)));
        }
        for peer in self.peers.values() {
            out.push_str(&format!(
                "peer {} connected={} publications={} replicas={} inbox={}\n",
                peer.id,
                peer.connected,
                peer.publications.len(),
                peer.replicas.len(),
                peer.inbox.len()
            ));
        }
        for violation in &self.violations {
            out.push_str(&format!("violation {violation}\n"));
        }
        out
    }
}

impl PeerNode {
    fn allocate(&mut self) -> u64 {
        self.profile.allocate_content_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Level;

    fn world() -> SimWorld {
        SimWorld::new(7, SimConfig::default())
    }

    fn setup_two(w: &mut SimWorld) -> (UserId, UserId) {
        let alice = w.register("alice", "pw123456", Role::Apprenant).unwrap();
        let bob = w.register("bobby", "pw123456", Role::Apprenant).unwrap();
        w.authenticate("alice", "pw123456").unwrap();
        w.authenticate("bobby", "pw123456").unwrap();
        w.befriend(alice, bob).unwrap();
        (alice, bob)
    }

    #[test]
    fn registration_rules() {
        let mut w = world();
        assert_eq!(w.register("abc", "pw", Role::Apprenant), Err(SimError::PseudonymTooShort));
        w.register("alice", "pw123456", Role::Apprenant).unwrap();
        assert_eq!(
            w.register("alice", "other", Role::Apprenant),
            Err(SimError::PseudonymTaken)
        );
        w.register("prof", "pw123456", Role::Enseignant).unwrap();
        assert_eq!(
            w.authenticate("prof", "pw123456"),
            Err(SimError::PendingApproval)
        );
        w.approve_teacher("prof").unwrap();
        w.authenticate("prof", "pw123456").unwrap();
        assert_eq!(
            w.authenticate("alice", "wrong"),
            Err(SimError::BadCredentials)
        );
    }

    #[test]
    fn class_publication_replicates_encrypted_and_renders() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        w.assign_class(alice, bob, "Camarades").unwrap();
        w.run_until(2); // key delivery
        let cid = w
            .publish(
                alice,
                PublicationType::Statut,
                "Maths",
                Level::Lycee,
                AudienceSpec::Class("CC2".to_string()),
                Distribution::None,
                b"devoir de maths",
            )
            .unwrap();
        w.run_until(4);
        assert_eq!(w.replica_count(alice, cid), 1);
        let rec = &w.peers[&bob].replicas[0];
        assert!(matches!(rec.form, ReplicaForm::Encrypted(_)));
        assert!(w.view(bob, alice, cid).unwrap());
        assert!(w.violations.is_empty());
    }

    #[test]
    fn duplication_peer_outside_audience_cannot_render() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        let dave = w.register("dave1", "pw123456", Role::Apprenant).unwrap();
        w.authenticate("dave1", "pw123456").unwrap();
        w.befriend(alice, dave).unwrap();
        w.assign_class(alice, bob, "Camarades").unwrap();
        w.run_until(2);
        let cid = w
            .publish(
                alice,
                PublicationType::Statut,
                "Maths",
                Level::Lycee,
                AudienceSpec::Class("CC2".to_string()),
                Distribution::None,
                b"note",
            )
            .unwrap();
        w.run_until(4);
        // Dave holds an encrypted replica for availability but renders nothing.
        assert_eq!(w.peers[&dave].replicas.len(), 1);
        assert!(!w.view(dave, alice, cid).unwrap());
        assert!(w.violations.is_empty());
    }

    #[test]
    fn replication_waits_for_reconnection() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        w.assign_class(alice, bob, "Camarades").unwrap();
        w.run_until(2);
        w.disconnect_peer(bob).unwrap();
        let cid = w
            .publish(
                alice,
                PublicationType::Statut,
                "Maths",
                Level::Lycee,
                AudienceSpec::Class("CC2".to_string()),
                Distribution::None,
                b"plus tard",
            )
            .unwrap();
        w.run_until(6);
        assert_eq!(w.replica_count(alice, cid), 0);
        w.authenticate("bobby", "pw123456").unwrap();
        w.run_until(9);
        assert_eq!(w.replica_count(alice, cid), 1);
    }

    #[test]
    fn public_publication_hits_server_and_feed() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        let cid = w
            .publish(
                alice,
                PublicationType::Information,
                "Maths",
                Level::Cem,
                AudienceSpec::Public,
                Distribution::Allowed,
                b"annonce publique",
            )
            .unwrap();
        w.run_until(3);
        assert_eq!(w.server.public_store.len(), 1);
        assert!(w.view(bob, alice, cid).unwrap());
        // No peer replica: public content lives on the server only.
        assert!(w.peers[&bob].replicas.is_empty());
    }

    #[test]
    fn deletion_with_offline_holder_goes_through_escrow() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        let carol = w.register("carol", "pw123456", Role::Apprenant).unwrap();
        w.authenticate("carol", "pw123456").unwrap();
        w.befriend(alice, carol).unwrap();
        w.assign_class(alice, bob, "Camarades").unwrap();
        w.assign_class(alice, carol, "Camarades").unwrap();
        w.run_until(2);
        let cid = w
            .publish(
                alice,
                PublicationType::Statut,
                "Maths",
                Level::Lycee,
                AudienceSpec::Class("CC2".to_string()),
                Distribution::None,
                b"a supprimer",
            )
            .unwrap();
        w.run_until(4);
        assert_eq!(w.replica_count(alice, cid), 2);
        w.disconnect_peer(carol).unwrap();
        w.delete_content(alice, cid).unwrap();
        w.run_until(8);
        // Bob confirmed; Carol's request is escrowed.
        assert_eq!(w.confirmation_count(alice, DeletionScope::Content(cid)), 1);
        assert_eq!(w.escrow_count(), 1);
        assert_eq!(w.replica_count(alice, cid), 1);
        w.authenticate("carol", "pw123456").unwrap();
        w.run_until(12);
        assert_eq!(w.replica_count(alice, cid), 0);
        assert_eq!(w.confirmation_count(alice, DeletionScope::Content(cid)), 2);
        assert_eq!(w.escrow_count(), 0);
    }

    #[test]
    fn forged_deletion_is_ignored() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        w.assign_class(alice, bob, "Camarades").unwrap();
        w.run_until(2);
        let cid = w
            .publish(
                alice,
                PublicationType::Statut,
                "Maths",
                Level::Lycee,
                AudienceSpec::Class("CC2".to_string()),
                Distribution::None,
                b"intouchable",
            )
            .unwrap();
        w.run_until(4);
        // Bob forges a deletion request in Alice's name with his own key.
        let forged = engine::sign_deletion_request(
            alice,
            DeletionScope::Content(cid),
            &w.peers[&bob].keypair.private(),
        );
        w.send(NodeRef::Peer(bob), NodeRef::Peer(bob), WireMessage::Deletion(forged));
        w.run_until(6);
        assert_eq!(w.replica_count(alice, cid), 1);
    }

    #[test]
    fn offline_message_queues_until_receiver_returns() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        w.disconnect_peer(bob).unwrap();
        w.send_message(alice, bob, b"coucou").unwrap();
        w.run_until(5);
        assert!(w.peers[&bob].inbox.is_empty());
        w.authenticate("bobby", "pw123456").unwrap();
        w.run_until(8);
        assert_eq!(w.peers[&bob].inbox.len(), 1);
        assert_eq!(w.peers[&bob].inbox[0].1, b"coucou");
    }

    #[test]
    fn help_request_escalates_after_window() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        let stranger = w.register("zorro", "pw123456", Role::Apprenant).unwrap();
        w.authenticate("zorro", "pw123456").unwrap();
        let req = HelpRequest {
            requester: alice,
            level: Level::Lycee,
            study_year: 2,
            subject: "Maths".to_string(),
            chapter: "Suites".to_string(),
            helper_grade: crate::matching::HelperGrade::Apprenant,
            teacher_kind: None,
            helper_level: crate::matching::HelperLevel::Eleve,
            duration_minutes: 60,
            description: None,
        };
        w.request_help(req).unwrap();
        w.run_until(5);
        // No offers yet and the window has not elapsed: no broadcast.
        assert!(!w.trace.iter().any(|l| l.contains("help-broadcast")));
        w.run_until(13);
        assert!(w.trace.iter().any(|l| l.contains("help-escalate")));
        // The broadcast reached the connected non-friend.
        assert!(w
            .trace
            .iter()
            .any(|l| l.contains(&format!("{stranger}|help-request"))));
        let _ = bob;
    }

    #[test]
    fn offer_before_window_prevents_escalation() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        let req = HelpRequest {
            requester: alice,
            level: Level::Lycee,
            study_year: 2,
            subject: "Maths".to_string(),
            chapter: "Suites".to_string(),
            helper_grade: crate::matching::HelperGrade::Apprenant,
            teacher_kind: None,
            helper_level: crate::matching::HelperLevel::Eleve,
            duration_minutes: 60,
            description: None,
        };
        w.request_help(req).unwrap();
        w.run_until(2);
        w.offer_help(bob, alice, "je peux t'aider").unwrap();
        w.run_until(20);
        assert!(!w.trace.iter().any(|l| l.contains("help-escalate")));
        assert_eq!(w.ranked_offers(alice).unwrap().len(), 1);
    }

    #[test]
    fn abuse_reports_suspend_after_six_distinct() {
        let mut w = world();
        let offender = w.register("mechant", "pw123456", Role::Apprenant).unwrap();
        w.authenticate("mechant", "pw123456").unwrap();
        for i in 0..6 {
            let name = format!("victime{i}");
            let v = w.register(&name, "pw123456", Role::Apprenant).unwrap();
            w.authenticate(&name, "pw123456").unwrap();
            w.report_abuse(v, offender, AbuseCategory::Intimidateur, None).unwrap();
        }
        w.run_until(3);
        assert_eq!(w.reputation_decision(offender), Decision::Suspendu);
        assert_eq!(
            w.authenticate("mechant", "pw123456"),
            Err(SimError::Suspended)
        );
    }

    #[test]
    fn warn_dialogue_second_prompt_on_prior_reports() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        let carol = w.register("carol", "pw123456", Role::Apprenant).unwrap();
        w.authenticate("carol", "pw123456").unwrap();
        w.report_abuse(carol, bob, AbuseCategory::Predateur, None).unwrap();
        w.run_until(2);
        // Alice answers No first, then Yes at the second prompt.
        w.warn(alice, bob, false, Some(true)).unwrap();
        w.run_until(5);
        assert!(w.trace.iter().any(|l| l.contains("warn-second-prompt")));
        assert!(w.peers[&alice].profile.blocked.contains(&bob));
        assert_eq!(w.server.reputation[&bob].assistant_visits, 1);
    }

    #[test]
    fn determinism_same_seed_same_trace() {
        let run = || {
            let mut w = SimWorld::new(99, SimConfig::default());
            let (alice, bob) = setup_two(&mut w);
            w.assign_class(alice, bob, "Amis").unwrap();
            w.run_until(2);
            let cid = w
                .publish(
                    alice,
                    PublicationType::Statut,
                    "Maths",
                    Level::Cem,
                    AudienceSpec::Class("CC1".to_string()),
                    Distribution::None,
                    b"texte",
                )
                .unwrap();
            w.run_until(6);
            let _ = w.view(bob, alice, cid);
            w.send_message(bob, alice, b"merci").unwrap();
            w.run_until(10);
            w.trace.join("\n")
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_with_empty_queue_keeps_clock() {
        let mut w = world();
        let before = w.clock;
        w.step();
        assert_eq!(w.clock, before);
    }

    #[test]
    fn delete_account_purges_server_and_replicas() {
        let mut w = world();
        let (alice, bob) = setup_two(&mut w);
        w.assign_class(alice, bob, "Camarades").unwrap();
        w.run_until(2);
        w.publish(
            alice,
            PublicationType::Information,
            "Maths",
            Level::Cem,
            AudienceSpec::Public,
            Distribution::Allowed,
            b"public",
        )
        .unwrap();
        w.publish(
            alice,
            PublicationType::Statut,
            "Maths",
            Level::Cem,
            AudienceSpec::Class("CC2".to_string()),
            Distribution::None,
            b"prive",
        )
        .unwrap();
        w.run_until(5);
        assert_eq!(w.server.public_store.len(), 1);
        assert_eq!(w.peers[&bob].replicas.len(), 1);
        w.delete_account(alice).unwrap();
        w.run_until(9);
        assert!(w.server.public_store.is_empty());
        assert!(w.peers[&bob].replicas.is_empty());
        assert!(w.server.directory[&alice].deleted);
        // Double deletion is a no-op.
        w.delete_account(alice).unwrap();
    }
}
