//! Privacy Defender and Replication Manager decision logic: placement and
//! encryption of publications, access and duplication control, re-share
//! audience intersection, and signed deletion propagation.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::crypto::{self, Envelope, PrivateKey, PublicKey, Signature};
use crate::profile::{AudienceSpec, Distribution, PublicationMetadata, UserId};

/// How a replica is stored on a holder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplicaForm {
    Clear,
    Encrypted(String),
}

/// The stored body matching the form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplicaBody {
    Clear(Vec<u8>),
    Encrypted(Envelope),
}

/// One replica as held by a peer or the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaRecord {
    pub content_id: u64,
    pub owner: UserId,
    pub holder: UserId,
    pub form: ReplicaForm,
    pub metadata: PublicationMetadata,
    pub received_at: u64,
    pub body: ReplicaBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlacementTarget {
    Server,
    Peer(UserId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("audience references an unknown connection class")]
    UnknownClass,
    #[error("re-sharing is not permitted for this content")]
    NoDistribution,
}

/// Placement per the publication's audience. Class content goes encrypted to
/// every friend peer (the duplication-peer table is the full friend set);
/// person-list content goes clear to exactly the listed persons; public
/// content lives clear on the server only; me-only content never leaves the
/// owner.
pub fn placement_plan(
    meta: &PublicationMetadata,
    friends: &BTreeSet<UserId>,
) -> Vec<(PlacementTarget, ReplicaForm)> {
    match &meta.audience {
        AudienceSpec::MeOnly => Vec::new(),
        AudienceSpec::Class(class_id) => friends
            .iter()
            .map(|f| (PlacementTarget::Peer(*f), ReplicaForm::Encrypted(class_id.clone())))
            .collect(),
        // The effective members, not the raw list: publish-time filtering and
        // re-share intersection both narrow the audience.
        AudienceSpec::PersonList(_) => meta
            .audience_members
            .iter()
            .map(|p| (PlacementTarget::Peer(*p), ReplicaForm::Clear))
            .collect(),
        AudienceSpec::Public => vec![(PlacementTarget::Server, ReplicaForm::Clear)],
    }
}

/// Feed rendering: metadata membership is checked before any key is used, so
/// a leaked class key alone never renders anything.
pub fn render_decision(
    viewer: UserId,
    meta: &PublicationMetadata,
    viewer_has_class_key: bool,
    viewer_blocked_by_owner: bool,
) -> bool {
    if viewer_blocked_by_owner {
        return false; // block wins over any audience membership
    }
    if viewer == meta.owner {
        return true;
    }
    match &meta.audience {
        AudienceSpec::MeOnly => false,
        AudienceSpec::Class(_) => meta.audience_members.contains(&viewer) && viewer_has_class_key,
        AudienceSpec::PersonList(_) => meta.audience_members.contains(&viewer),
        AudienceSpec::Public => true,
    }
}

/// Outcome of an access request at the owner (or another holder).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessDecision {
    /// Requester is in the audience; `duplicate` is what lands on their
    /// machine alongside the answer.
    Allow { duplicate: Option<ReplicaForm> },
    /// Requester is outside the audience. A friend in the duplication table
    /// still receives the encrypted replica; nobody receives plaintext.
    DenyNotAuthorized { duplicate: Option<ReplicaForm> },
    DenyUnknownContent,
}

pub fn handle_access_request(
    requester: UserId,
    meta: &PublicationMetadata,
    requester_is_friend: bool,
) -> AccessDecision {
    let authorized = requester == meta.owner
        || match &meta.audience {
            AudienceSpec::MeOnly => false,
            AudienceSpec::Public => true,
            _ => meta.audience_members.contains(&requester),
        };
    if authorized {
        let duplicate = match &meta.audience {
            AudienceSpec::Class(c) if requester != meta.owner => {
                Some(ReplicaForm::Encrypted(c.clone()))
            }
            AudienceSpec::PersonList(_) if requester != meta.owner => Some(ReplicaForm::Clear),
            _ => None,
        };
        return AccessDecision::Allow { duplicate };
    }
    // Person-list content is exempt from availability duplication: only the
    // listed persons ever store it.
    let duplicate = match &meta.audience {
        AudienceSpec::Class(c) if requester_is_friend && meta.rights.duplication_authorized => {
            Some(ReplicaForm::Encrypted(c.clone()))
        }
        _ => None,
    };
    AccessDecision::DenyNotAuthorized { duplicate }
}

/// Derives the metadata for a re-share. The effective audience is the
/// intersection of the re-sharer's chosen audience with the original one
/// (and with the restriction list when distribution is restricted); the
/// derived copy carries "resharer via original owner" and its own share
/// option is switched off.
pub fn reshare_metadata(
    original: &PublicationMetadata,
    resharer: UserId,
    resharer_pseudonym: &str,
    new_audience: AudienceSpec,
    new_audience_name: Option<String>,
    new_members: BTreeSet<UserId>,
    new_content_id: u64,
) -> Result<PublicationMetadata, EngineError> {
    let restriction = match &original.rights.distribution {
        Distribution::None => return Err(EngineError::NoDistribution),
        Distribution::Allowed => None,
        Distribution::Restricted(list) => Some(list),
    };
    let mut effective: BTreeSet<UserId> = match original.audience {
        AudienceSpec::Public => new_members,
        _ => new_members
            .intersection(&original.audience_members)
            .copied()
            .collect(),
    };
    if let Some(list) = restriction {
        effective = effective.intersection(list).copied().collect();
    }
    let mut derived = original.clone();
    derived.owner = resharer;
    derived.owner_pseudonym = resharer_pseudonym.to_string();
    derived.content_id = new_content_id;
    derived.via = Some(original.owner);
    derived.audience = new_audience;
    derived.audience_name = new_audience_name;
    derived.audience_members = effective;
    derived.rights.distribution = Distribution::None;
    derived.rights.replication_protection = match &derived.audience {
        AudienceSpec::Class(_) => crate::profile::Protection::Encrypted,
        _ => crate::profile::Protection::Clear,
    };
    Ok(derived)
}

// ---------------------------------------------------------------------------
// Deletion propagation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DeletionScope {
    Content(u64),
    Account,
}

impl DeletionScope {
    fn token(&self) -> String {
        match self {
            DeletionScope::Content(id) => format!("content:{id}"),
            DeletionScope::Account => "account".to_string(),
        }
    }
}

/// Signed "right to be forgotten" request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeletionRequest {
    pub scope: DeletionScope,
    pub owner: UserId,
    pub owner_signature: Signature,
    pub pending_holders: BTreeSet<UserId>,
}

/// Signed acknowledgement from a holder that its replicas are gone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeletionConfirmation {
    pub scope: DeletionScope,
    pub confirming_holder: UserId,
    pub holder_signature: Signature,
}

fn deletion_request_payload(owner: UserId, scope: &DeletionScope) -> Vec<u8> {
    format!("deletion-request|{}|{}", owner, scope.token()).into_bytes()
}

fn deletion_confirmation_payload(
    holder: UserId,
    owner: UserId,
    scope: &DeletionScope,
) -> Vec<u8> {
    format!("deletion-confirmation|{}|{}|{}", holder, owner, scope.token()).into_bytes()
}

pub fn sign_deletion_request(
    owner: UserId,
    scope: DeletionScope,
    owner_priv: &PrivateKey,
) -> DeletionRequest {
    let owner_signature = crypto::sign(owner_priv, &deletion_request_payload(owner, &scope));
    DeletionRequest {
        scope,
        owner,
        owner_signature,
        pending_holders: BTreeSet::new(),
    }
}

/// Holder-side check before auto-deleting; forged or tampered requests are
/// ignored.
pub fn verify_deletion_request(req: &DeletionRequest, owner_pub: &PublicKey) -> bool {
    crypto::verify(
        owner_pub,
        &deletion_request_payload(req.owner, &req.scope),
        &req.owner_signature,
    )
}

pub fn sign_deletion_confirmation(
    holder: UserId,
    owner: UserId,
    scope: DeletionScope,
    holder_priv: &PrivateKey,
) -> DeletionConfirmation {
    let holder_signature =
        crypto::sign(holder_priv, &deletion_confirmation_payload(holder, owner, &scope));
    DeletionConfirmation {
        scope,
        confirming_holder: holder,
        holder_signature,
    }
}

pub fn verify_deletion_confirmation(
    conf: &DeletionConfirmation,
    owner: UserId,
    holder_pub: &PublicKey,
) -> bool {
    crypto::verify(
        holder_pub,
        &deletion_confirmation_payload(conf.confirming_holder, owner, &conf.scope),
        &conf.holder_signature,
    )
}

/// Structured-text record form used on the wire and in the escrow log.
pub fn deletion_request_record(req: &DeletionRequest) -> String {
    format!(
        "deletion-request owner={} scope={} sig={}",
        req.owner,
        req.scope.token(),
        crypto::biguint_to_hex(&req.owner_signature.value)
    )
}

pub fn deletion_confirmation_record(conf: &DeletionConfirmation) -> String {
    format!(
        "deletion-confirmation holder={} scope={} sig={}",
        conf.confirming_holder,
        conf.scope.token(),
        crypto::biguint_to_hex(&conf.holder_signature.value)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_key_pair;
    use crate::profile::{AccessRights, Level, PublicationType};

    fn meta(audience: AudienceSpec, members: &[UserId]) -> PublicationMetadata {
        let rights = AccessRights::default_for(&audience);
        PublicationMetadata {
            owner: UserId::apprenant(1),
            owner_pseudonym: "Alice".to_string(),
            content_id: 1,
            publication_type: PublicationType::Statut,
            science: "Maths".to_string(),
            level: Level::Lycee,
            audience,
            audience_name: None,
            audience_members: members.iter().copied().collect(),
            rights,
            via: None,
        }
    }

    fn ids(ns: &[u64]) -> BTreeSet<UserId> {
        ns.iter().map(|n| UserId::apprenant(*n)).collect()
    }

    #[test]
    fn public_goes_clear_to_server_only() {
        let m = meta(AudienceSpec::Public, &[]);
        let plan = placement_plan(&m, &ids(&[2, 3]));
        assert_eq!(plan, vec![(PlacementTarget::Server, ReplicaForm::Clear)]);
    }

    #[test]
    fn class_encrypts_to_all_friend_peers() {
        // Audience Camarades = {2, 3}; friends also include 4, who still
        // stores an encrypted replica as a duplication peer.
        let m = meta(AudienceSpec::Class("CC1".to_string()), &[UserId::apprenant(2), UserId::apprenant(3)]);
        let plan = placement_plan(&m, &ids(&[2, 3, 4]));
        assert_eq!(plan.len(), 3);
        for (target, form) in &plan {
            assert!(matches!(target, PlacementTarget::Peer(_)));
            assert_eq!(*form, ReplicaForm::Encrypted("CC1".to_string()));
        }
    }

    #[test]
    fn person_list_goes_clear_to_exactly_the_listed() {
        let listed = [UserId::apprenant(2), UserId::apprenant(5)];
        let m = meta(AudienceSpec::PersonList(listed.iter().copied().collect()), &listed);
        let plan = placement_plan(&m, &ids(&[2, 3, 4, 5]));
        let targets: BTreeSet<UserId> = plan
            .iter()
            .map(|(t, form)| {
                assert_eq!(*form, ReplicaForm::Clear);
                match t {
                    PlacementTarget::Peer(p) => *p,
                    PlacementTarget::Server => panic!("person-list content never hits the server"),
                }
            })
            .collect();
        assert_eq!(targets, listed.iter().copied().collect());
    }

    #[test]
    fn me_only_never_leaves_the_owner() {
        let m = meta(AudienceSpec::MeOnly, &[]);
        assert!(placement_plan(&m, &ids(&[2, 3])).is_empty());
    }

    #[test]
    fn render_requires_membership_before_key() {
        let bob = UserId::apprenant(2);
        let dave = UserId::apprenant(4);
        let m = meta(AudienceSpec::Class("CC2".to_string()), &[bob]);
        assert!(render_decision(bob, &m, true, false));
        // Bob in audience but key not yet delivered: hidden until it arrives.
        assert!(!render_decision(bob, &m, false, false));
        // Dave holds a leaked class key but is not in the audience ids.
        assert!(!render_decision(dave, &m, true, false));
        // Block wins even over membership.
        assert!(!render_decision(bob, &m, true, true));
    }

    #[test]
    fn render_public_and_me_only() {
        let owner = UserId::apprenant(1);
        let other = UserId::apprenant(9);
        let public = meta(AudienceSpec::Public, &[]);
        assert!(render_decision(other, &public, false, false));
        let me_only = meta(AudienceSpec::MeOnly, &[]);
        assert!(render_decision(owner, &me_only, false, false));
        assert!(!render_decision(other, &me_only, false, false));
    }

    #[test]
    fn access_in_audience_allows_with_encrypted_duplicate() {
        let bob = UserId::enseignant(80);
        let m = meta(AudienceSpec::Class("CC2".to_string()), &[bob]);
        assert_eq!(
            handle_access_request(bob, &m, true),
            AccessDecision::Allow {
                duplicate: Some(ReplicaForm::Encrypted("CC2".to_string()))
            }
        );
    }

    #[test]
    fn access_denied_friend_still_gets_encrypted_replica() {
        let bob = UserId::apprenant(2);
        let dave = UserId::apprenant(4);
        let m = meta(AudienceSpec::Class("CC2".to_string()), &[bob]);
        assert_eq!(
            handle_access_request(dave, &m, true),
            AccessDecision::DenyNotAuthorized {
                duplicate: Some(ReplicaForm::Encrypted("CC2".to_string()))
            }
        );
        // A stranger gets nothing at all.
        assert_eq!(
            handle_access_request(dave, &m, false),
            AccessDecision::DenyNotAuthorized { duplicate: None }
        );
    }

    #[test]
    fn access_person_list_never_duplicates_outside_the_list() {
        let bob = UserId::apprenant(2);
        let dave = UserId::apprenant(4);
        let m = meta(AudienceSpec::PersonList([bob].into_iter().collect()), &[bob]);
        assert_eq!(
            handle_access_request(bob, &m, true),
            AccessDecision::Allow {
                duplicate: Some(ReplicaForm::Clear)
            }
        );
        assert_eq!(
            handle_access_request(dave, &m, true),
            AccessDecision::DenyNotAuthorized { duplicate: None }
        );
    }

    #[test]
    fn reshare_intersects_audiences() {
        // Alice shares to Camarades = {Bob, Carol} with distribution allowed;
        // Bob re-shares to his Amis = {Carol, Dave}. Only Carol survives.
        let (bob, carol, dave) = (UserId::apprenant(2), UserId::apprenant(3), UserId::apprenant(4));
        let mut original = meta(AudienceSpec::Class("CC1".to_string()), &[bob, carol]);
        original.rights.distribution = Distribution::Allowed;
        let derived = reshare_metadata(
            &original,
            bob,
            "Bob",
            AudienceSpec::Class("CC7".to_string()),
            Some("Amis".to_string()),
            [carol, dave].into_iter().collect(),
            42,
        )
        .unwrap();
        assert_eq!(derived.audience_members, [carol].into_iter().collect());
        assert_eq!(derived.owner, bob);
        assert_eq!(derived.via, Some(original.owner));
        assert_eq!(derived.rights.distribution, Distribution::None);
        assert!(render_decision(carol, &derived, true, false));
        assert!(!render_decision(dave, &derived, true, false));
    }

    #[test]
    fn reshare_denied_without_distribution_right() {
        let original = meta(AudienceSpec::Class("CC1".to_string()), &[UserId::apprenant(2)]);
        assert_eq!(original.rights.distribution, Distribution::None);
        assert_eq!(
            reshare_metadata(
                &original,
                UserId::apprenant(2),
                "Bob",
                AudienceSpec::Public,
                None,
                BTreeSet::new(),
                7,
            ),
            Err(EngineError::NoDistribution)
        );
    }

    #[test]
    fn reshare_of_public_keeps_new_audience() {
        let mut original = meta(AudienceSpec::Public, &[]);
        original.rights.distribution = Distribution::Allowed;
        let members = ids(&[2, 3]);
        let derived = reshare_metadata(
            &original,
            UserId::apprenant(2),
            "Bob",
            AudienceSpec::PersonList(members.clone()),
            None,
            members.clone(),
            8,
        )
        .unwrap();
        assert_eq!(derived.audience_members, members);
    }

    #[test]
    fn reshare_restricted_intersects_with_restriction_list() {
        let (bob, carol) = (UserId::apprenant(2), UserId::apprenant(3));
        let mut original = meta(AudienceSpec::Class("CC1".to_string()), &[bob, carol]);
        original.rights.distribution = Distribution::Restricted([bob].into_iter().collect());
        let derived = reshare_metadata(
            &original,
            bob,
            "Bob",
            AudienceSpec::PersonList([bob, carol].into_iter().collect()),
            None,
            [bob, carol].into_iter().collect(),
            9,
        )
        .unwrap();
        assert_eq!(derived.audience_members, [bob].into_iter().collect());
    }

    #[test]
    fn reshare_viewers_are_a_subset_of_original_viewers() {
        // Brute force over every (audience, reshare-audience) pair on a
        // 5-user graph: the derived renderable set never exceeds the
        // original's.
        let users: Vec<UserId> = (1..=5).map(UserId::apprenant).collect();
        let subsets = |xs: &[UserId]| -> Vec<BTreeSet<UserId>> {
            (0..(1u32 << xs.len()))
                .map(|mask| {
                    xs.iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, u)| *u)
                        .collect()
                })
                .collect()
        };
        for orig_members in subsets(&users) {
            let mut original = meta(
                AudienceSpec::Class("CC1".to_string()),
                &orig_members.iter().copied().collect::<Vec<_>>(),
            );
            original.rights.distribution = Distribution::Allowed;
            let resharer = UserId::apprenant(2);
            if !render_decision(resharer, &original, true, false) {
                continue; // re-sharing presupposes the re-sharer can render
            }
            for new_members in subsets(&users) {
                let derived = reshare_metadata(
                    &original,
                    resharer,
                    "Bob",
                    AudienceSpec::Class("CC9".to_string()),
                    None,
                    new_members,
                    1,
                )
                .unwrap();
                for u in &users {
                    let derived_renders = render_decision(*u, &derived, true, false);
                    let original_renders = render_decision(*u, &original, true, false)
                        || *u == original.owner;
                    assert!(!derived_renders || original_renders);
                }
            }
        }
    }

    #[test]
    fn deletion_request_roundtrip_and_tamper() {
        let kp = generate_key_pair(64, 77).unwrap();
        let owner = UserId::apprenant(1);
        let req = sign_deletion_request(owner, DeletionScope::Content(17), &kp.private());
        assert!(verify_deletion_request(&req, &kp.public()));
        // Replaying the signature against a tampered content id fails.
        let mut tampered = req.clone();
        tampered.scope = DeletionScope::Content(18);
        assert!(!verify_deletion_request(&tampered, &kp.public()));
        // A forged signature from another key fails too.
        let other = generate_key_pair(64, 78).unwrap();
        let forged = sign_deletion_request(owner, DeletionScope::Content(17), &other.private());
        assert!(!verify_deletion_request(&forged, &kp.public()));
    }

    #[test]
    fn deletion_confirmation_verifies_against_holder_key() {
        let owner_kp = generate_key_pair(64, 79).unwrap();
        let holder_kp = generate_key_pair(64, 80).unwrap();
        let (owner, holder) = (UserId::apprenant(1), UserId::apprenant(2));
        let conf = sign_deletion_confirmation(
            holder,
            owner,
            DeletionScope::Content(17),
            &holder_kp.private(),
        );
        assert!(verify_deletion_confirmation(&conf, owner, &holder_kp.public()));
        assert!(!verify_deletion_confirmation(&conf, owner, &owner_kp.public()));
    }

    #[test]
    fn account_scope_records_serialize() {
        let kp = generate_key_pair(64, 81).unwrap();
        let req = sign_deletion_request(UserId::apprenant(1), DeletionScope::Account, &kp.private());
        let record = deletion_request_record(&req);
        assert!(record.starts_with("deletion-request owner=Apprenant_1 scope=account sig="));
    }
}
