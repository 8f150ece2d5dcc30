//! User profiles: connection classes with per-class keypairs, publication
//! metadata with audience and rights, the default privacy settings table,
//! and local-only self-test results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::crypto::KeyPair;

/// Minimum pseudonym length accepted at registration.
pub const MIN_PSEUDONYM_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Apprenant,
    Enseignant,
}

impl Role {
    pub fn prefix(&self) -> &'static str {
        match self {
            Role::Apprenant => "Apprenant",
            Role::Enseignant => "Enseignant",
        }
    }
}

/// A user identity: role prefix plus a simulation-unique numeric id.
/// Pseudonyms are profile data, kept in the directory and the owner profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId {
    pub role: Role,
    pub numeric_id: u64,
}

impl UserId {
    pub fn apprenant(numeric_id: u64) -> Self {
        UserId {
            role: Role::Apprenant,
            numeric_id,
        }
    }

    pub fn enseignant(numeric_id: u64) -> Self {
        UserId {
            role: Role::Enseignant,
            numeric_id,
        }
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.role.prefix(), self.numeric_id)
    }
}

impl FromStr for UserId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let (prefix, id) = s.rsplit_once('_').ok_or(())?;
        let role = match prefix {
            "Apprenant" => Role::Apprenant,
            "Enseignant" => Role::Enseignant,
            _ => return Err(()),
        };
        Ok(UserId {
            role,
            numeric_id: id.parse().map_err(|_| ())?,
        })
    }
}

/// A named friend list carrying its own keypair; the unit of encrypted
/// sharing.
#[derive(Debug, Clone)]
pub struct ConnectionClass {
    pub class_id: String,
    pub name: String,
    pub members: BTreeSet<UserId>,
    pub keypair: KeyPair,
}

/// Who may render a publication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AudienceSpec {
    MeOnly,
    Class(String),
    PersonList(BTreeSet<UserId>),
    Public,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protection {
    Clear,
    Encrypted,
}

impl Protection {
    pub fn label(&self) -> &'static str {
        match self {
            Protection::Clear => "Clair",
            Protection::Encrypted => "Crypté",
        }
    }
}

/// Whether viewers may re-share, and to whom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Distribution {
    None,
    Allowed,
    Restricted(BTreeSet<UserId>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRights {
    pub distribution: Distribution,
    pub replication_protection: Protection,
    pub duplication_authorized: bool,
}

impl AccessRights {
    /// Public publications default to redistribution allowed.
    pub fn default_for(audience: &AudienceSpec) -> Self {
        AccessRights {
            distribution: match audience {
                AudienceSpec::Public => Distribution::Allowed,
                _ => Distribution::None,
            },
            replication_protection: match audience {
                AudienceSpec::Class(_) => Protection::Encrypted,
                _ => Protection::Clear,
            },
            duplication_authorized: !matches!(audience, AudienceSpec::MeOnly),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PublicationType {
    DemandeAide,
    Information,
    Document,
    Statut,
}

impl PublicationType {
    pub fn label(&self) -> &'static str {
        match self {
            PublicationType::DemandeAide => "demande d'aide",
            PublicationType::Information => "information",
            PublicationType::Document => "document",
            PublicationType::Statut => "statut",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Primaire,
    Cem,
    Lycee,
}

impl Level {
    pub fn label(&self) -> &'static str {
        match self {
            Level::Primaire => "Primaire",
            Level::Cem => "CEM",
            Level::Lycee => "Lycée",
        }
    }
}

impl FromStr for Level {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "Primaire" | "primaire" => Ok(Level::Primaire),
            "CEM" | "cem" => Ok(Level::Cem),
            "Lycée" | "Lycee" | "lycee" => Ok(Level::Lycee),
            _ => Err(()),
        }
    }
}

/// Metadata attached to every publication. The audience member list is
/// resolved at publish time (Fig. 33 style); the audience name is stripped on
/// duplication, only the ids travel with replicas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicationMetadata {
    pub owner: UserId,
    pub owner_pseudonym: String,
    pub content_id: u64,
    pub publication_type: PublicationType,
    pub science: String,
    pub level: Level,
    pub audience: AudienceSpec,
    pub audience_name: Option<String>,
    pub audience_members: BTreeSet<UserId>,
    pub rights: AccessRights,
    /// Original owner when this is a re-share ("Bob via Alice").
    pub via: Option<UserId>,
}

impl PublicationMetadata {
    /// Copy prepared for duplication on another peer: the audience list name
    /// is dropped, only member ids remain.
    pub fn for_duplication(&self) -> Self {
        let mut copy = self.clone();
        copy.audience_name = None;
        copy
    }
}

/// A shared content item: plaintext at the owner, metadata everywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publication {
    pub metadata: PublicationMetadata,
    pub body: Vec<u8>,
}

/// Local-only learning record; never serialized into any wire message or
/// server store.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestResult {
    pub owner: UserId,
    pub test_id: String,
    /// Score in [0, 1].
    pub score: f64,
    pub taken_at: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("member is in the blocked list")]
    BlockedMember,
    #[error("member is in the removed list")]
    RemovedMember,
    #[error("member is not a friend")]
    NotAFriend,
    #[error("unknown connection class {0}")]
    UnknownClass(String),
    #[error("score must lie in [0, 1]")]
    ScoreOutOfRange,
}

// ---------------------------------------------------------------------------
// Default privacy settings (the nine-row table)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ContentClass {
    Identite,
    AttributsDemographiques,
    ActivitesReseautage,
    ActivitesApprentissage,
    CriteresComparaison,
    Interets,
    Publications,
    Certifications,
    Connexions,
}

impl ContentClass {
    pub const ALL: [ContentClass; 9] = [
        ContentClass::Identite,
        ContentClass::AttributsDemographiques,
        ContentClass::ActivitesReseautage,
        ContentClass::ActivitesApprentissage,
        ContentClass::CriteresComparaison,
        ContentClass::Interets,
        ContentClass::Publications,
        ContentClass::Certifications,
        ContentClass::Connexions,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ContentClass::Identite => "Identité",
            ContentClass::AttributsDemographiques => "Attributs démographiques",
            ContentClass::ActivitesReseautage => "Activités de réseautage social",
            ContentClass::ActivitesApprentissage => "Activités liées à l'apprentissage",
            ContentClass::CriteresComparaison => "Critères de comparaison",
            ContentClass::Interets => "Ses intérêts",
            ContentClass::Publications => "Les publications",
            ContentClass::Certifications => "Certification et diplôme",
            ContentClass::Connexions => "Les connexions",
        }
    }
}

/// Audience column of the default-settings table. Unlike a publication
/// audience this may span several classes ("Camarades et Famille").
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SettingAudience {
    MeOnly,
    Classes(Vec<&'static str>),
}

impl SettingAudience {
    pub fn label(&self) -> String {
        match self {
            SettingAudience::MeOnly => "Moi-seulement".to_string(),
            SettingAudience::Classes(names) => names.join(" et "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SettingRow {
    pub protection: Protection,
    pub audience: SettingAudience,
}

impl SettingRow {
    pub fn protection_label(&self) -> &'static str {
        match self.protection {
            Protection::Clear => "Droits d'accès (Clair)",
            Protection::Encrypted => "Droits d'accès + Chiffrement",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileSettings {
    rows: BTreeMap<ContentClass, SettingRow>,
}

impl ProfileSettings {
    pub fn row(&self, class: ContentClass) -> &SettingRow {
        &self.rows[&class]
    }

    pub fn rows(&self) -> impl Iterator<Item = (ContentClass, &SettingRow)> {
        ContentClass::ALL.iter().map(move |c| (*c, &self.rows[c]))
    }
}

/// The default privacy settings applied to every new profile.
pub fn default_settings() -> ProfileSettings {
    use ContentClass::*;
    use Protection::*;
    let row = |p, a| SettingRow {
        protection: p,
        audience: a,
    };
    let class = |names: &[&'static str]| SettingAudience::Classes(names.to_vec());
    let mut rows = BTreeMap::new();
    rows.insert(Identite, row(Clear, class(&["Famille"])));
    rows.insert(AttributsDemographiques, row(Clear, class(&["Famille"])));
    rows.insert(ActivitesReseautage, row(Encrypted, class(&["Amis"])));
    rows.insert(ActivitesApprentissage, row(Clear, SettingAudience::MeOnly));
    rows.insert(CriteresComparaison, row(Clear, SettingAudience::MeOnly));
    rows.insert(Interets, row(Encrypted, class(&["Amis"])));
    rows.insert(Publications, row(Encrypted, class(&["Amis"])));
    rows.insert(Certifications, row(Encrypted, class(&["Camarades", "Famille"])));
    rows.insert(Connexions, row(Clear, SettingAudience::MeOnly));
    ProfileSettings { rows }
}

/// Names of the user-managed default connection classes, each of which gets
/// a keypair.
pub const DEFAULT_CLASS_NAMES: [&str; 5] =
    ["Amis", "Camarades", "Aidants préférés", "Enseignants", "Famille"];

/// A user's local profile state: classes, friend lists and learning records.
#[derive(Debug, Clone)]
pub struct Profile {
    pub pseudonym: String,
    pub settings: ProfileSettings,
    pub classes: BTreeMap<String, ConnectionClass>,
    pub friends: BTreeSet<UserId>,
    pub blocked: BTreeSet<UserId>,
    pub removed: BTreeSet<UserId>,
    pub subscribers: BTreeSet<UserId>,
    pub self_tests: Vec<SelfTestResult>,
    next_content_id: u64,
}

impl Profile {
    pub fn new(pseudonym: String) -> Self {
        Profile {
            pseudonym,
            settings: default_settings(),
            classes: BTreeMap::new(),
            friends: BTreeSet::new(),
            blocked: BTreeSet::new(),
            removed: BTreeSet::new(),
            subscribers: BTreeSet::new(),
            self_tests: Vec::new(),
            next_content_id: 1,
        }
    }

    pub fn allocate_content_id(&mut self) -> u64 {
        let id = self.next_content_id;
        self.next_content_id += 1;
        id
    }

    pub fn class(&self, class_id: &str) -> Result<&ConnectionClass, ProfileError> {
        self.classes
            .get(class_id)
            .ok_or_else(|| ProfileError::UnknownClass(class_id.to_string()))
    }

    pub fn class_by_name(&self, name: &str) -> Option<&ConnectionClass> {
        self.classes.values().find(|c| c.name == name)
    }

    /// Membership check with the blocked/removed precondition; idempotent.
    pub fn add_to_class(&mut self, member: UserId, class_id: &str) -> Result<bool, ProfileError> {
        if self.blocked.contains(&member) {
            return Err(ProfileError::BlockedMember);
        }
        if self.removed.contains(&member) {
            return Err(ProfileError::RemovedMember);
        }
        if !self.friends.contains(&member) {
            return Err(ProfileError::NotAFriend);
        }
        let class = self
            .classes
            .get_mut(class_id)
            .ok_or_else(|| ProfileError::UnknownClass(class_id.to_string()))?;
        Ok(class.members.insert(member))
    }

    /// No-op when the member is absent; returns whether something changed.
    pub fn remove_from_class(&mut self, member: UserId, class_id: &str) -> bool {
        self.classes
            .get_mut(class_id)
            .map(|c| c.members.remove(&member))
            .unwrap_or(false)
    }

    pub fn record_self_test(&mut self, result: SelfTestResult) -> Result<(), ProfileError> {
        if !(0.0..=1.0).contains(&result.score) {
            return Err(ProfileError::ScoreOutOfRange);
        }
        self.self_tests.push(result);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Metadata XML (canonical serialization; the element names keep their
// historical spellings, misspellings included)
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetadataParseError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unknown element <{0}>")]
    UnknownElement(String),
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn xml_unescape(s: &str) -> String {
    s.replace("&quot;", "\"")
        .replace("&gt;", ">")
        .replace("&lt;", "<")
        .replace("&amp;", "&")
}

/// Canonical serialization of publication metadata.
pub fn serialize_metadata(m: &PublicationMetadata) -> String {
    let mut out = String::new();
    out.push_str("<PUBLICATION_METADATA>\n");
    let owner_attr = match m.owner.role {
        Role::Apprenant => "ID_Apprenant",
        Role::Enseignant => "ID_Enseignant",
    };
    out.push_str(&format!(
        "  <OWNER {}=\"{}\" pseudonym=\"{}\"/>\n",
        owner_attr,
        m.owner.numeric_id,
        xml_escape(&m.owner_pseudonym)
    ));
    if let Some(via) = &m.via {
        out.push_str(&format!("  <VIA>{}</VIA>\n", via));
    }
    out.push_str(&format!(
        "  <ID_TypeContenu>{}</ID_TypeContenu>\n",
        m.publication_type.label()
    ));
    out.push_str(&format!("  <Content_ID>{}</Content_ID>\n", m.content_id));
    out.push_str(&format!("  <Science>{}</Science>\n", xml_escape(&m.science)));
    out.push_str(&format!("  <Level>{}</Level>\n", m.level.label()));

    let (kind, class_attr) = match &m.audience {
        AudienceSpec::MeOnly => ("Moi-seulement", None),
        AudienceSpec::Class(id) => ("Classe de Connexion", Some(id.clone())),
        AudienceSpec::PersonList(_) => ("Liste de personnes", None),
        AudienceSpec::Public => ("Public", None),
    };
    out.push_str("  <AUDIANCE");
    if let Some(name) = &m.audience_name {
        out.push_str(&format!(" name=\"{}\"", xml_escape(name)));
    }
    out.push_str(&format!(" type=\"{}\"", kind));
    if let Some(id) = class_attr {
        out.push_str(&format!(" Audiance_ID=\"{}\"", xml_escape(&id)));
    }
    if m.audience_members.is_empty() {
        out.push_str("/>\n");
    } else {
        out.push_str(">\n    <LISTE>\n");
        for member in &m.audience_members {
            out.push_str(&format!("      <USER_ID>{}</USER_ID>\n", member));
        }
        out.push_str("    </LISTE>\n  </AUDIANCE>\n");
    }

    out.push_str("  <RIGHTS>\n    <ACCESS/>\n");
    out.push_str(&format!(
        "    <RELPLICATION_PROTECTION>{}</RELPLICATION_PROTECTION>\n",
        m.rights.replication_protection.label()
    ));
    match &m.rights.distribution {
        Distribution::None => out.push_str("    <distribution>Non</distribution>\n"),
        Distribution::Allowed => out.push_str("    <distribution>Oui</distribution>\n"),
        Distribution::Restricted(list) => {
            out.push_str("    <distribution>Restreinte</distribution>\n");
            out.push_str("    <DISTRIBUTION_LISTE>\n");
            for member in list {
                out.push_str(&format!("      <USER_ID>{}</USER_ID>\n", member));
            }
            out.push_str("    </DISTRIBUTION_LISTE>\n");
        }
    }
    out.push_str(&format!(
        "    <DUPLICATION_AUTORISATION>{}</DUPLICATION_AUTORISATION>\n",
        if m.rights.duplication_authorized { "Oui" } else { "Non" }
    ));
    out.push_str("  </RIGHTS>\n</PUBLICATION_METADATA>\n");
    out
}

// A tag as read by the tokenizer below.
#[derive(Debug)]
struct Tag {
    name: String,
    attrs: Vec<(String, String)>,
    self_closing: bool,
    closing: bool,
    text_after: String,
}

fn tokenize(xml: &str) -> Result<Vec<Tag>, MetadataParseError> {
    let malformed = |msg: &str| MetadataParseError::Malformed(msg.to_string());
    let mut tags = Vec::new();
    let mut rest = xml.trim_start();
    while !rest.is_empty() {
        if !rest.starts_with('<') {
            return Err(malformed("expected '<'"));
        }
        let end = rest.find('>').ok_or_else(|| malformed("unterminated tag"))?;
        let inner = &rest[1..end];
        rest = &rest[end + 1..];

        let closing = inner.starts_with('/');
        let inner = inner.strip_prefix('/').unwrap_or(inner);
        let self_closing = inner.ends_with('/');
        let inner = inner.strip_suffix('/').unwrap_or(inner).trim();

        let (name, attr_str) = match inner.find(char::is_whitespace) {
            Some(pos) => (&inner[..pos], inner[pos..].trim()),
            None => (inner, ""),
        };
        if name.is_empty() {
            return Err(malformed("empty tag name"));
        }
        let mut attrs = Vec::new();
        let mut a = attr_str;
        while !a.is_empty() {
            let eq = a.find('=').ok_or_else(|| malformed("attribute without value"))?;
            let key = a[..eq].trim().to_string();
            let after = a[eq + 1..].trim_start();
            if !after.starts_with('"') {
                return Err(malformed("unquoted attribute value"));
            }
            let close = after[1..]
                .find('"')
                .ok_or_else(|| malformed("unterminated attribute value"))?;
            attrs.push((key, xml_unescape(&after[1..1 + close])));
            a = after[close + 2..].trim_start();
        }

        let text_end = rest.find('<').unwrap_or(rest.len());
        let text_after = xml_unescape(rest[..text_end].trim());
        rest = rest[text_end..].trim_start();

        tags.push(Tag {
            name: name.to_string(),
            attrs,
            self_closing,
            closing,
            text_after,
        });
    }
    Ok(tags)
}

/// Parses the canonical metadata document back into a structure.
pub fn parse_metadata(xml: &str) -> Result<PublicationMetadata, MetadataParseError> {
    let malformed = |msg: &str| MetadataParseError::Malformed(msg.to_string());
    let tags = tokenize(xml)?;
    let mut iter = tags.iter().peekable();

    let root = iter.next().ok_or_else(|| malformed("empty document"))?;
    if root.name != "PUBLICATION_METADATA" || root.closing || root.self_closing {
        return Err(malformed("missing <PUBLICATION_METADATA> root"));
    }

    let mut owner = None;
    let mut owner_pseudonym = String::new();
    let mut via = None;
    let mut publication_type = None;
    let mut content_id = None;
    let mut science = None;
    let mut level = None;
    let mut audience_kind: Option<String> = None;
    let mut audience_name = None;
    let mut audience_class_id = None;
    let mut audience_members = BTreeSet::new();
    let mut protection = None;
    let mut distribution_kind: Option<String> = None;
    let mut distribution_list = BTreeSet::new();
    let mut duplication = None;

    // Which LISTE we are inside of, if any.
    enum ListCtx {
        Audience,
        Distribution,
        None,
    }
    let mut list_ctx = ListCtx::None;

    for tag in iter {
        if tag.closing {
            continue;
        }
        match tag.name.as_str() {
            "OWNER" => {
                for (k, v) in &tag.attrs {
                    match k.as_str() {
                        "ID_Apprenant" => {
                            owner = Some(UserId::apprenant(
                                v.parse().map_err(|_| malformed("bad owner id"))?,
                            ))
                        }
                        "ID_Enseignant" => {
                            owner = Some(UserId::enseignant(
                                v.parse().map_err(|_| malformed("bad owner id"))?,
                            ))
                        }
                        "pseudonym" => owner_pseudonym = v.clone(),
                        other => {
                            return Err(MetadataParseError::UnknownElement(format!(
                                "OWNER@{other}"
                            )))
                        }
                    }
                }
            }
            "VIA" => {
                via = Some(
                    tag.text_after
                        .parse::<UserId>()
                        .map_err(|_| malformed("bad VIA user id"))?,
                )
            }
            "ID_TypeContenu" => {
                publication_type = Some(match tag.text_after.as_str() {
                    "demande d'aide" => PublicationType::DemandeAide,
                    "information" => PublicationType::Information,
                    "document" => PublicationType::Document,
                    "statut" => PublicationType::Statut,
                    other => return Err(malformed(&format!("unknown publication type {other}"))),
                })
            }
            "Content_ID" => {
                content_id =
                    Some(tag.text_after.parse().map_err(|_| malformed("bad content id"))?)
            }
            "Science" => science = Some(tag.text_after.clone()),
            "Level" => {
                level = Some(
                    tag.text_after
                        .parse::<Level>()
                        .map_err(|_| malformed("unknown level"))?,
                )
            }
            "AUDIANCE" => {
                for (k, v) in &tag.attrs {
                    match k.as_str() {
                        "name" => audience_name = Some(v.clone()),
                        "type" => audience_kind = Some(v.clone()),
                        "Audiance_ID" => audience_class_id = Some(v.clone()),
                        other => {
                            return Err(MetadataParseError::UnknownElement(format!(
                                "AUDIANCE@{other}"
                            )))
                        }
                    }
                }
                if !tag.self_closing {
                    list_ctx = ListCtx::Audience;
                }
            }
            "RIGHTS" | "ACCESS" => {}
            "LISTE" => {}
            "DISTRIBUTION_LISTE" => list_ctx = ListCtx::Distribution,
            "USER_ID" => {
                let member = tag
                    .text_after
                    .parse::<UserId>()
                    .map_err(|_| malformed("bad USER_ID"))?;
                match list_ctx {
                    ListCtx::Audience => {
                        audience_members.insert(member);
                    }
                    ListCtx::Distribution => {
                        distribution_list.insert(member);
                    }
                    ListCtx::None => return Err(malformed("USER_ID outside a list")),
                }
            }
            "RELPLICATION_PROTECTION" => {
                protection = Some(match tag.text_after.as_str() {
                    "Clair" => Protection::Clear,
                    "Crypté" => Protection::Encrypted,
                    other => return Err(malformed(&format!("unknown protection {other}"))),
                })
            }
            "distribution" => distribution_kind = Some(tag.text_after.clone()),
            "DUPLICATION_AUTORISATION" => {
                duplication = Some(match tag.text_after.as_str() {
                    "Oui" => true,
                    "Non" => false,
                    other => return Err(malformed(&format!("unknown duplication flag {other}"))),
                })
            }
            other => return Err(MetadataParseError::UnknownElement(other.to_string())),
        }
    }

    let audience = match audience_kind.as_deref() {
        Some("Moi-seulement") => AudienceSpec::MeOnly,
        Some("Classe de Connexion") => AudienceSpec::Class(
            audience_class_id.ok_or_else(|| malformed("class audience without Audiance_ID"))?,
        ),
        Some("Liste de personnes") => AudienceSpec::PersonList(audience_members.clone()),
        Some("Public") => AudienceSpec::Public,
        Some(other) => return Err(malformed(&format!("unknown audience type {other}"))),
        None => return Err(malformed("missing <AUDIANCE>")),
    };
    let distribution = match distribution_kind.as_deref() {
        Some("Non") => Distribution::None,
        Some("Oui") => Distribution::Allowed,
        Some("Restreinte") => Distribution::Restricted(distribution_list),
        Some(other) => return Err(malformed(&format!("unknown distribution {other}"))),
        None => return Err(malformed("missing <distribution>")),
    };

    Ok(PublicationMetadata {
        owner: owner.ok_or_else(|| malformed("missing <OWNER>"))?,
        owner_pseudonym,
        content_id: content_id.ok_or_else(|| malformed("missing <Content_ID>"))?,
        publication_type: publication_type
            .ok_or_else(|| malformed("missing <ID_TypeContenu>"))?,
        science: science.ok_or_else(|| malformed("missing <Science>"))?,
        level: level.ok_or_else(|| malformed("missing <Level>"))?,
        audience,
        audience_name,
        audience_members,
        rights: AccessRights {
            distribution,
            replication_protection: protection
                .ok_or_else(|| malformed("missing <RELPLICATION_PROTECTION>"))?,
            duplication_authorized: duplication
                .ok_or_else(|| malformed("missing <DUPLICATION_AUTORISATION>"))?,
        },
        via,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The Fig. 32 record: Marwa's help request shared with her teachers.
    pub(crate) fn fig32_metadata() -> PublicationMetadata {
        let members: BTreeSet<UserId> = [
            UserId::enseignant(80),
            UserId::enseignant(1088),
            UserId::enseignant(4852),
        ]
        .into_iter()
        .collect();
        PublicationMetadata {
            owner: UserId::apprenant(5484),
            owner_pseudonym: "Marwa".to_string(),
            content_id: 17,
            publication_type: PublicationType::DemandeAide,
            science: "Mathématique".to_string(),
            level: Level::Lycee,
            audience: AudienceSpec::Class("CC2".to_string()),
            audience_name: Some("Mes enseignants".to_string()),
            audience_members: members,
            rights: AccessRights {
                distribution: Distribution::None,
                replication_protection: Protection::Encrypted,
                duplication_authorized: true,
            },
            via: None,
        }
    }

    #[test]
    fn fig32_record_roundtrips() {
        let m = fig32_metadata();
        let xml = serialize_metadata(&m);
        assert_eq!(parse_metadata(&xml).unwrap(), m);
    }

    #[test]
    fn fig32_fixture_is_byte_exact() {
        let expected = include_str!("../fixtures/fig32_metadata.xml");
        assert_eq!(serialize_metadata(&fig32_metadata()), expected);
    }

    #[test]
    fn duplication_strips_audience_name_keeps_ids() {
        let m = fig32_metadata();
        let dup = m.for_duplication();
        assert_eq!(dup.audience_name, None);
        assert_eq!(dup.audience_members, m.audience_members);
        let xml = serialize_metadata(&dup);
        assert!(!xml.contains("Mes enseignants"));
        assert!(xml.contains("Enseignant_80"));
        assert!(xml.contains("Enseignant_1088"));
        assert!(xml.contains("Enseignant_4852"));
        assert_eq!(parse_metadata(&xml).unwrap(), dup);
    }

    #[test]
    fn missing_owner_is_malformed() {
        let xml = serialize_metadata(&fig32_metadata()).replace(
            "  <OWNER ID_Apprenant=\"5484\" pseudonym=\"Marwa\"/>\n",
            "",
        );
        assert_eq!(
            parse_metadata(&xml),
            Err(MetadataParseError::Malformed("missing <OWNER>".to_string()))
        );
    }

    #[test]
    fn unknown_element_is_reported_by_name() {
        let xml = serialize_metadata(&fig32_metadata())
            .replace("<Science>", "<SCIENCES>")
            .replace("</Science>", "</SCIENCES>");
        match parse_metadata(&xml) {
            Err(MetadataParseError::UnknownElement(name)) => assert_eq!(name, "SCIENCES"),
            other => panic!("expected unknown-element error, got {other:?}"),
        }
    }

    #[test]
    fn personlist_and_restricted_distribution_roundtrip() {
        let mut m = fig32_metadata();
        let list: BTreeSet<UserId> =
            [UserId::apprenant(1), UserId::apprenant(2)].into_iter().collect();
        m.audience = AudienceSpec::PersonList(list.clone());
        m.audience_name = None;
        m.audience_members = list;
        m.rights.distribution =
            Distribution::Restricted([UserId::apprenant(1)].into_iter().collect());
        m.rights.replication_protection = Protection::Clear;
        m.via = Some(UserId::apprenant(9));
        let xml = serialize_metadata(&m);
        assert_eq!(parse_metadata(&xml).unwrap(), m);
    }

    #[test]
    fn table4_default_rows() {
        let s = default_settings();
        let expect = |c: ContentClass, prot: &str, aud: &str| {
            let row = s.row(c);
            assert_eq!(row.protection_label(), prot, "{}", c.label());
            assert_eq!(row.audience.label(), aud, "{}", c.label());
        };
        expect(ContentClass::Identite, "Droits d'accès (Clair)", "Famille");
        expect(
            ContentClass::AttributsDemographiques,
            "Droits d'accès (Clair)",
            "Famille",
        );
        expect(
            ContentClass::ActivitesReseautage,
            "Droits d'accès + Chiffrement",
            "Amis",
        );
        expect(
            ContentClass::ActivitesApprentissage,
            "Droits d'accès (Clair)",
            "Moi-seulement",
        );
        expect(
            ContentClass::CriteresComparaison,
            "Droits d'accès (Clair)",
            "Moi-seulement",
        );
        expect(ContentClass::Interets, "Droits d'accès + Chiffrement", "Amis");
        expect(ContentClass::Publications, "Droits d'accès + Chiffrement", "Amis");
        expect(
            ContentClass::Certifications,
            "Droits d'accès + Chiffrement",
            "Camarades et Famille",
        );
        expect(ContentClass::Connexions, "Droits d'accès (Clair)", "Moi-seulement");
    }

    #[test]
    fn self_test_score_bounds() {
        let mut p = Profile::new("Marwa".to_string());
        let owner = UserId::apprenant(1);
        let result = |score, at| SelfTestResult {
            owner,
            test_id: "t1".to_string(),
            score,
            taken_at: at,
        };
        assert_eq!(p.record_self_test(result(0.5, 1)), Ok(()));
        assert_eq!(p.record_self_test(result(0.7, 2)), Ok(()));
        assert_eq!(p.self_tests.len(), 2);
        assert_eq!(
            p.record_self_test(result(1.5, 3)),
            Err(ProfileError::ScoreOutOfRange)
        );
    }

    #[test]
    fn class_membership_preconditions() {
        let mut p = Profile::new("alice".to_string());
        let kp = crate::crypto::generate_key_pair(32, 1).unwrap();
        p.classes.insert(
            "CC2".to_string(),
            ConnectionClass {
                class_id: "CC2".to_string(),
                name: "Camarades".to_string(),
                members: BTreeSet::new(),
                keypair: kp,
            },
        );
        let bob = UserId::apprenant(2);
        assert_eq!(p.add_to_class(bob, "CC2"), Err(ProfileError::NotAFriend));
        p.friends.insert(bob);
        assert_eq!(p.add_to_class(bob, "CC2"), Ok(true));
        assert_eq!(p.add_to_class(bob, "CC2"), Ok(false)); // idempotent
        p.blocked.insert(bob);
        assert_eq!(p.add_to_class(bob, "CC2"), Err(ProfileError::BlockedMember));
        assert!(p.remove_from_class(bob, "CC2"));
        assert!(!p.remove_from_class(bob, "CC2"));
    }

    #[test]
    fn user_id_display_parse() {
        let id = UserId::enseignant(1088);
        assert_eq!(id.to_string(), "Enseignant_1088");
        assert_eq!("Enseignant_1088".parse::<UserId>(), Ok(id));
        assert!("Inconnu_3".parse::<UserId>().is_err());
    }

    proptest::proptest! {
        // Serialization is canonical and parse inverts it, including the
        // XML-escaped characters in free-text fields.
        #[test]
        fn metadata_serialization_roundtrips(
            teacher in proptest::bool::ANY,
            owner_id in 1u64..10_000,
            pseudonym in "[a-zA-Z0-9&<>\"]{1,12}",
            science in "[a-zA-Z0-9&<>\"]{1,12}",
            content_id in 1u64..1_000,
            type_idx in 0usize..4,
            level_idx in 0usize..3,
            audience_idx in 0usize..4,
            member_bits in 0u32..32,
            via in proptest::option::of(1u64..100u64),
            dist_idx in 0usize..3,
            restrict_bits in 0u32..32,
            encrypted in proptest::bool::ANY,
            dup in proptest::bool::ANY,
        ) {
            let owner = if teacher {
                UserId::enseignant(owner_id)
            } else {
                UserId::apprenant(owner_id)
            };
            let members: BTreeSet<UserId> = (0..5)
                .filter(|i| member_bits & (1 << i) != 0)
                .map(|i| UserId::apprenant(100 + i))
                .collect();
            let (audience, audience_name, audience_members) = match audience_idx {
                0 => (AudienceSpec::MeOnly, None, BTreeSet::new()),
                1 => (AudienceSpec::Public, None, BTreeSet::new()),
                2 => (
                    AudienceSpec::Class("CC3".to_string()),
                    Some("Aidants préférés".to_string()),
                    members,
                ),
                _ => (AudienceSpec::PersonList(members.clone()), None, members),
            };
            let distribution = match dist_idx {
                0 => Distribution::None,
                1 => Distribution::Allowed,
                _ => Distribution::Restricted(
                    (0..5)
                        .filter(|i| restrict_bits & (1 << i) != 0)
                        .map(|i| UserId::enseignant(200 + i))
                        .collect(),
                ),
            };
            let meta = PublicationMetadata {
                owner,
                owner_pseudonym: pseudonym,
                content_id,
                publication_type: [
                    PublicationType::DemandeAide,
                    PublicationType::Information,
                    PublicationType::Document,
                    PublicationType::Statut,
                ][type_idx],
                science,
                level: [Level::Primaire, Level::Cem, Level::Lycee][level_idx],
                audience,
                audience_name,
                audience_members,
                rights: AccessRights {
                    distribution,
                    replication_protection: if encrypted {
                        Protection::Encrypted
                    } else {
                        Protection::Clear
                    },
                    duplication_authorized: dup,
                },
                via: via.map(UserId::apprenant),
            };
            let xml = serialize_metadata(&meta);
            proptest::prop_assert_eq!(parse_metadata(&xml), Ok(meta));
        }
    }
}
