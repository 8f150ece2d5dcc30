//! Synchronous helper search, offer ranking, post-session evaluations, and
//! reputation thresholds.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::profile::{Level, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HelperGrade {
    Enseignant,
    Apprenant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherKind {
    Benevole,
    Freelancer,
}

/// Helper mastery level requested ("élevé" or "intermédiaire").
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HelperLevel {
    Eleve,
    Intermediaire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerLevel {
    Eleve,
    Intermediaire,
    Faible,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchingError {
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("teacher kind must be present exactly when the requested grade is Enseignant")]
    TeacherKindMismatch,
    #[error("max learners must lie in [2, 10]")]
    MaxLearnersOutOfRange,
    #[error("evaluations already recorded for this session")]
    DuplicateEvaluation,
    #[error("users cannot report themselves")]
    SelfReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelpRequest {
    pub requester: UserId,
    pub level: Level,
    pub study_year: u32,
    pub subject: String,
    pub chapter: String,
    pub helper_grade: HelperGrade,
    pub teacher_kind: Option<TeacherKind>,
    pub helper_level: HelperLevel,
    pub duration_minutes: u32,
    pub description: Option<String>,
}

impl HelpRequest {
    pub fn validate(&self) -> Result<(), MatchingError> {
        if self.duration_minutes == 0 {
            return Err(MatchingError::ZeroDuration);
        }
        let wants_teacher = self.helper_grade == HelperGrade::Enseignant;
        if wants_teacher != self.teacher_kind.is_some() {
            return Err(MatchingError::TeacherKindMismatch);
        }
        Ok(())
    }

    /// The kind a provider must offer: learner helpers are always volunteers.
    pub fn requested_kind(&self) -> TeacherKind {
        self.teacher_kind.unwrap_or(TeacherKind::Benevole)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelperPreferences {
    pub accepting: bool,
    pub levels: BTreeSet<Level>,
    pub subjects: BTreeSet<String>,
    pub max_duration: u32,
    pub max_concurrent: u32,
    pub kind: TeacherKind,
}

impl Default for HelperPreferences {
    fn default() -> Self {
        HelperPreferences {
            accepting: false,
            levels: BTreeSet::new(),
            subjects: BTreeSet::new(),
            max_duration: 0,
            max_concurrent: 1,
            kind: TeacherKind::Benevole,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CourseAnnouncement {
    pub title: String,
    pub level: Level,
    pub study_year: u32,
    pub subject: String,
    pub unit: String,
    pub max_learners: u32,
    pub learner_level: LearnerLevel,
    pub datetime: String,
    pub duration_minutes: u32,
}

impl CourseAnnouncement {
    pub fn validate(&self) -> Result<(), MatchingError> {
        if !(2..=10).contains(&self.max_learners) {
            return Err(MatchingError::MaxLearnersOutOfRange);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HelpeeRating {
    TresUtile,
    Utile,
    PasDuToutUtile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HelperRating {
    Excellent,
    Bon,
    Faible,
}

/// End-of-session evaluations, exchanged between the two parties only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvaluationPair {
    pub helpee_rating: HelpeeRating,
    pub helpee_again: bool,
    pub helper_rating: HelperRating,
    pub helper_again: bool,
}

/// Provider decision: does the request fit the helper's declared
/// specifications?
pub fn match_request_to_prefs(req: &HelpRequest, prefs: &HelperPreferences) -> bool {
    prefs.accepting
        && prefs.subjects.contains(&req.subject)
        && prefs.levels.contains(&req.level)
        && req.duration_minutes <= prefs.max_duration
        && prefs.kind == req.requested_kind()
}

/// An offer as it crosses the wire: only the offerer id and a free-text
/// proposal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelpOffer {
    pub offerer: UserId,
    pub proposal: String,
}

/// Requester-side filtering and ranking. Blocked and removed users are
/// dropped; the rest sort by the requester's past ratings of each offerer
/// (never-met offerers rank between positive and negative history), ties
/// broken by arrival order.
pub fn filter_and_rank_offers(
    offers: &[HelpOffer],
    blocked: &BTreeSet<UserId>,
    removed: &BTreeSet<UserId>,
    past_ratings: &BTreeMap<UserId, HelpeeRating>,
) -> Vec<HelpOffer> {
    let rank = |offer: &HelpOffer| match past_ratings.get(&offer.offerer) {
        Some(HelpeeRating::TresUtile) => 0u8,
        Some(HelpeeRating::Utile) => 1,
        None => 2,
        Some(HelpeeRating::PasDuToutUtile) => 3,
    };
    let mut kept: Vec<HelpOffer> = offers
        .iter()
        .filter(|o| !blocked.contains(&o.offerer) && !removed.contains(&o.offerer))
        .cloned()
        .collect();
    kept.sort_by_key(rank); // stable: arrival order breaks ties
    kept
}

// ---------------------------------------------------------------------------
// Reputation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AbuseCategory {
    Predateur,
    Intimidateur,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Aucune,
    Suspendu,
    FaussesDeclarations(u32),
}

impl Decision {
    pub fn label(&self) -> String {
        match self {
            Decision::Aucune => "Aucune".to_string(),
            Decision::Suspendu => "Suspendu".to_string(),
            Decision::FaussesDeclarations(n) => format!("{n} Fausses déclarations"),
        }
    }
}

/// One row of the server's reputation table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReputationRecord {
    pub user: UserId,
    pub predator_reports: u32,
    pub bully_reports: u32,
    pub spam_blocks: u32,
    pub distinct_reporters: BTreeSet<UserId>,
    /// Distinct (reporter, incident) pairs already counted.
    pub counted_incidents: BTreeSet<(UserId, u64)>,
    pub assistant_visits: u32,
    pub reviewed: bool,
    pub decision: Decision,
}

impl ReputationRecord {
    pub fn new(user: UserId) -> Self {
        ReputationRecord {
            user,
            predator_reports: 0,
            bully_reports: 0,
            spam_blocks: 0,
            distinct_reporters: BTreeSet::new(),
            counted_incidents: BTreeSet::new(),
            assistant_visits: 0,
            reviewed: false,
            decision: Decision::Aucune,
        }
    }

    /// The "Total des signalements" column: abuse reports plus spam blocks.
    pub fn total_reports(&self) -> u32 {
        self.predator_reports + self.bully_reports + self.spam_blocks
    }

    /// Reports that count toward the review/suspension thresholds
    /// (spam blocks are "bloqué sans être signalé" and do not).
    pub fn report_count(&self) -> u32 {
        self.predator_reports + self.bully_reports
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReputationEvent {
    Report {
        reporter: UserId,
        category: AbuseCategory,
        incident: u64,
    },
    BlockWithoutReport {
        blocker: UserId,
    },
    AssistantVisit,
    AdminReview {
        false_declarations: u32,
        decision: Decision,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReputationAction {
    None,
    /// Strictly more than three reports from at least three distinct
    /// reporters: the administrator is asked to review.
    ReviewRequested,
    /// Strictly more than five reports from at least five distinct reporters
    /// before any review: temporary suspension.
    AutoSuspended,
}

pub fn update_reputation(
    record: &mut ReputationRecord,
    event: ReputationEvent,
) -> ReputationAction {
    match event {
        ReputationEvent::Report {
            reporter,
            category,
            incident,
        } => {
            if !record.counted_incidents.insert((reporter, incident)) {
                return ReputationAction::None; // duplicate report, counted once
            }
            match category {
                AbuseCategory::Predateur => record.predator_reports += 1,
                AbuseCategory::Intimidateur => record.bully_reports += 1,
            }
            record.distinct_reporters.insert(reporter);
            let reports = record.report_count();
            let reporters = record.distinct_reporters.len();
            if !record.reviewed && reports > 5 && reporters >= 5 {
                record.decision = Decision::Suspendu;
                ReputationAction::AutoSuspended
            } else if !record.reviewed && reports > 3 && reporters >= 3 {
                ReputationAction::ReviewRequested
            } else {
                ReputationAction::None
            }
        }
        ReputationEvent::BlockWithoutReport { .. } => {
            record.spam_blocks += 1;
            ReputationAction::None
        }
        ReputationEvent::AssistantVisit => {
            record.assistant_visits += 1;
            ReputationAction::None
        }
        ReputationEvent::AdminReview {
            false_declarations,
            decision,
        } => {
            record.reviewed = true;
            if false_declarations > 0 {
                // The administrator strikes out declarations found baseless.
                let mut remaining = false_declarations;
                let take = remaining.min(record.bully_reports);
                record.bully_reports -= take;
                remaining -= take;
                record.predator_reports -= remaining.min(record.predator_reports);
            }
            record.decision = decision;
            ReputationAction::None
        }
    }
}

/// One exported line per record, mirroring the reputation table columns.
pub fn reputation_table_line(record: &ReputationRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        record.user,
        record.predator_reports,
        record.bully_reports,
        record.spam_blocks,
        record.total_reports(),
        record.assistant_visits,
        if record.reviewed { "Vrai" } else { "Faux" },
        record.decision.label(),
    )
}
