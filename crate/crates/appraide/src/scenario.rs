//! Scripted scenarios: a line-oriented command language executed against a
//! [`crate::sim::SimWorld`], with assertions as first-class commands so the
//! fixture files double as documentation.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::engine::DeletionScope;
use crate::matching::{
    AbuseCategory, Decision, HelpRequest, HelpeeRating, HelperGrade, HelperLevel,
    HelperPreferences, HelperRating, TeacherKind,
};
use crate::profile::{AudienceSpec, Distribution, Level, PublicationType, Role, UserId};
use crate::sim::{SimConfig, SimWorld};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub line: usize,
    pub tick: u64,
    pub name: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub commands: Vec<Command>,
}

/// Splits a line into whitespace-separated tokens, keeping double-quoted
/// spans intact.
fn tokenize_line(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut tok = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(ch) => tok.push(ch),
                    None => return Err("unterminated quote".to_string()),
                }
            }
            tokens.push(tok);
        } else {
            let mut tok = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                tok.push(ch);
                chars.next();
            }
            tokens.push(tok);
        }
    }
    Ok(tokens)
}

const COMMANDS: [&str; 24] = [
    "register",
    "approve-teacher",
    "connect",
    "disconnect",
    "befriend",
    "assign-class",
    "remove-class",
    "publish",
    "view",
    "reshare",
    "send-message",
    "delete-content",
    "delete-account",
    "self-test",
    "request-help",
    "set-prefs",
    "offer",
    "accept-offer",
    "end-session",
    "evaluate",
    "report-abuse",
    "block",
    "admin-review",
    "warn",
];

/// One command per line, `#` comments, ticks nondecreasing. An optional
/// leading `seed N` directive sets the default seed.
pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut seed = 0u64;
    let mut commands = Vec::new();
    let mut last_tick = 0u64;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| ParseError { line: line_no, message };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens = tokenize_line(line).map_err(&err)?;
        if tokens[0] == "seed" {
            seed = tokens
                .get(1)
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("seed directive needs an integer".to_string()))?;
            continue;
        }
        let tick: u64 = tokens[0]
            .parse()
            .map_err(|_| err(format!("expected a tick number, found '{}'", tokens[0])))?;
        if tick < last_tick {
            return Err(err(format!("tick {tick} decreases (previous was {last_tick})")));
        }
        last_tick = tick;
        let name = tokens
            .get(1)
            .ok_or_else(|| err("missing command".to_string()))?
            .clone();
        if name != "assert" && !COMMANDS.contains(&name.as_str()) {
            return Err(err(format!("unknown command '{name}'")));
        }
        commands.push(Command {
            line: line_no,
            tick,
            name,
            args: tokens[2..].to_vec(),
        });
    }
    Ok(Scenario { seed, commands })
}

#[derive(Debug, Clone)]
pub struct ReportEntry {
    pub line: usize,
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

pub struct Report {
    pub entries: Vec<ReportEntry>,
    pub violations: Vec<String>,
    pub world_digest: String,
    pub trace: String,
    pub world: SimWorld,
}

impl Report {
    /// All assertions passed and the scanners found nothing.
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed) && self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} line {}: {}{}\n",
                if e.passed { "PASS" } else { "FAIL" },
                e.line,
                e.description,
                if e.detail.is_empty() { String::new() } else { format!(" ({})", e.detail) }
            ));
        }
        for v in &self.violations {
            out.push_str(&format!("VIOLATION {v}\n"));
        }
        out.push_str(&format!("world-digest {}\n", self.world_digest));
        out.push_str(if self.passed() { "result PASS\n" } else { "result FAIL\n" });
        out
    }
}

struct Runner {
    world: SimWorld,
    users: BTreeMap<String, (UserId, String)>,
}

impl Runner {
    fn user(&self, name: &str) -> Result<UserId, String> {
        self.users
            .get(name)
            .map(|(id, _)| *id)
            .ok_or_else(|| format!("unknown user '{name}'"))
    }

    fn user_list(&self, csv: &str) -> Result<BTreeSet<UserId>, String> {
        csv.split(',')
            .filter(|s| !s.is_empty())
            .map(|n| self.user(n))
            .collect()
    }

    fn audience(&self, owner: UserId, spec: &str) -> Result<AudienceSpec, String> {
        if spec == "me-only" {
            return Ok(AudienceSpec::MeOnly);
        }
        if spec == "public" {
            return Ok(AudienceSpec::Public);
        }
        if let Some(class_name) = spec.strip_prefix("class:") {
            let class_id = self
                .world
                .peers
                .get(&owner)
                .and_then(|p| p.profile.class_by_name(class_name))
                .map(|c| c.class_id.clone())
                .ok_or_else(|| format!("unknown class '{class_name}'"))?;
            return Ok(AudienceSpec::Class(class_id));
        }
        if let Some(csv) = spec.strip_prefix("list:") {
            return Ok(AudienceSpec::PersonList(self.user_list(csv)?));
        }
        Err(format!("bad audience '{spec}'"))
    }

    fn distribution(&self, spec: &str) -> Result<Distribution, String> {
        if spec == "non" {
            return Ok(Distribution::None);
        }
        if spec == "oui" {
            return Ok(Distribution::Allowed);
        }
        if let Some(csv) = spec.strip_prefix("restreinte:") {
            return Ok(Distribution::Restricted(self.user_list(csv)?));
        }
        Err(format!("bad distribution '{spec}'"))
    }

    fn execute(&mut self, cmd: &Command) -> Result<(), String> {
        let arg = |i: usize| -> Result<&str, String> {
            cmd.args
                .get(i)
                .map(|s| s.as_str())
                .ok_or_else(|| format!("missing argument {}", i + 1))
        };
        match cmd.name.as_str() {
            "register" => {
                let (name, pw, role) = (arg(0)?, arg(1)?, arg(2)?);
                let role = match role {
                    "apprenant" => Role::Apprenant,
                    "enseignant" => Role::Enseignant,
                    other => return Err(format!("bad role '{other}'")),
                };
                let id = self.world.register(name, pw, role).map_err(|e| e.to_string())?;
                self.users.insert(name.to_string(), (id, pw.to_string()));
            }
            "approve-teacher" => {
                self.world.approve_teacher(arg(0)?).map_err(|e| e.to_string())?;
            }
            "connect" => {
                let name = arg(0)?;
                let pw = match cmd.args.get(1) {
                    Some(p) => p.clone(),
                    None => self
                        .users
                        .get(name)
                        .map(|(_, p)| p.clone())
                        .ok_or_else(|| format!("unknown user '{name}'"))?,
                };
                self.world.authenticate(name, &pw).map_err(|e| e.to_string())?;
            }
            "disconnect" => {
                let id = self.user(arg(0)?)?;
                self.world.disconnect_peer(id).map_err(|e| e.to_string())?;
            }
            "befriend" => {
                let (a, b) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                self.world.befriend(a, b).map_err(|e| e.to_string())?;
            }
            "assign-class" => {
                let (owner, member) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                self.world.assign_class(owner, member, arg(2)?).map_err(|e| e.to_string())?;
            }
            "remove-class" => {
                let (owner, member) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                self.world
                    .remove_class_member(owner, member, arg(2)?)
                    .map_err(|e| e.to_string())?;
            }
            "publish" => {
                let owner = self.user(arg(0)?)?;
                let ptype = match arg(1)? {
                    "demande-aide" => PublicationType::DemandeAide,
                    "information" => PublicationType::Information,
                    "document" => PublicationType::Document,
                    "statut" => PublicationType::Statut,
                    other => return Err(format!("bad publication type '{other}'")),
                };
                let science = arg(2)?.to_string();
                let level_str = arg(3)?;
                let level: Level = level_str
                    .parse()
                    .map_err(|_| format!("bad level '{level_str}'"))?;
                let audience = self.audience(owner, arg(4)?)?;
                let distribution = self.distribution(arg(5)?)?;
                let body = arg(6)?.as_bytes().to_vec();
                self.world
                    .publish(owner, ptype, &science, level, audience, distribution, &body)
                    .map_err(|e| e.to_string())?;
            }
            "view" => {
                let (viewer, owner) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                let cid: u64 = arg(2)?.parse().map_err(|_| "bad content id".to_string())?;
                self.world.view(viewer, owner, cid).map_err(|e| e.to_string())?;
            }
            "reshare" => {
                let (resharer, owner) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                let cid: u64 = arg(2)?.parse().map_err(|_| "bad content id".to_string())?;
                let audience = self.audience(resharer, arg(3)?)?;
                self.world
                    .reshare(resharer, owner, cid, audience)
                    .map_err(|e| e.to_string())?;
            }
            "send-message" => {
                let (from, to) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                self.world
                    .send_message(from, to, arg(2)?.as_bytes())
                    .map_err(|e| e.to_string())?;
            }
            "delete-content" => {
                let owner = self.user(arg(0)?)?;
                let cid: u64 = arg(1)?.parse().map_err(|_| "bad content id".to_string())?;
                self.world.delete_content(owner, cid).map_err(|e| e.to_string())?;
            }
            "delete-account" => {
                let owner = self.user(arg(0)?)?;
                self.world.delete_account(owner).map_err(|e| e.to_string())?;
            }
            "self-test" => {
                let user = self.user(arg(0)?)?;
                let score: f64 = arg(2)?.parse().map_err(|_| "bad score".to_string())?;
                self.world
                    .record_self_test(user, arg(1)?, score)
                    .map_err(|e| e.to_string())?;
            }
            "set-prefs" => {
                let user = self.user(arg(0)?)?;
                let accepting: bool = arg(1)?.parse().map_err(|_| "bad accepting flag".to_string())?;
                let subjects: std::collections::BTreeSet<String> =
                    arg(2)?.split(',').map(|s| s.to_string()).collect();
                let levels: Result<std::collections::BTreeSet<Level>, _> =
                    arg(3)?.split(',').map(|s| s.parse::<Level>()).collect();
                let levels = levels.map_err(|_| "bad level list".to_string())?;
                let max_duration: u32 = arg(4)?.parse().map_err(|_| "bad duration".to_string())?;
                let kind = match arg(5)? {
                    "benevole" => TeacherKind::Benevole,
                    "freelancer" => TeacherKind::Freelancer,
                    other => return Err(format!("bad kind '{other}'")),
                };
                self.world
                    .set_prefs(
                        user,
                        HelperPreferences {
                            accepting,
                            levels,
                            subjects,
                            max_duration,
                            max_concurrent: 1,
                            kind,
                        },
                    )
                    .map_err(|e| e.to_string())?;
            }
            "request-help" => {
                let user = self.user(arg(0)?)?;
                let subject = arg(1)?.to_string();
                let level: Level = arg(2)?.parse().map_err(|_| "bad level".to_string())?;
                let duration: u32 = arg(3)?.parse().map_err(|_| "bad duration".to_string())?;
                let grade = match cmd.args.get(4).map(|s| s.as_str()) {
                    None | Some("apprenant") => HelperGrade::Apprenant,
                    Some("enseignant") => HelperGrade::Enseignant,
                    Some(other) => return Err(format!("bad grade '{other}'")),
                };
                let teacher_kind = match (grade, cmd.args.get(5).map(|s| s.as_str())) {
                    (HelperGrade::Apprenant, _) => None,
                    (HelperGrade::Enseignant, Some("freelancer")) => Some(TeacherKind::Freelancer),
                    (HelperGrade::Enseignant, _) => Some(TeacherKind::Benevole),
                };
                self.world
                    .request_help(HelpRequest {
                        requester: user,
                        level,
                        study_year: 1,
                        subject,
                        chapter: String::new(),
                        helper_grade: grade,
                        teacher_kind,
                        helper_level: HelperLevel::Intermediaire,
                        duration_minutes: duration,
                        description: None,
                    })
                    .map_err(|e| e.to_string())?;
            }
            "offer" => {
                let (helper, requester) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                self.world
                    .offer_help(helper, requester, arg(2).unwrap_or("disponible"))
                    .map_err(|e| e.to_string())?;
            }
            "accept-offer" => {
                let (requester, helper) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                self.world.accept_offer(requester, helper).map_err(|e| e.to_string())?;
            }
            "end-session" => {
                let (a, b) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                self.world.end_session(a, b).map_err(|e| e.to_string())?;
            }
            "evaluate" => {
                let (rater, other) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                let again: bool = arg(3)?.parse().map_err(|_| "bad again flag".to_string())?;
                let (helpee, helper) = match arg(2)? {
                    "tres-utile" => (Some(HelpeeRating::TresUtile), None),
                    "utile" => (Some(HelpeeRating::Utile), None),
                    "pas-du-tout-utile" => (Some(HelpeeRating::PasDuToutUtile), None),
                    "excellent" => (None, Some(HelperRating::Excellent)),
                    "bon" => (None, Some(HelperRating::Bon)),
                    "faible" => (None, Some(HelperRating::Faible)),
                    other => return Err(format!("bad rating '{other}'")),
                };
                self.world
                    .evaluate(rater, other, helpee, helper, again)
                    .map_err(|e| e.to_string())?;
            }
            "report-abuse" => {
                let (victim, offender) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                let category = match arg(2)? {
                    "predateur" => AbuseCategory::Predateur,
                    "intimidateur" => AbuseCategory::Intimidateur,
                    other => return Err(format!("bad category '{other}'")),
                };
                let incident = cmd.args.get(3).and_then(|s| s.parse().ok());
                self.world
                    .report_abuse(victim, offender, category, incident)
                    .map_err(|e| e.to_string())?;
            }
            "block" => {
                let (user, target) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                let silent = cmd.args.get(2).map(|s| s == "silent").unwrap_or(false);
                self.world.block(user, target, silent).map_err(|e| e.to_string())?;
            }
            "admin-review" => {
                let user = self.user(arg(0)?)?;
                let false_n: u32 = arg(1)?.parse().map_err(|_| "bad count".to_string())?;
                let decision = match arg(2)? {
                    "aucune" => Decision::Aucune,
                    "suspendu" => Decision::Suspendu,
                    "fausses" => Decision::FaussesDeclarations(false_n),
                    other => return Err(format!("bad decision '{other}'")),
                };
                self.world
                    .admin_review(user, false_n, decision)
                    .map_err(|e| e.to_string())?;
            }
            "warn" => {
                let (user, suspect) = (self.user(arg(0)?)?, self.user(arg(1)?)?);
                let yes_no = |s: &str| match s {
                    "yes" => Ok(true),
                    "no" => Ok(false),
                    other => Err(format!("bad answer '{other}'")),
                };
                let a1 = yes_no(arg(2)?)?;
                let a2 = cmd.args.get(3).map(|s| yes_no(s)).transpose()?;
                self.world.warn(user, suspect, a1, a2).map_err(|e| e.to_string())?;
            }
            other => return Err(format!("unknown command '{other}'")),
        }
        Ok(())
    }

    fn evaluate_assert(&mut self, cmd: &Command) -> Result<(), String> {
        let arg = |i: usize| -> Result<&str, String> {
            cmd.args
                .get(i)
                .map(|s| s.as_str())
                .ok_or_else(|| format!("missing argument {}", i + 1))
        };
        let expect = |label: &str, got: String, want: String| -> Result<(), String> {
            if got == want {
                Ok(())
            } else {
                Err(format!("{label}: expected {want}, got {got}"))
            }
        };
        match arg(0)? {
            "renders" | "hidden" => {
                let (viewer, owner) = (self.user(arg(1)?)?, self.user(arg(2)?)?);
                let cid: u64 = arg(3)?.parse().map_err(|_| "bad content id".to_string())?;
                let rendered = self.world.view(viewer, owner, cid).map_err(|e| e.to_string())?;
                let want = arg(0)? == "renders";
                expect("render decision", rendered.to_string(), want.to_string())
            }
            "replica-count" => {
                let owner = self.user(arg(1)?)?;
                let cid: u64 = arg(2)?.parse().map_err(|_| "bad content id".to_string())?;
                expect(
                    "replica count",
                    self.world.replica_count(owner, cid).to_string(),
                    arg(3)?.to_string(),
                )
            }
            "confirmation-count" => {
                let owner = self.user(arg(1)?)?;
                let scope = match arg(2)? {
                    "account" => DeletionScope::Account,
                    s => DeletionScope::Content(
                        s.strip_prefix("content:")
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| format!("bad scope '{s}'"))?,
                    ),
                };
                expect(
                    "confirmation count",
                    self.world.confirmation_count(owner, scope).to_string(),
                    arg(3)?.to_string(),
                )
            }
            "escrow-count" => expect(
                "escrow count",
                self.world.escrow_count().to_string(),
                arg(1)?.to_string(),
            ),
            "reputation-decision" => {
                let user = self.user(arg(1)?)?;
                let got = match self.world.reputation_decision(user) {
                    Decision::Aucune => "aucune".to_string(),
                    Decision::Suspendu => "suspendu".to_string(),
                    Decision::FaussesDeclarations(n) => format!("fausses:{n}"),
                };
                expect("reputation decision", got, arg(2)?.to_string())
            }
            "offer-list" => {
                let requester = self.user(arg(1)?)?;
                let offers = self.world.ranked_offers(requester).map_err(|e| e.to_string())?;
                let got: Vec<String> = offers
                    .iter()
                    .map(|o| {
                        self.users
                            .iter()
                            .find(|(_, (id, _))| *id == o.offerer)
                            .map(|(n, _)| n.clone())
                            .unwrap_or_else(|| o.offerer.to_string())
                    })
                    .collect();
                let got = if got.is_empty() { "empty".to_string() } else { got.join(",") };
                expect("offer list", got, arg(2)?.to_string())
            }
            "inbox-count" => {
                let user = self.user(arg(1)?)?;
                expect(
                    "inbox count",
                    self.world.peers[&user].inbox.len().to_string(),
                    arg(2)?.to_string(),
                )
            }
            "public-count" => expect(
                "public store count",
                self.world.server.public_store.len().to_string(),
                arg(1)?.to_string(),
            ),
            "connected" => {
                let user = self.user(arg(1)?)?;
                expect(
                    "connectivity",
                    self.world.peers[&user].connected.to_string(),
                    arg(2)?.to_string(),
                )
            }
            "help-broadcasts" => {
                let count = self
                    .world
                    .wire_log
                    .iter()
                    .filter(|r| r.bytes.starts_with(b"help-request") && r.to == crate::sim::NodeRef::Server)
                    .count();
                expect("help broadcasts", count.to_string(), arg(1)?.to_string())
            }
            "reshare-denied" => {
                let (resharer, owner) = (self.user(arg(1)?)?, self.user(arg(2)?)?);
                let cid: u64 = arg(3)?.parse().map_err(|_| "bad content id".to_string())?;
                match self.world.reshare(resharer, owner, cid, AudienceSpec::Public) {
                    Err(_) => Ok(()),
                    Ok(_) => Err("reshare unexpectedly allowed".to_string()),
                }
            }
            other => Err(format!("unknown assert kind '{other}'")),
        }
    }
}

/// Executes a scenario to completion. `seed_override` replaces the file's
/// seed directive when given.
pub fn run_scenario(scenario: &Scenario, seed_override: Option<u64>) -> Report {
    let seed = seed_override.unwrap_or(scenario.seed);
    let mut runner = Runner {
        world: SimWorld::new(seed, SimConfig::default()),
        users: BTreeMap::new(),
    };
    let mut entries = Vec::new();
    for cmd in &scenario.commands {
        runner.world.run_until(cmd.tick);
        let result = if cmd.name == "assert" {
            runner.evaluate_assert(cmd)
        } else {
            runner.execute(cmd)
        };
        let description = format!("{} {}", cmd.name, cmd.args.join(" "));
        match result {
            Ok(()) => {
                if cmd.name == "assert" {
                    entries.push(ReportEntry {
                        line: cmd.line,
                        description,
                        passed: true,
                        detail: String::new(),
                    });
                }
            }
            Err(detail) => entries.push(ReportEntry {
                line: cmd.line,
                description,
                passed: false,
                detail,
            }),
        }
    }
    // Drain remaining deliveries so the world reaches quiescence.
    let mut guard = 0;
    while runner.world.has_pending_deliveries() && guard < 10_000 {
        let next = runner.world.clock + 1;
        runner.world.run_until(next);
        guard += 1;
    }
    let world = runner.world;
    let digest = crate::crypto::hash(world.dump().as_bytes()).to_hex();
    Report {
        entries,
        violations: world.violations.clone(),
        world_digest: digest,
        trace: world.trace.join("\n") + "\n",
        world,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_scenario() {
        let text = "\
# two users
seed 5
0 register alice pw123456 apprenant
0 register bobby pw123456 apprenant
1 connect alice
1 connect bobby
";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.seed, 5);
        assert_eq!(s.commands.len(), 4);
        assert_eq!(s.commands[0].name, "register");
    }

    #[test]
    fn rejects_decreasing_tick() {
        let text = "5 connect alice\n3 connect bobby\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("decreases"));
    }

    #[test]
    fn rejects_unknown_command() {
        let err = parse_scenario("0 frobnicate alice\n").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.message.contains("unknown command"));
    }

    #[test]
    fn quoted_bodies_parse() {
        let s = parse_scenario(
            "0 register alice pw123456 apprenant\n2 publish alice statut Maths lycee public oui \"un deux trois\"\n",
        )
        .unwrap();
        assert_eq!(s.commands[1].args[6], "un deux trois");
    }

    #[test]
    fn end_to_end_publish_and_assert() {
        let text = "\
0 register alice pw123456 apprenant
0 register bobby pw123456 apprenant
1 connect alice
1 connect bobby
2 befriend alice bobby
2 assign-class alice bobby Camarades
5 publish alice statut Maths lycee class:Camarades non \"devoir\"
10 assert renders bobby alice 1
10 assert replica-count alice 1 1
10 assert reshare-denied bobby alice 1
";
        let scenario = parse_scenario(text).unwrap();
        let report = run_scenario(&scenario, None);
        assert!(report.passed(), "{}", report.summary());
    }

    #[test]
    fn failed_assert_and_runtime_error_are_reported_not_fatal() {
        let text = "\
0 register alice pw123456 apprenant
1 connect alice
2 publish alice statut Maths lycee public oui \"x\"
5 assert public-count 3
6 delete-content alice 99
";
        let scenario = parse_scenario(text).unwrap();
        let report = run_scenario(&scenario, None);
        assert!(!report.passed());
        assert_eq!(report.entries.iter().filter(|e| !e.passed).count(), 2);
    }

    #[test]
    fn same_seed_identical_trace() {
        let text = "\
0 register alice pw123456 apprenant
0 register bobby pw123456 apprenant
1 connect alice
1 connect bobby
2 befriend alice bobby
3 publish alice information Maths cem public oui \"annonce\"
6 send-message bobby alice \"salut\"
9 assert inbox-count alice 1
";
        let scenario = parse_scenario(text).unwrap();
        let a = run_scenario(&scenario, Some(3));
        let b = run_scenario(&scenario, Some(3));
        assert!(a.passed(), "{}", a.summary());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.world_digest, b.world_digest);
    }
}
