//! Counter-memory construction: elicit the model's own answer (MA), type the
//! question with a two-layer rule tree to find which entity kind to swap,
//! have the generator rewrite that entity into a counter answer (CMA), and
//! validate the pair — the CMA must contradict the MA, and the substituted
//! entity must appear neither in the question nor in any closed-book answer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QuestionRecord;
use crate::gateway::{EntailmentLabel, Gateway, GatewayError, ModelRole};
use crate::strength::AnswerSet;
use crate::template::{CLOSED_BOOK_QA, COUNTER_ANSWER};
use crate::text::{align_gaps, contains_normalized, tokens};

pub const MAX_CMA_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    HowMany,
    HowMuch,
    HowLong,
    HowOld,
    HowFar,
    How,
    WhoSings,
    WhoPlays,
    WhoWrites,
    WhoWins,
    Who,
    Where,
    When,
    WhatYear,
    WhatName,
    What,
    WhichCountry,
    WhichCity,
    WhichState,
    WhichYear,
    Which,
    Why,
    Other,
}

impl QuestionType {
    pub fn is_processable(self) -> bool {
        entity_type_for(self).is_some()
    }
}

impl std::fmt::Display for QuestionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_string(self).expect("plain enum");
        f.write_str(s.trim_matches('"'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Time,
    Location,
    NameOfPerson,
    Number,
    SingerName,
    PlayerName,
    WriterName,
    WinnerName,
    Distance,
    Age,
}

impl EntityType {
    /// The phrase spliced into the counter-answer prompt.
    pub fn key_term(self) -> &'static str {
        match self {
            EntityType::Time => "time",
            EntityType::Location => "location",
            EntityType::NameOfPerson => "name of person",
            EntityType::Number => "number",
            EntityType::SingerName => "singer's name",
            EntityType::PlayerName => "player's name",
            EntityType::WriterName => "writer's name",
            EntityType::WinnerName => "winner's name",
            EntityType::Distance => "distance",
            EntityType::Age => "age",
        }
    }
}

/// Layer 1: the question's first word. Layer 2: an exact bigram over the
/// first two words refines into subtypes; unlisted bigrams keep the bare
/// layer-1 label. Total on any string — non-questions land in `Other`.
pub fn classify_question(text: &str) -> QuestionType {
    let toks = tokens(text);
    let first = toks
        .first()
        .map(|t| crate::text::fold_token(t))
        .unwrap_or_default();
    let second = toks
        .get(1)
        .map(|t| crate::text::fold_token(t))
        .unwrap_or_default();
    match first.as_str() {
        "how" => match second.as_str() {
            "many" => QuestionType::HowMany,
            "much" => QuestionType::HowMuch,
            "long" => QuestionType::HowLong,
            "old" => QuestionType::HowOld,
            "far" => QuestionType::HowFar,
            _ => QuestionType::How,
        },
        "who" => match second.as_str() {
            "sings" => QuestionType::WhoSings,
            "plays" => QuestionType::WhoPlays,
            "writes" => QuestionType::WhoWrites,
            "wins" => QuestionType::WhoWins,
            _ => QuestionType::Who,
        },
        "what" => match second.as_str() {
            "year" => QuestionType::WhatYear,
            "name" => QuestionType::WhatName,
            _ => QuestionType::What,
        },
        "which" => match second.as_str() {
            "country" => QuestionType::WhichCountry,
            "city" => QuestionType::WhichCity,
            "state" => QuestionType::WhichState,
            "year" => QuestionType::WhichYear,
            _ => QuestionType::Which,
        },
        "when" => QuestionType::When,
        "where" => QuestionType::Where,
        "why" => QuestionType::Why,
        _ => QuestionType::Other,
    }
}

/// The entity kind a question type asks about; None marks the types that have
/// no unified entity kind and are excluded from counter-answer generation.
pub fn entity_type_for(t: QuestionType) -> Option<EntityType> {
    match t {
        QuestionType::When
        | QuestionType::WhatYear
        | QuestionType::WhichYear
        | QuestionType::HowLong => Some(EntityType::Time),
        QuestionType::Where
        | QuestionType::WhichCity
        | QuestionType::WhichState
        | QuestionType::WhichCountry => Some(EntityType::Location),
        QuestionType::Who | QuestionType::WhatName => Some(EntityType::NameOfPerson),
        QuestionType::HowMany | QuestionType::HowMuch => Some(EntityType::Number),
        QuestionType::WhoSings => Some(EntityType::SingerName),
        QuestionType::WhoPlays => Some(EntityType::PlayerName),
        QuestionType::WhoWrites => Some(EntityType::WriterName),
        QuestionType::WhoWins => Some(EntityType::WinnerName),
        QuestionType::HowFar => Some(EntityType::Distance),
        QuestionType::HowOld => Some(EntityType::Age),
        QuestionType::How
        | QuestionType::What
        | QuestionType::Which
        | QuestionType::Why
        | QuestionType::Other => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictChecks {
    pub contradiction: bool,
    pub alt_not_in_question: bool,
    pub alt_not_in_answers: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictStatus {
    Valid,
    FilteredOut,
    Excluded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmaAttempt {
    pub candidate: String,
    pub contradiction: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_entity: Option<String>,
    pub alt_in_question: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConflictPair {
    pub question_id: String,
    pub ma: String,
    pub cma: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_entity: Option<String>,
    pub checks: ConflictChecks,
    pub status: ConflictStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attempts: Vec<CmaAttempt>,
}

#[derive(Debug, Error)]
pub enum ConflictError {
    #[error("question {id} excluded: {reason}")]
    ExcludedQuestion { id: String, reason: String },
    #[error("answers do not differ at the token level")]
    NoDifference,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Closed-book memory answer for the original question. One retry on an
/// empty completion, then the question is excluded.
pub fn generate_ma(gw: &Gateway, q: &QuestionRecord) -> Result<String, ConflictError> {
    for attempt in 0..=1 {
        let ma = gw.call(
            ModelRole::Evaluee,
            &CLOSED_BOOK_QA,
            &[("[Question]", &q.text)],
            attempt,
        )?;
        if !ma.trim().is_empty() {
            return Ok(ma);
        }
    }
    Err(ConflictError::ExcludedQuestion {
        id: q.id.clone(),
        reason: "empty memory answer after one retry".to_string(),
    })
}

/// The substituted span: align MA and CMA tokens, take the longest run
/// present only in the CMA (tie broken toward the earliest), and trim
/// punctuation off the span edges.
pub fn identify_alt_entity(ma: &str, cma: &str) -> Result<String, ConflictError> {
    let ta = tokens(ma);
    let tb = tokens(cma);
    let (_, gaps) = align_gaps(&ta, &tb);
    let best = gaps
        .iter()
        .max_by_key(|s| (s.len, std::cmp::Reverse(s.start)))
        .ok_or(ConflictError::NoDifference)?;
    let span = tb[best.start..best.start + best.len].join(" ");
    let alt = span.trim_matches(|c: char| !c.is_alphanumeric());
    if alt.is_empty() {
        return Err(ConflictError::NoDifference);
    }
    Ok(alt.to_string())
}

/// Final check: the alternative entity must not appear in any closed-book
/// answer, else the "counter" answer does not actually conflict with memory.
pub fn conflict_filter(mut pair: ConflictPair, answers: &AnswerSet) -> ConflictPair {
    let Some(alt) = pair.alt_entity.as_deref() else {
        return pair;
    };
    let in_answers = answers.answers.iter().any(|a| contains_normalized(a, alt));
    pair.checks.alt_not_in_answers = !in_answers;
    if in_answers {
        pair.status = ConflictStatus::FilteredOut;
    }
    pair
}

/// Generation loop: up to [`MAX_CMA_ATTEMPTS`] candidates from the generator,
/// each checked for (a) contradiction with the MA in either entailment
/// direction and (b) an alternative entity absent from the question. The
/// first candidate passing both goes to the conflict filter, which decides
/// Valid vs FilteredOut. Exhaustion yields an Excluded pair; every attempt is
/// kept in the ledger.
pub fn generate_cma(
    gw: &Gateway,
    q: &QuestionRecord,
    ma: &str,
    et: EntityType,
    answers: &AnswerSet,
) -> Result<ConflictPair, ConflictError> {
    let mut attempts = Vec::new();
    for attempt in 0..MAX_CMA_ATTEMPTS {
        let candidate = gw.call(
            ModelRole::Generator,
            &COUNTER_ANSWER,
            &[("[CMA]", ma), ("[entity type]", et.key_term())],
            attempt,
        )?;
        let contradiction = gw.entail(ma, &candidate)?.label == EntailmentLabel::Contradiction
            || gw.entail(&candidate, ma)?.label == EntailmentLabel::Contradiction;
        let alt_entity = identify_alt_entity(ma, &candidate).ok();
        let alt_in_question = alt_entity
            .as_deref()
            .map(|alt| contains_normalized(&q.text, alt))
            .unwrap_or(false);
        attempts.push(CmaAttempt {
            candidate: candidate.clone(),
            contradiction,
            alt_entity: alt_entity.clone(),
            alt_in_question,
        });
        if let Some(alt) = alt_entity {
            if contradiction && !alt_in_question {
                let pair = ConflictPair {
                    question_id: q.id.clone(),
                    ma: ma.to_string(),
                    cma: candidate,
                    alt_entity: Some(alt),
                    checks: ConflictChecks {
                        contradiction: true,
                        alt_not_in_question: true,
                        alt_not_in_answers: false,
                    },
                    status: ConflictStatus::Valid,
                    attempts,
                };
                return Ok(conflict_filter(pair, answers));
            }
        }
    }
    let cma = attempts
        .last()
        .map(|a| a.candidate.clone())
        .unwrap_or_default();
    Ok(ConflictPair {
        question_id: q.id.clone(),
        ma: ma.to_string(),
        cma,
        alt_entity: None,
        checks: ConflictChecks::default(),
        status: ConflictStatus::Excluded,
        attempts,
    })
}

/// Validation path for datasets that ship MA/CMA pairs: no regeneration —
/// the ingested pair passes or the question drops. The same three checks run
/// so downstream invariants hold for every Valid pair.
pub fn validate_ingested_pair(
    gw: &Gateway,
    q: &QuestionRecord,
    ma: &str,
    cma: &str,
    answers: &AnswerSet,
) -> Result<ConflictPair, ConflictError> {
    let contradiction = gw.entail(ma, cma)?.label == EntailmentLabel::Contradiction
        || gw.entail(cma, ma)?.label == EntailmentLabel::Contradiction;
    let alt_entity = identify_alt_entity(ma, cma).ok();
    let alt_in_question = alt_entity
        .as_deref()
        .map(|alt| contains_normalized(&q.text, alt))
        .unwrap_or(false);
    let attempts = vec![CmaAttempt {
        candidate: cma.to_string(),
        contradiction,
        alt_entity: alt_entity.clone(),
        alt_in_question,
    }];
    let mut pair = ConflictPair {
        question_id: q.id.clone(),
        ma: ma.to_string(),
        cma: cma.to_string(),
        alt_entity: alt_entity.clone(),
        checks: ConflictChecks {
            contradiction,
            alt_not_in_question: alt_entity.is_some() && !alt_in_question,
            alt_not_in_answers: false,
        },
        status: ConflictStatus::Excluded,
        attempts,
    };
    if pair.checks.contradiction && pair.checks.alt_not_in_question {
        pair.status = ConflictStatus::Valid;
        pair = conflict_filter(pair, answers);
    }
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::gateway::mock::{FnChatBackend, HeuristicEntailer, SeededChatMock};
    use crate::gateway::ChatBackend;

    fn answer_set(answers: &[&str]) -> AnswerSet {
        AnswerSet {
            question_id: "q-1".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn conflict_gateway(generator: Arc<dyn ChatBackend>) -> Gateway {
        Gateway::builder()
            .chat(ModelRole::Generator, generator)
            .entailer(Arc::new(HeuristicEntailer), 2)
            .build()
    }

    #[test]
    fn typing_tree_matches_known_rows() {
        let cases = [
            (
                "how many episodes are in chicago fire season 4",
                QuestionType::HowMany,
            ),
            (
                "how are leaders of the two parties in congress chosen",
                QuestionType::How,
            ),
            (
                "which domain of life are humans members of",
                QuestionType::Which,
            ),
            (
                "what is the setting of the story sorry wrong number",
                QuestionType::What,
            ),
            (
                "latest season on keeping up with the kardashians",
                QuestionType::Other,
            ),
            (
                "Who sings the Christmas song 'Mary Did You Know'?",
                QuestionType::WhoSings,
            ),
            ("when did the eagles win the super bowl", QuestionType::When),
            ("", QuestionType::Other),
        ];
        for (text, expected) in cases {
            assert_eq!(classify_question(text), expected, "for {text:?}");
        }
    }

    #[test]
    fn entity_map_covers_all_ten_rows() {
        use EntityType::*;
        use QuestionType::*;
        let rows = [
            (When, Time),
            (WhatYear, Time),
            (WhichYear, Time),
            (HowLong, Time),
            (Where, Location),
            (WhichCity, Location),
            (WhichState, Location),
            (WhichCountry, Location),
            (Who, NameOfPerson),
            (WhatName, NameOfPerson),
            (HowMany, Number),
            (HowMuch, Number),
            (WhoSings, SingerName),
            (WhoPlays, PlayerName),
            (WhoWrites, WriterName),
            (WhoWins, WinnerName),
            (HowFar, Distance),
            (HowOld, Age),
        ];
        for (qt, et) in rows {
            assert_eq!(entity_type_for(qt), Some(et), "for {qt}");
        }
        for qt in [How, What, Which, Why, Other] {
            assert_eq!(entity_type_for(qt), None, "{qt} must be non-processable");
            assert!(!qt.is_processable());
        }
    }

    #[test]
    fn alt_entity_is_the_longest_new_span() {
        let alt = identify_alt_entity(
            "there are 23 episodes in Chicago Fire season 4",
            "there are 15 episodes in Chicago Fire season 4",
        )
        .unwrap();
        assert_eq!(alt, "15");

        let alt =
            identify_alt_entity("X was born in Paris", "X was born in Lyon in France").unwrap();
        assert_eq!(alt, "Lyon in France");

        let alt = identify_alt_entity("It is Arden Hale.", "It is Mira Voss.").unwrap();
        assert_eq!(alt, "Mira Voss");

        assert!(matches!(
            identify_alt_entity("same text here", "same text here"),
            Err(ConflictError::NoDifference)
        ));
    }

    #[test]
    fn ma_comes_back_verbatim_with_one_empty_retry() {
        let evaluee = FnChatBackend::new("evaluee", |req| {
            Ok(if req.attempt == 0 {
                String::new()
            } else {
                "there are 23 episodes".to_string()
            })
        });
        let gw = Gateway::builder()
            .chat(ModelRole::Evaluee, Arc::new(evaluee))
            .build();
        let q = QuestionRecord::nq("q-1", "how many episodes are in chicago fire season 4");
        assert_eq!(generate_ma(&gw, &q).unwrap(), "there are 23 episodes");

        let silent = FnChatBackend::new("evaluee", |_| Ok(String::new()));
        let gw = Gateway::builder()
            .chat(ModelRole::Evaluee, Arc::new(silent))
            .build();
        assert!(matches!(
            generate_ma(&gw, &q),
            Err(ConflictError::ExcludedQuestion { .. })
        ));
    }

    #[test]
    fn cma_generation_accepts_a_contradicting_swap() {
        let gw = conflict_gateway(Arc::new(SeededChatMock::new(7)));
        let q = QuestionRecord::nq("q-1", "who sings the winter ballad");
        let ma = "It is Arden Hale.";
        let answers = answer_set(&["It is Arden Hale.", "It is Arden Hale."]);
        let pair = generate_cma(&gw, &q, ma, EntityType::SingerName, &answers).unwrap();
        assert_eq!(pair.status, ConflictStatus::Valid, "pair: {pair:?}");
        assert_eq!(pair.attempts.len(), 1);
        assert!(pair.checks.contradiction);
        assert!(pair.checks.alt_not_in_question);
        assert!(pair.checks.alt_not_in_answers);
        let alt = pair.alt_entity.as_deref().unwrap();
        assert!(pair.cma.contains(alt));
        assert!(!ma.contains(alt));
    }

    #[test]
    fn echoing_generator_exhausts_the_budget() {
        let echo = FnChatBackend::new("echo", |req| {
            let values = COUNTER_ANSWER.parse(&req.prompt).unwrap();
            Ok(crate::template::slot_value(&values, "[CMA]")
                .unwrap()
                .to_string())
        });
        let gw = conflict_gateway(Arc::new(echo));
        let q = QuestionRecord::nq("q-1", "who sings the winter ballad");
        let answers = answer_set(&["It is Arden Hale."]);
        let pair = generate_cma(
            &gw,
            &q,
            "It is Arden Hale.",
            EntityType::SingerName,
            &answers,
        )
        .unwrap();
        assert_eq!(pair.status, ConflictStatus::Excluded);
        assert_eq!(pair.attempts.len(), MAX_CMA_ATTEMPTS as usize);
        assert!(pair.attempts.iter().all(|a| !a.contradiction));
    }

    #[test]
    fn alt_appearing_in_question_forces_a_retry() {
        let generator = FnChatBackend::new("gen", |req| {
            Ok(match req.attempt {
                0 => "It is Mira Voss.".to_string(),
                _ => "It is Tamsin Vray.".to_string(),
            })
        });
        let gw = conflict_gateway(Arc::new(generator));
        let q = QuestionRecord::nq("q-1", "who sings the duet with Mira Voss");
        let answers = answer_set(&["It is Arden Hale."]);
        let pair = generate_cma(
            &gw,
            &q,
            "It is Arden Hale.",
            EntityType::SingerName,
            &answers,
        )
        .unwrap();
        assert_eq!(pair.status, ConflictStatus::Valid);
        assert_eq!(pair.attempts.len(), 2);
        assert!(pair.attempts[0].alt_in_question);
        assert_eq!(pair.alt_entity.as_deref(), Some("Tamsin Vray"));
    }

    #[test]
    fn filter_demotes_alts_that_memory_already_knows() {
        let pair = ConflictPair {
            question_id: "q-1".into(),
            ma: "It is Mark Lowry.".into(),
            cma: "It is Brandy Clark.".into(),
            alt_entity: Some("Brandy Clark".into()),
            checks: ConflictChecks {
                contradiction: true,
                alt_not_in_question: true,
                alt_not_in_answers: false,
            },
            status: ConflictStatus::Valid,
            attempts: Vec::new(),
        };
        let answers = answer_set(&["It is Mark Lowry.", "The singer is BRANDY CLARK."]);
        let filtered = conflict_filter(pair.clone(), &answers);
        assert_eq!(filtered.status, ConflictStatus::FilteredOut);
        assert!(!filtered.checks.alt_not_in_answers);

        let clean = answer_set(&["It is Mark Lowry."]);
        let kept = conflict_filter(pair, &clean);
        assert_eq!(kept.status, ConflictStatus::Valid);
        assert!(kept.checks.alt_not_in_answers);
    }

    #[test]
    fn ingested_pairs_validate_without_regeneration() {
        let gw = conflict_gateway(Arc::new(SeededChatMock::new(7)));
        let q = QuestionRecord::nq("q-1", "who sings the winter ballad");
        let answers = answer_set(&["It is Arden Hale."]);

        let pair = validate_ingested_pair(
            &gw,
            &q,
            "It is Arden Hale.",
            "It is Quillon Drace.",
            &answers,
        )
        .unwrap();
        assert_eq!(pair.status, ConflictStatus::Valid);

        let same =
            validate_ingested_pair(&gw, &q, "It is Arden Hale.", "It is Arden Hale.", &answers)
                .unwrap();
        assert_eq!(same.status, ConflictStatus::Excluded);
        assert_eq!(same.attempts.len(), 1);
    }
}
