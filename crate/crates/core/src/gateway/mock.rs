//! Offline backends: closure-driven fakes for tests and a seeded, scripted
//! chat mock that can stand in for every role so the whole pipeline runs
//! without a network.
//!
//! The scripted mock recognizes prompts by template (via [`Template::parse`])
//! and behaves like a cooperative model: it invents paraphrases by prefixing
//! framer phrases, answers closed-book questions by drawing from small
//! per-question answer pools (so answer consistency varies question by
//! question), rewrites one entity to build counter answers, rotates words to
//! paraphrase sentences, and picks multiple-choice options mostly by reading
//! the evidence. Everything is keyed by a stable hash of (seed, inputs), so
//! two runs with the same seed are byte-identical.

use std::collections::HashMap;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::template::{
    self, ANSWER_CONSISTENCY, CLOSED_BOOK_QA, COUNTER_ANSWER, DIRECT_EVIDENCE,
    EVALUATE_WITH_EVIDENCE, INDIRECT_EVIDENCE, QUESTION_EQUIVALENCE, QUESTION_PARAPHRASE,
};
use crate::text::{align_gaps, bag_subsumes, token_bag, tokens};

use super::{BackendError, ChatBackend, CompletionRequest, EntailmentBackend, ENTAILMENT_JUDGE};

/// Deterministic across builds and platforms (unlike `DefaultHasher`).
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(
        digest[..8]
            .try_into()
            .expect("sha256 yields at least 8 bytes"),
    )
}

// --- closure-driven fakes ---

pub struct FnChatBackend {
    id: String,
    f: Box<dyn Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync>,
}

impl FnChatBackend {
    pub fn new(
        id: &str,
        f: impl Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        FnChatBackend {
            id: id.to_string(),
            f: Box::new(f),
        }
    }
}

impl ChatBackend for FnChatBackend {
    fn id(&self) -> &str {
        &self.id
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (self.f)(request)
    }
}

pub struct FnEntailmentBackend {
    id: String,
    f: Box<dyn Fn(&str, &str) -> Result<String, BackendError> + Send + Sync>,
}

impl FnEntailmentBackend {
    pub fn new(
        id: &str,
        f: impl Fn(&str, &str) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        FnEntailmentBackend {
            id: id.to_string(),
            f: Box::new(f),
        }
    }
}

impl EntailmentBackend for FnEntailmentBackend {
    fn id(&self) -> &str {
        &self.id
    }
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<String, BackendError> {
        (self.f)(premise, hypothesis)
    }
}

// --- heuristic entailment ---

/// Offline entailment heuristic over folded token bags:
/// equal bags or a hypothesis bag contained in the premise bag read as
/// entailment; sequences that align except for one differing span substituted
/// at the same position (an entity swap) read as contradiction; anything else
/// is neutral. Crude next to a real NLI model, but deterministic and exactly
/// the right shape for generated statements that differ by one swapped span.
pub fn heuristic_entailment_label(premise: &str, hypothesis: &str) -> &'static str {
    let bp = token_bag(premise);
    let bh = token_bag(hypothesis);
    if bp == bh || bag_subsumes(&bp, &bh) {
        return "entailment";
    }
    let ta = tokens(premise);
    let tb = tokens(hypothesis);
    let (ga, gb) = align_gaps(&ta, &tb);
    let unmatched_a: usize = ga.iter().map(|s| s.len).sum();
    let matched = ta.len().saturating_sub(unmatched_a);
    // With one gap per side, everything before the gap is matched, so the
    // gaps sit between the same matched runs exactly when they start at the
    // same index. A leading insertion on one side and a trailing one on the
    // other is not a swap.
    if matched > 0 && ga.len() == 1 && gb.len() == 1 && ga[0].start == gb[0].start {
        "contradiction"
    } else {
        "neutral"
    }
}

pub struct HeuristicEntailer;

impl EntailmentBackend for HeuristicEntailer {
    fn id(&self) -> &str {
        "heuristic-entailer"
    }
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<String, BackendError> {
        Ok(heuristic_entailment_label(premise, hypothesis).to_string())
    }
}

/// Record/replay entailer: pinned (premise, hypothesis) -> label pairs with a
/// fallback for everything else. Used to replay verdicts recorded from a
/// higher-fidelity classifier.
pub struct FixtureEntailer {
    table: Mutex<HashMap<(String, String), String>>,
    fallback: Box<dyn EntailmentBackend>,
}

impl FixtureEntailer {
    pub fn over(fallback: Box<dyn EntailmentBackend>) -> Self {
        FixtureEntailer {
            table: Mutex::new(HashMap::new()),
            fallback,
        }
    }

    pub fn pin(&self, premise: &str, hypothesis: &str, label: &str) {
        self.table.lock().unwrap().insert(
            (premise.to_string(), hypothesis.to_string()),
            label.to_string(),
        );
    }
}

impl Default for FixtureEntailer {
    fn default() -> Self {
        FixtureEntailer::over(Box::new(HeuristicEntailer))
    }
}

impl EntailmentBackend for FixtureEntailer {
    fn id(&self) -> &str {
        "fixture-entailer"
    }
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<String, BackendError> {
        let key = (premise.to_string(), hypothesis.to_string());
        if let Some(label) = self.table.lock().unwrap().get(&key) {
            return Ok(label.clone());
        }
        self.fallback.entail(premise, hypothesis)
    }
}

// --- the scripted seeded mock ---

const FRAMERS: [&str; 10] = [
    "Could you tell me",
    "Please tell me",
    "I would like to know",
    "Do you know",
    "Can you state",
    "Tell me",
    "Let me ask",
    "Help me recall",
    "Remind me",
    "State for the record",
];

const K_CHOICES: [usize; 4] = [1, 2, 4, 7];

struct AnswerPool {
    /// Items planted as closed-book answers.
    main: &'static [&'static str],
    /// Disjoint substitutes used when rewriting an entity, so a counter
    /// answer never collides with a planted answer.
    alt: &'static [&'static str],
    /// Sentence frame the answer is spliced into.
    frame: &'static str,
}

const NAMES: AnswerPool = AnswerPool {
    main: &[
        "Arden Hale",
        "Mira Voss",
        "Tobin Reyes",
        "Sela Brandt",
        "Orin Maguire",
        "Petra Lindqvist",
        "Caius Monroe",
        "Ilsa Ferran",
        "Dorian Whitlock",
    ],
    alt: &[
        "Quillon Drace",
        "Beatrix Sorel",
        "Hadrian Volk",
        "Liora Stannis",
        "Edmund Crale",
        "Tamsin Vray",
    ],
    frame: "It is {}.",
};

const PLACES: AnswerPool = AnswerPool {
    main: &[
        "Aldermoor",
        "Brightwater",
        "Cinderhall",
        "Dunmere",
        "Eastvale",
        "Fernhollow",
        "Graymarsh",
        "Hollowbrook",
        "Ivyford",
    ],
    alt: &[
        "Veshport",
        "Karnwick",
        "Ostmere",
        "Thornquay",
        "Lundvale",
        "Merrowgate",
    ],
    frame: "It is in {}.",
};

const YEARS: AnswerPool = AnswerPool {
    main: &[
        "1963", "1971", "1984", "1992", "1999", "2003", "2008", "2012", "2016",
    ],
    alt: &["1891", "1904", "1917", "1926", "1938", "1947"],
    frame: "It happened in {}.",
};

const NUMBERS: AnswerPool = AnswerPool {
    main: &["12", "15", "19", "23", "27", "31", "38", "44", "52"],
    alt: &["61", "73", "87", "94", "108", "126"],
    frame: "There are {} in total.",
};

const DURATIONS: AnswerPool = AnswerPool {
    main: &[
        "2 years", "4 years", "6 years", "8 years", "11 years", "13 years", "16 years", "21 years",
        "25 years",
    ],
    alt: &[
        "9 months",
        "14 months",
        "19 months",
        "30 months",
        "41 months",
        "55 months",
    ],
    frame: "It lasted {}.",
};

const DISTANCES: AnswerPool = AnswerPool {
    main: &[
        "3 miles", "8 miles", "14 miles", "22 miles", "35 miles", "48 miles", "60 miles",
        "75 miles", "90 miles",
    ],
    alt: &[
        "5 kilometers",
        "12 kilometers",
        "26 kilometers",
        "44 kilometers",
        "63 kilometers",
        "81 kilometers",
    ],
    frame: "It is {} away.",
};

const AGES: AnswerPool = AnswerPool {
    main: &["26", "37", "49", "58", "66", "71", "79", "83", "88"],
    alt: &["21", "32", "43", "57", "64", "72"],
    frame: "The person is {} years old.",
};

/// Scan order matters: multi-word pools first so "21 years" is seen as a
/// duration before "21" could be seen as an age.
const POOL_SCAN: [&AnswerPool; 7] = [
    &NAMES, &DURATIONS, &DISTANCES, &PLACES, &YEARS, &AGES, &NUMBERS,
];

fn pool_for_question(canon: &str) -> &'static AnswerPool {
    if canon.starts_with("how many") || canon.starts_with("how much") {
        &NUMBERS
    } else if canon.starts_with("how long") {
        &DURATIONS
    } else if canon.starts_with("how old") {
        &AGES
    } else if canon.starts_with("how far") {
        &DISTANCES
    } else if canon.starts_with("when")
        || canon.starts_with("what year")
        || canon.starts_with("which year")
    {
        &YEARS
    } else if canon.starts_with("where")
        || canon.starts_with("which city")
        || canon.starts_with("which state")
        || canon.starts_with("which country")
    {
        &PLACES
    } else {
        &NAMES
    }
}

fn pool_for_entity_term(term: &str) -> &'static AnswerPool {
    match term {
        "number" => &NUMBERS,
        "time" => &YEARS,
        "location" => &PLACES,
        "distance" => &DISTANCES,
        "age" => &AGES,
        _ => &NAMES,
    }
}

/// Whole-token occurrence of `needle` in `hay` (alphanumeric boundaries).
fn find_token_span(hay: &str, needle: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = hay[from..].find(needle) {
        let at = from + rel;
        let before_ok = hay[..at]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[at + needle.len()..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return Some(at);
        }
        from = at + needle.len().max(1);
    }
    None
}

/// Rotates the words of a single sentence, preserving the terminal period.
/// `shift` is taken modulo the word count and bumped off zero so the result
/// is always a different string for sentences of two-plus distinct words.
fn rotate_sentence(sentence: &str, shift: u32) -> String {
    let trimmed = sentence.trim().trim_end_matches(['.', '!', '?']);
    let words: Vec<&str> = trimmed.split_whitespace().collect();
    if words.len() < 2 {
        return format!("{trimmed} indeed.");
    }
    let mut r = (shift as usize) % words.len();
    if r == 0 {
        r = 1;
    }
    let mut rotated = Vec::with_capacity(words.len());
    rotated.extend_from_slice(&words[r..]);
    rotated.extend_from_slice(&words[..r]);
    format!("{}.", rotated.join(" "))
}

fn strip_framer(question: &str) -> &str {
    for framer in FRAMERS {
        if let Some(rest) = question.strip_prefix(framer) {
            if let Some(core) = rest.strip_prefix(": ") {
                return core;
            }
        }
    }
    question
}

const INDIRECT_FILLERS: [&str; 2] = [
    "Archival notes kept by the town registry repeat this detail.",
    "A later committee review recorded the same finding.",
];

/// Chat backend that plays all three chat roles deterministically.
pub struct SeededChatMock {
    id: String,
    seed: String,
}

impl SeededChatMock {
    pub fn new(seed: u64) -> Self {
        SeededChatMock {
            id: format!("seeded-mock:{seed}"),
            seed: seed.to_string(),
        }
    }

    fn h(&self, parts: &[&str]) -> u64 {
        let mut all = vec![self.seed.as_str()];
        all.extend_from_slice(parts);
        stable_hash(&all)
    }

    fn paraphrases(&self, prompt: &str, attempt: u32) -> Option<String> {
        let values = QUESTION_PARAPHRASE.parse(prompt)?;
        let n: usize = template::slot_value(&values, "[N]")?.trim().parse().ok()?;
        let q = template::slot_value(&values, "[Question]")?;
        if n == 1 {
            let idx = self.h(&["regen", q, &attempt.to_string()]) as usize % FRAMERS.len();
            return Some(format!("1. {}: {q}", FRAMERS[idx]));
        }
        let lines: Vec<String> = (0..n)
            .map(|i| {
                format!(
                    "{}. {}: {q}",
                    i + 1,
                    FRAMERS[(i + attempt as usize) % FRAMERS.len()]
                )
            })
            .collect();
        Some(lines.join("\n"))
    }

    fn closed_book(&self, prompt: &str) -> Option<String> {
        let values = CLOSED_BOOK_QA.parse(prompt)?;
        let q = template::slot_value(&values, "[Question]")?;
        let core = strip_framer(q);
        let canon = crate::text::normalize(core);
        let pool = pool_for_question(&canon);
        let k = K_CHOICES[(self.h(&["k", &canon]) % K_CHOICES.len() as u64) as usize];
        let base = (self.h(&["base", &canon]) % pool.main.len() as u64) as usize;
        let j = (self.h(&["draw", prompt]) % k as u64) as usize;
        let item = pool.main[(base + j) % pool.main.len()];
        Some(pool.frame.replace("{}", item))
    }

    fn consistency(&self, prompt: &str) -> Option<String> {
        let values = ANSWER_CONSISTENCY.parse(prompt)?;
        let a1 = crate::text::normalize(template::slot_value(&values, "[LLM answer 1]")?);
        let a2 = crate::text::normalize(template::slot_value(&values, "[LLM answer 2]")?);
        let same = a1 == a2 || a1.contains(&a2) || a2.contains(&a1);
        Some(if same { "Same" } else { "Contradicted" }.to_string())
    }

    fn counter_answer(&self, prompt: &str, attempt: u32) -> Option<String> {
        let values = COUNTER_ANSWER.parse(prompt)?;
        let ma = template::slot_value(&values, "[CMA]")?;
        let term = template::slot_value(&values, "[entity type]")?;

        // Find a known entity in the statement and swap it for one from the
        // disjoint substitute list (or back to a main item when the statement
        // already carries a substitute).
        for pool in POOL_SCAN {
            for (source, target) in [(pool.main, pool.alt), (pool.alt, pool.main)] {
                for item in source {
                    if let Some(at) = find_token_span(ma, item) {
                        let pick = (self.h(&["alt", ma, &attempt.to_string()])
                            % target.len() as u64) as usize;
                        let replacement = target[pick];
                        let mut out = String::with_capacity(ma.len());
                        out.push_str(&ma[..at]);
                        out.push_str(replacement);
                        out.push_str(&ma[at + item.len()..]);
                        return Some(out);
                    }
                }
            }
        }

        // Statement with no known entity (hand-written fixture): replace the
        // last word with a substitute of the requested kind.
        let pool = pool_for_entity_term(term);
        let trimmed = ma.trim_end().trim_end_matches(['.', '!', '?']);
        let cut = trimmed.rfind(' ').map(|i| i + 1).unwrap_or(0);
        let pick =
            (self.h(&["fallback-alt", ma, &attempt.to_string()]) % pool.alt.len() as u64) as usize;
        Some(format!("{}{}.", &trimmed[..cut], pool.alt[pick]))
    }

    fn direct_evidence(&self, prompt: &str, attempt: u32) -> Option<String> {
        let values = DIRECT_EVIDENCE.parse(prompt)?;
        let cma = template::slot_value(&values, "[CMA]")?;
        Some(rotate_sentence(cma, 1 + attempt))
    }

    fn indirect_evidence(&self, prompt: &str) -> Option<String> {
        let values = INDIRECT_EVIDENCE.parse(prompt)?;
        let cma = template::slot_value(&values, "[counter memory answer]")?;
        let k: usize = template::slot_value(&values, "[2 or 3]")?
            .trim()
            .parse()
            .ok()?;
        let mut parts = vec![rotate_sentence(cma, 1)];
        parts.extend(
            INDIRECT_FILLERS
                .iter()
                .take(k.saturating_sub(1))
                .map(|s| s.to_string()),
        );
        Some(parts.join(" "))
    }

    fn evaluate(&self, prompt: &str) -> Option<String> {
        let values = EVALUATE_WITH_EVIDENCE.parse(prompt)?;
        let evidence = template::slot_value(&values, "[evidence]")?;
        let options = [
            ('A', template::slot_value(&values, "[option 1]")?),
            ('B', template::slot_value(&values, "[option 2]")?),
            ('C', template::slot_value(&values, "[option 3]")?),
        ];
        let evidence_bag = token_bag(evidence);
        let supported =
            |text: &str| text != "Uncertain." && bag_subsumes(&evidence_bag, &token_bag(text));
        let w = self.h(&["pick", prompt]) % 100;
        let choice = if w < 85 {
            // Read the evidence and pick the option it supports.
            options.iter().find(|(_, text)| supported(text)).copied()
        } else if w < 95 {
            // Cling to memory: the non-uncertain option absent from the evidence.
            options
                .iter()
                .find(|(_, text)| *text != "Uncertain." && !supported(text))
                .copied()
        } else {
            None
        };
        let (letter, text) = choice.unwrap_or(options[2]);
        Some(format!("{letter}: {text}"))
    }

    fn entailment_judge(&self, prompt: &str) -> Option<String> {
        let values = ENTAILMENT_JUDGE.parse(prompt)?;
        let premise = template::slot_value(&values, "[premise]")?;
        let hypothesis = template::slot_value(&values, "[hypothesis]")?;
        Some(heuristic_entailment_label(premise, hypothesis).to_string())
    }
}

impl ChatBackend for SeededChatMock {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let out = match request.template.as_str() {
            n if n == QUESTION_PARAPHRASE.name => {
                self.paraphrases(&request.prompt, request.attempt)
            }
            n if n == QUESTION_EQUIVALENCE.name => Some("Same".to_string()),
            n if n == ANSWER_CONSISTENCY.name => self.consistency(&request.prompt),
            n if n == CLOSED_BOOK_QA.name => self.closed_book(&request.prompt),
            n if n == COUNTER_ANSWER.name => self.counter_answer(&request.prompt, request.attempt),
            n if n == DIRECT_EVIDENCE.name => {
                self.direct_evidence(&request.prompt, request.attempt)
            }
            n if n == INDIRECT_EVIDENCE.name => self.indirect_evidence(&request.prompt),
            n if n == EVALUATE_WITH_EVIDENCE.name => self.evaluate(&request.prompt),
            n if n == ENTAILMENT_JUDGE.name => self.entailment_judge(&request.prompt),
            other => {
                return Err(BackendError::fatal(format!(
                    "seeded mock has no script for template {other:?}"
                )))
            }
        };
        out.ok_or_else(|| {
            BackendError::fatal(format!(
                "seeded mock could not parse a {} prompt",
                request.template
            ))
        })
    }
}
