//! The canonical prompt set, one template per model interaction.
//!
//! The wording here is load-bearing: judge verdict parsing, the option
//! grammar of the evaluation prompt, and the call cache all assume these
//! exact strings. Cache keys include the template name and
//! [`TEMPLATE_VERSION`], so any edit to a template text must bump the
//! version or stale cached completions will be replayed against the new
//! wording.
//!
//! Slots are literal bracketed markers (`[Question]`, `[entity type]`, ...).
//! [`Template::render`] refuses to emit a prompt that still contains one of
//! its declared slots, and [`Template::parse`] inverts a rendered prompt back
//! into slot values, which the scripted mock backends use to behave like a
//! model without one.

use thiserror::Error;

/// Bumped whenever any template text changes; folded into every cache key.
pub const TEMPLATE_VERSION: &str = "1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: slot {slot} left unfilled in rendered prompt")]
    Unfilled {
        template: &'static str,
        slot: &'static str,
    },
    #[error("template {template}: no slot named {slot}")]
    UnknownSlot {
        template: &'static str,
        slot: String,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
    pub slots: &'static [&'static str],
}

/// Asks the generator for `[N]` rewrites of a question in one completion.
pub const QUESTION_PARAPHRASE: Template = Template {
    name: "question_paraphrase",
    text: "Generate [N] meaningful paraphrases for the following question: [Question]. Read the question carefully.\nParaphrases:",
    slots: &["[N]", "[Question]"],
};

/// Judge gate for paraphrase quality: Same vs. Contradicted.
pub const QUESTION_EQUIVALENCE: Template = Template {
    name: "question_equivalence",
    text: "Determine whether the paraphrased question describes the same thing as the original question, and give \"Contradicted\" if they are not the same, otherwise give \"Same\" as the result.\nQ1: [Paraphrased Q1]\nQ2: [Paraphrased Q2]\nKeep the answer short and concise.",
    slots: &["[Paraphrased Q1]", "[Paraphrased Q2]"],
};

/// Judge call used while clustering answers: do A1 and A2 answer Q the same?
pub const ANSWER_CONSISTENCY: Template = Template {
    name: "answer_consistency",
    text: "Determine whether the answer 'A1' is 'Contradicted' or 'Same' with the answer 'A2' for the question 'Q'. You need to check whether the two answers exactly have the same answer to the question. The answer could be person, name, place, time, number, genre, occupation, sport, entity, digit, or arithmetical results. If the two answers are the same, give \"Same\", otherwise give \"Contradicted\" as the result.\nQ: [question]\nA1: [LLM answer 1]\nA2: [LLM answer 2]\nKeep the answer short and concise.",
    slots: &["[question]", "[LLM answer 1]", "[LLM answer 2]"],
};

/// Closed-book answer elicitation, used both for paraphrase answers and for
/// the memory answer itself.
pub const CLOSED_BOOK_QA: Template = Template {
    name: "closed_book_qa",
    text: "Answer the question with one sentence with object and subject only. Give a statement that is most likely to be true directly.\n\nQuestion:\n[Question]\nAnswer:",
    slots: &["[Question]"],
};

/// Rewrites one entity of the memory answer to produce the counter answer.
/// The `[CMA]` slot takes the statement being rewritten (the memory answer);
/// the completion is the counter-memory candidate.
pub const COUNTER_ANSWER: Template = Template {
    name: "counter_answer",
    text: "Context:\n[CMA]\nChange the [entity type] part of the context. When multiple parts need to be changed, only choose one part to change.\nAnswer:",
    slots: &["[CMA]", "[entity type]"],
};

/// One-sentence paraphrase of the counter answer; the direct evidence.
pub const DIRECT_EVIDENCE: Template = Template {
    name: "direct_evidence",
    text: "Please paraphrase the following sentence by changing the terms, order, and phrases, but keep the meaning the same.\n\nSentence: [CMA]",
    slots: &["[CMA]"],
};

/// Fabricated multi-sentence support for the counter answer; the `[2 or 3]`
/// slot carries the requested sentence count.
pub const INDIRECT_EVIDENCE: Template = Template {
    name: "indirect_evidence",
    text: "Given a claim, please write a short piece of detailed evidence to support it. Please ignore the correctness of the claim. You can make up fake content and supporting evidence but it should be as realistic as possible.\nClaim:\n[counter memory answer]\nEvidence:\nGive the answer in [2 or 3] sentences directly.",
    slots: &["[counter memory answer]", "[2 or 3]"],
};

/// The evaluation prompt: three options grounded in the given evidence.
pub const EVALUATE_WITH_EVIDENCE: Template = Template {
    name: "evaluate_with_evidence",
    text: "According to the given information, choose the best choice from the following options.\nInformation: [evidence]\nQuestion: [question]\nOption:\nA: [option 1]\nB: [option 2]\nC: [option 3]\nAnswer:",
    slots: &["[evidence]", "[question]", "[option 1]", "[option 2]", "[option 3]"],
};

/// Every canonical template, for enumeration in tests and docs.
pub const ALL_TEMPLATES: [&Template; 8] = [
    &QUESTION_PARAPHRASE,
    &QUESTION_EQUIVALENCE,
    &ANSWER_CONSISTENCY,
    &CLOSED_BOOK_QA,
    &COUNTER_ANSWER,
    &DIRECT_EVIDENCE,
    &INDIRECT_EVIDENCE,
    &EVALUATE_WITH_EVIDENCE,
];

impl Template {
    /// Fills the given slots and verifies none of the declared slots survive
    /// in the output. Unknown slot names are rejected rather than ignored.
    pub fn render(&self, fills: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = self.text.to_string();
        for (slot, value) in fills {
            if !self.slots.contains(slot) {
                return Err(TemplateError::UnknownSlot {
                    template: self.name,
                    slot: (*slot).to_string(),
                });
            }
            out = out.replace(slot, value);
        }
        for slot in self.slots {
            if out.contains(slot) {
                return Err(TemplateError::Unfilled {
                    template: self.name,
                    slot,
                });
            }
        }
        Ok(out)
    }

    /// Inverts a rendered prompt: recovers the slot values by anchoring on the
    /// literal text between slots. Returns `None` when the prompt does not
    /// match this template. Values are matched non-greedily left to right.
    pub fn parse(&self, prompt: &str) -> Option<Vec<(&'static str, String)>> {
        let mut pieces: Vec<Result<&'static str, &'static str>> = Vec::new(); // Ok = anchor, Err = slot
        let mut rest = self.text;
        loop {
            let next = self
                .slots
                .iter()
                .filter_map(|s| rest.find(s).map(|at| (at, *s)))
                .min_by_key(|(at, _)| *at);
            match next {
                Some((at, slot)) => {
                    if at > 0 {
                        pieces.push(Ok(&rest[..at]));
                    }
                    pieces.push(Err(slot));
                    rest = &rest[at + slot.len()..];
                }
                None => {
                    if !rest.is_empty() {
                        pieces.push(Ok(rest));
                    }
                    break;
                }
            }
        }

        let mut values = Vec::new();
        let mut cursor = prompt;
        let mut pending_slot: Option<&'static str> = None;
        for piece in pieces {
            match piece {
                Ok(anchor) => match pending_slot.take() {
                    Some(slot) => {
                        let at = cursor.find(anchor)?;
                        values.push((slot, cursor[..at].to_string()));
                        cursor = &cursor[at + anchor.len()..];
                    }
                    None => {
                        cursor = cursor.strip_prefix(anchor)?;
                    }
                },
                Err(slot) => {
                    if pending_slot.is_some() {
                        return None; // adjacent slots are unparseable
                    }
                    pending_slot = Some(slot);
                }
            }
        }
        if let Some(slot) = pending_slot {
            values.push((slot, cursor.to_string()));
        } else if !cursor.is_empty() {
            return None;
        }
        Some(values)
    }
}

/// Convenience lookup over the parsed slot list.
pub fn slot_value<'a>(values: &'a [(&'static str, String)], slot: &str) -> Option<&'a str> {
    values
        .iter()
        .find(|(s, _)| *s == slot)
        .map(|(_, v)| v.as_str())
}
