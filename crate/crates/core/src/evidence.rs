//! Evidence synthesis: a direct restatement of the counter answer gated by
//! mutual entailment, indirect evidence that adds detail while entailing the
//! counter answer and not the memory answer, and composition of the styled
//! variants that evaluation runs over.
//!
//! Every accepted or rejected candidate leaves its verdicts in the bundle's
//! gate ledger, so acceptance can be audited without re-running the models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EntailmentLabel, Gateway, GatewayError, ModelRole};
use crate::template::{DIRECT_EVIDENCE, INDIRECT_EVIDENCE};
use crate::text::normalize;

pub const MAX_EVIDENCE_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvidenceKind {
    Direct,
    DirectPlusParaphrase,
    Indirect,
    DirectPlusIndirect,
}

impl EvidenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceKind::Direct => "direct",
            EvidenceKind::DirectPlusParaphrase => "direct+paraphrase",
            EvidenceKind::Indirect => "indirect",
            EvidenceKind::DirectPlusIndirect => "direct+indirect",
        }
    }
}

impl fmt::Display for EvidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvidenceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(EvidenceKind::Direct),
            "direct+paraphrase" => Ok(EvidenceKind::DirectPlusParaphrase),
            "indirect" => Ok(EvidenceKind::Indirect),
            "direct+indirect" => Ok(EvidenceKind::DirectPlusIndirect),
            other => Err(format!("unknown evidence kind {other:?}")),
        }
    }
}

/// A styled variant: the kind plus its sentence count. Only direct evidence
/// admits a single sentence; every other kind spans two or three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EvidenceStyle {
    pub kind: EvidenceKind,
    pub sentences: u8,
}

impl EvidenceStyle {
    pub fn new(kind: EvidenceKind, sentences: u8) -> Result<Self, String> {
        let ok = match kind {
            EvidenceKind::Direct => (1..=3).contains(&sentences),
            _ => (2..=3).contains(&sentences),
        };
        if ok {
            Ok(EvidenceStyle { kind, sentences })
        } else {
            Err(format!(
                "{kind} evidence cannot span {sentences} sentence(s)"
            ))
        }
    }

    /// The nine distinct style variants, in reporting order.
    pub fn all() -> Vec<EvidenceStyle> {
        let mut styles = Vec::with_capacity(9);
        for s in 1..=3 {
            styles.push(EvidenceStyle {
                kind: EvidenceKind::Direct,
                sentences: s,
            });
        }
        for kind in [
            EvidenceKind::DirectPlusParaphrase,
            EvidenceKind::Indirect,
            EvidenceKind::DirectPlusIndirect,
        ] {
            for s in 2..=3 {
                styles.push(EvidenceStyle { kind, sentences: s });
            }
        }
        styles
    }
}

impl fmt::Display for EvidenceStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.sentences)
    }
}

impl FromStr for EvidenceStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, count) = s
            .split_once(':')
            .ok_or_else(|| format!("style {s:?} is not kind:sentences"))?;
        let kind: EvidenceKind = kind.parse()?;
        let sentences: u8 = count
            .parse()
            .map_err(|_| format!("bad sentence count in style {s:?}"))?;
        EvidenceStyle::new(kind, sentences)
    }
}

impl Serialize for EvidenceStyle {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EvidenceStyle {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateEntry {
    pub check: String,
    pub verdict: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub direct_paraphrases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indirect_2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indirect_3: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gate_ledger: Vec<GateEntry>,
}

impl EvidenceBundle {
    pub fn empty(question_id: &str) -> Self {
        EvidenceBundle {
            question_id: question_id.to_string(),
            direct: None,
            direct_paraphrases: Vec::new(),
            indirect_2: None,
            indirect_3: None,
            gate_ledger: Vec::new(),
        }
    }

    /// Group 1 evaluates direct and direct+paraphrase styles, so membership
    /// requires the full direct component set.
    pub fn in_group1(&self) -> bool {
        self.direct.is_some() && self.direct_paraphrases.len() >= 2
    }

    /// Group 2 evaluates indirect and direct+indirect styles (plus the
    /// single-sentence direct baseline), so it needs both indirect lengths
    /// and the direct sentence.
    pub fn in_group2(&self) -> bool {
        self.direct.is_some() && self.indirect_2.is_some() && self.indirect_3.is_some()
    }
}

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("{component} failed its gates in all {attempts} attempts")]
    Excluded { component: String, attempts: u32 },
    #[error("style {style} needs {field}, which this bundle lacks")]
    MissingComponent { style: String, field: &'static str },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

// --- sentence counting ---

/// Token-final periods that never end a sentence.
const ABBREVIATIONS: [&str; 17] = [
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "fig", "al",
    "inc", "ltd", "co",
];

/// A single capital letter followed by a period, like the "J." in
/// "J. K. Rowling".
fn is_initial_token(token: &str) -> bool {
    let t = token.trim_start_matches(|c: char| !c.is_alphanumeric());
    let mut chars = t.chars();
    matches!(
        (chars.next(), chars.next(), chars.next()),
        (Some(c), Some('.'), None) if c.is_uppercase()
    )
}

fn is_abbreviation(token: &str) -> bool {
    let core = token
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim_end_matches('.')
        .to_lowercase();
    ABBREVIATIONS.contains(&core.as_str())
}

/// Splits on sentence terminators (. ! ?) at token boundaries, protecting
/// abbreviations and runs of single-letter initials. A trailing fragment
/// without a terminator is its own sentence. Periods inside a token (decimals
/// like "3.14", acronym interiors) never split because splitting only
/// considers token-final terminators.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut sentence_start = 0usize;
    let mut prev_protected_initial = false;

    let mut token_start = None;
    let bytes_len = text.len();
    let mut iter = text.char_indices().peekable();
    let mut token_spans = Vec::new();
    while let Some((i, c)) = iter.next() {
        if c.is_whitespace() {
            if let Some(s) = token_start.take() {
                token_spans.push((s, i));
            }
        } else if token_start.is_none() {
            token_start = Some(i);
        }
        if iter.peek().is_none() {
            if let Some(s) = token_start.take() {
                token_spans.push((s, bytes_len));
            }
        }
    }

    for (idx, &(s, e)) in token_spans.iter().enumerate() {
        let token = &text[s..e];
        let boundary = if token.ends_with('!') || token.ends_with('?') {
            prev_protected_initial = false;
            true
        } else if token.ends_with('.') {
            if is_abbreviation(token) {
                prev_protected_initial = false;
                false
            } else if is_initial_token(token) {
                let next_is_initial = token_spans
                    .get(idx + 1)
                    .is_some_and(|&(ns, ne)| is_initial_token(&text[ns..ne]));
                let protected = prev_protected_initial || next_is_initial;
                prev_protected_initial = protected;
                !protected
            } else {
                prev_protected_initial = false;
                true
            }
        } else {
            prev_protected_initial = false;
            false
        };
        if boundary {
            let sentence = text[sentence_start..e].trim();
            if !sentence.is_empty() {
                sentences.push(sentence.to_string());
            }
            sentence_start = e;
        }
    }

    let tail = text[sentence_start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

pub fn count_sentences(text: &str) -> usize {
    split_sentences(text).len()
}

// --- generation ---

/// One gated paraphrase of the CMA. `attempt_base` offsets the completion
/// ordinals so several components can draw differently from one prompt, and
/// `distinct_from` rejects candidates that repeat already-accepted wording.
fn direct_component(
    gw: &Gateway,
    cma: &str,
    component: &str,
    attempt_base: u32,
    distinct_from: &[&str],
    ledger: &mut Vec<GateEntry>,
) -> Result<String, EvidenceError> {
    for attempt in 0..MAX_EVIDENCE_ATTEMPTS {
        let candidate = gw.call(
            ModelRole::Generator,
            &DIRECT_EVIDENCE,
            &[("[CMA]", cma)],
            attempt_base + attempt,
        )?;
        let tag = format!("{component}[{attempt}]");
        if distinct_from
            .iter()
            .any(|prior| normalize(prior) == normalize(&candidate))
        {
            ledger.push(GateEntry {
                check: format!("{tag} distinct"),
                verdict: "duplicate".into(),
            });
            continue;
        }
        let forward = gw.entail(cma, &candidate)?.label;
        ledger.push(GateEntry {
            check: format!("{tag} entail(cma -> candidate)"),
            verdict: forward.to_string(),
        });
        if forward != EntailmentLabel::Entailment {
            continue;
        }
        let backward = gw.entail(&candidate, cma)?.label;
        ledger.push(GateEntry {
            check: format!("{tag} entail(candidate -> cma)"),
            verdict: backward.to_string(),
        });
        if backward == EntailmentLabel::Entailment {
            return Ok(candidate);
        }
    }
    Err(EvidenceError::Excluded {
        component: component.to_string(),
        attempts: MAX_EVIDENCE_ATTEMPTS,
    })
}

/// Direct evidence: a restatement that mutually entails the CMA.
pub fn generate_direct(
    gw: &Gateway,
    cma: &str,
    ledger: &mut Vec<GateEntry>,
) -> Result<String, EvidenceError> {
    direct_component(gw, cma, "direct", 0, &[], ledger)
}

/// Indirect evidence in exactly `k` sentences: must entail the CMA, must not
/// entail the MA, and must hit the sentence budget.
pub fn generate_indirect(
    gw: &Gateway,
    cma: &str,
    ma: &str,
    k: u8,
    ledger: &mut Vec<GateEntry>,
) -> Result<String, EvidenceError> {
    assert!(
        k == 2 || k == 3,
        "indirect evidence spans two or three sentences"
    );
    let k_str = k.to_string();
    let component = format!("indirect_{k}");
    for attempt in 0..MAX_EVIDENCE_ATTEMPTS {
        let candidate = gw.call(
            ModelRole::Generator,
            &INDIRECT_EVIDENCE,
            &[("[counter memory answer]", cma), ("[2 or 3]", &k_str)],
            attempt,
        )?;
        let tag = format!("{component}[{attempt}]");
        let toward_cma = gw.entail(&candidate, cma)?.label;
        ledger.push(GateEntry {
            check: format!("{tag} entail(candidate -> cma)"),
            verdict: toward_cma.to_string(),
        });
        if toward_cma != EntailmentLabel::Entailment {
            continue;
        }
        let toward_ma = gw.entail(&candidate, ma)?.label;
        ledger.push(GateEntry {
            check: format!("{tag} entail(candidate -> ma)"),
            verdict: toward_ma.to_string(),
        });
        if toward_ma == EntailmentLabel::Entailment {
            continue;
        }
        let sentences = count_sentences(&candidate);
        ledger.push(GateEntry {
            check: format!("{tag} sentence count"),
            verdict: sentences.to_string(),
        });
        if sentences == k as usize {
            return Ok(candidate);
        }
    }
    Err(EvidenceError::Excluded {
        component,
        attempts: MAX_EVIDENCE_ATTEMPTS,
    })
}

/// Builds the full bundle for one validated conflict pair. Direct evidence is
/// the gatekeeper: when it fails, the question leaves the evidence set and no
/// further components are attempted. Paraphrase or indirect failures only
/// drop the question from the styles that need them.
pub fn build_bundle(
    gw: &Gateway,
    question_id: &str,
    ma: &str,
    cma: &str,
) -> Result<EvidenceBundle, EvidenceError> {
    let mut bundle = EvidenceBundle::empty(question_id);
    let direct = match generate_direct(gw, cma, &mut bundle.gate_ledger) {
        Ok(d) => d,
        Err(EvidenceError::Excluded { .. }) => return Ok(bundle),
        Err(e) => return Err(e),
    };

    let mut paraphrases = Vec::new();
    for (component, base) in [("paraphrase_1", 5), ("paraphrase_2", 10)] {
        let mut exclude: Vec<&str> = vec![direct.as_str()];
        exclude.extend(paraphrases.iter().map(String::as_str));
        match direct_component(gw, cma, component, base, &exclude, &mut bundle.gate_ledger) {
            Ok(p) => paraphrases.push(p),
            Err(EvidenceError::Excluded { .. }) => break,
            Err(e) => return Err(e),
        }
    }

    for k in [2u8, 3u8] {
        match generate_indirect(gw, cma, ma, k, &mut bundle.gate_ledger) {
            Ok(text) => {
                if k == 2 {
                    bundle.indirect_2 = Some(text);
                } else {
                    bundle.indirect_3 = Some(text);
                }
            }
            Err(EvidenceError::Excluded { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    bundle.direct = Some(direct);
    bundle.direct_paraphrases = paraphrases;
    Ok(bundle)
}

fn require<'a>(
    field: Option<&'a str>,
    style: EvidenceStyle,
    name: &'static str,
) -> Result<&'a str, EvidenceError> {
    field.ok_or(EvidenceError::MissingComponent {
        style: style.to_string(),
        field: name,
    })
}

/// Composes the evidence text for one style from a bundle's validated parts.
/// Sentences are joined with single spaces, terminal punctuation untouched.
pub fn compose(style: EvidenceStyle, bundle: &EvidenceBundle) -> Result<String, EvidenceError> {
    let direct = bundle.direct.as_deref();
    match style.kind {
        EvidenceKind::Direct => {
            let d = require(direct, style, "direct")?;
            Ok(vec![d; style.sentences as usize].join(" "))
        }
        EvidenceKind::DirectPlusParaphrase => {
            let d = require(direct, style, "direct")?;
            let needed = style.sentences as usize - 1;
            if bundle.direct_paraphrases.len() < needed {
                return Err(EvidenceError::MissingComponent {
                    style: style.to_string(),
                    field: "direct_paraphrases",
                });
            }
            let mut parts = vec![d.to_string()];
            parts.extend(bundle.direct_paraphrases.iter().take(needed).cloned());
            Ok(parts.join(" "))
        }
        EvidenceKind::Indirect => {
            let field = if style.sentences == 2 {
                &bundle.indirect_2
            } else {
                &bundle.indirect_3
            };
            let name = if style.sentences == 2 {
                "indirect_2"
            } else {
                "indirect_3"
            };
            Ok(require(field.as_deref(), style, name)?.to_string())
        }
        EvidenceKind::DirectPlusIndirect => {
            let d = require(direct, style, "direct")?;
            let ind2 = require(bundle.indirect_2.as_deref(), style, "indirect_2")?;
            if style.sentences == 2 {
                let first = split_sentences(ind2).into_iter().next().ok_or(
                    EvidenceError::MissingComponent {
                        style: style.to_string(),
                        field: "indirect_2",
                    },
                )?;
                Ok(format!("{d} {first}"))
            } else {
                Ok(format!("{d} {ind2}"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::gateway::mock::{
        FnChatBackend, FnEntailmentBackend, HeuristicEntailer, SeededChatMock,
    };
    use crate::gateway::{ChatBackend, EntailmentBackend};

    fn evidence_gateway(
        generator: Arc<dyn ChatBackend>,
        entailer: Arc<dyn EntailmentBackend>,
    ) -> Gateway {
        Gateway::builder()
            .chat(ModelRole::Generator, generator)
            .entailer(entailer, 2)
            .build()
    }

    fn fixture_bundle() -> EvidenceBundle {
        EvidenceBundle {
            question_id: "q-1".into(),
            direct: Some("S one.".into()),
            direct_paraphrases: vec!["P one.".into(), "P two.".into()],
            indirect_2: Some("I first. I second.".into()),
            indirect_3: Some("I first. I second. I third.".into()),
            gate_ledger: Vec::new(),
        }
    }

    #[test]
    fn sentence_counter_handles_terminators_and_guards() {
        assert_eq!(count_sentences("A. B? C!"), 3);
        assert_eq!(count_sentences(""), 0);
        assert_eq!(count_sentences("Dr. Smith wrote it. It sold well."), 2);
        assert_eq!(count_sentences("J. K. Rowling wrote it."), 1);
        assert_eq!(count_sentences("It cost 3.14 dollars."), 1);
        assert_eq!(count_sentences("They cited Smith et al. in the text."), 1);
        assert_eq!(count_sentences("No terminator here"), 1);
        assert_eq!(count_sentences("E.g. this one works."), 1);
        assert_eq!(
            split_sentences("It was signed by J. Then it shipped."),
            // "J." reads as an initial only next to other initials.
            vec!["It was signed by J.", "Then it shipped."]
        );
    }

    #[test]
    fn style_validity_and_round_trip() {
        assert_eq!(EvidenceStyle::all().len(), 9);
        for style in EvidenceStyle::all() {
            let parsed: EvidenceStyle = style.to_string().parse().unwrap();
            assert_eq!(parsed, style);
        }
        assert!("direct:1".parse::<EvidenceStyle>().is_ok());
        assert!("direct+paraphrase:1".parse::<EvidenceStyle>().is_err());
        assert!("indirect:1".parse::<EvidenceStyle>().is_err());
        assert!("direct:4".parse::<EvidenceStyle>().is_err());
        assert!("bogus:2".parse::<EvidenceStyle>().is_err());
    }

    #[test]
    fn composition_follows_the_style_rules() {
        let bundle = fixture_bundle();
        let direct3 = compose("direct:3".parse().unwrap(), &bundle).unwrap();
        assert_eq!(direct3, "S one. S one. S one.");
        assert_eq!(count_sentences(&direct3), 3);

        let dp3 = compose("direct+paraphrase:3".parse().unwrap(), &bundle).unwrap();
        assert_eq!(dp3, "S one. P one. P two.");

        let ind2 = compose("indirect:2".parse().unwrap(), &bundle).unwrap();
        assert_eq!(ind2, "I first. I second.");

        let di2 = compose("direct+indirect:2".parse().unwrap(), &bundle).unwrap();
        assert_eq!(di2, "S one. I first.");

        let di3 = compose("direct+indirect:3".parse().unwrap(), &bundle).unwrap();
        assert_eq!(di3, "S one. I first. I second.");

        let mut missing = fixture_bundle();
        missing.indirect_2 = None;
        assert!(matches!(
            compose("direct+indirect:2".parse().unwrap(), &missing),
            Err(EvidenceError::MissingComponent {
                field: "indirect_2",
                ..
            })
        ));
    }

    #[test]
    fn direct_generation_passes_mutual_entailment() {
        let gw = evidence_gateway(
            Arc::new(SeededChatMock::new(3)),
            Arc::new(HeuristicEntailer),
        );
        let mut ledger = Vec::new();
        let cma = "It is Quillon Drace.";
        let direct = generate_direct(&gw, cma, &mut ledger).unwrap();
        assert_ne!(normalize(&direct), normalize(cma));
        assert!(!ledger.is_empty());
        assert_eq!(
            gw.entail(cma, &direct).unwrap().label,
            EntailmentLabel::Entailment
        );
        assert_eq!(
            gw.entail(&direct, cma).unwrap().label,
            EntailmentLabel::Entailment
        );
    }

    #[test]
    fn unsatisfiable_gate_excludes_after_five_attempts() {
        let echo = FnChatBackend::new("echo", |req| Ok(format!("attempt {}", req.attempt)));
        let neutral = FnEntailmentBackend::new("neutral", |_, _| Ok("neutral".to_string()));
        let gw = evidence_gateway(Arc::new(echo), Arc::new(neutral));
        let mut ledger = Vec::new();
        let err = generate_direct(&gw, "There are 15 episodes.", &mut ledger).unwrap_err();
        match err {
            EvidenceError::Excluded {
                component,
                attempts,
            } => {
                assert_eq!(component, "direct");
                assert_eq!(attempts, MAX_EVIDENCE_ATTEMPTS);
            }
            other => panic!("expected exclusion, got {other}"),
        }
        let forward_checks = ledger
            .iter()
            .filter(|g| g.check.contains("entail(cma -> candidate)"))
            .count();
        assert_eq!(forward_checks, MAX_EVIDENCE_ATTEMPTS as usize);
    }

    #[test]
    fn indirect_generation_enforces_the_sentence_budget() {
        let generator = FnChatBackend::new("gen", |req| {
            Ok(match req.attempt {
                0 => "There are 15 episodes indeed here.".to_string(),
                _ => "There are 15 episodes indeed. A later review recorded the same finding."
                    .to_string(),
            })
        });
        let gw = evidence_gateway(Arc::new(generator), Arc::new(HeuristicEntailer));
        let mut ledger = Vec::new();
        let out = generate_indirect(
            &gw,
            "There are 15 episodes.",
            "There are 23 episodes.",
            2,
            &mut ledger,
        )
        .unwrap();
        assert_eq!(count_sentences(&out), 2);
        let lengths: Vec<&GateEntry> = ledger
            .iter()
            .filter(|g| g.check.contains("sentence count"))
            .collect();
        assert_eq!(
            lengths.len(),
            2,
            "first attempt rejected on length, second accepted"
        );
        assert_eq!(lengths[0].verdict, "1");
    }

    #[test]
    fn bundle_has_distinct_components_and_group_membership() {
        let gw = evidence_gateway(
            Arc::new(SeededChatMock::new(9)),
            Arc::new(HeuristicEntailer),
        );
        let bundle = build_bundle(&gw, "q-1", "It is Arden Hale.", "It is Quillon Drace.").unwrap();
        assert!(bundle.in_group1(), "bundle: {bundle:?}");
        assert!(bundle.in_group2(), "bundle: {bundle:?}");
        let direct = bundle.direct.as_deref().unwrap();
        for p in &bundle.direct_paraphrases {
            assert_ne!(normalize(p), normalize(direct));
        }
        assert_eq!(count_sentences(bundle.indirect_2.as_deref().unwrap()), 2);
        assert_eq!(count_sentences(bundle.indirect_3.as_deref().unwrap()), 3);

        for style in EvidenceStyle::all() {
            let text = compose(style, &bundle).unwrap();
            assert_eq!(
                count_sentences(&text),
                style.sentences as usize,
                "style {style}"
            );
        }
    }

    #[test]
    fn direct_failure_empties_the_bundle() {
        let echo = FnChatBackend::new("echo", |req| Ok(format!("variant {}", req.attempt)));
        let neutral = FnEntailmentBackend::new("neutral", |_, _| Ok("neutral".to_string()));
        let gw = evidence_gateway(Arc::new(echo), Arc::new(neutral));
        let bundle = build_bundle(&gw, "q-1", "ma", "cma").unwrap();
        assert!(bundle.direct.is_none());
        assert!(bundle.direct_paraphrases.is_empty());
        assert!(bundle.indirect_2.is_none() && bundle.indirect_3.is_none());
        assert!(!bundle.in_group1() && !bundle.in_group2());
        assert!(
            !bundle.gate_ledger.is_empty(),
            "failed attempts still leave an audit trail"
        );
    }
}
