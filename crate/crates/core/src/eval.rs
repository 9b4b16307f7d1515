//! Multiple-choice evaluation: each question becomes a three-option prompt
//! (memory answer, counter answer, "Uncertain."), the evaluee's reply is
//! parsed back to an option tag, and tallies aggregate into the three ratios
//! R_m, R_c, R_u — the fractions of questions answered from memory, from the
//! presented evidence, and with abstention.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conflict::{ConflictPair, ConflictStatus, QuestionType};
use crate::evidence::EvidenceStyle;
use crate::gateway::{Gateway, GatewayError, ModelRole};
use crate::strength::{strength_histogram, StrengthRecord, ALL_BINS};
use crate::template::{TemplateError, EVALUATE_WITH_EVIDENCE};
use crate::text::contains_normalized;
use crate::Score;

/// The abstention option, always offered and always listed last.
pub const UNCERTAIN_OPTION: &str = "Uncertain.";

pub const OPTION_LETTERS: [char; 3] = ['A', 'B', 'C'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionTag {
    Ma,
    Cma,
    Uct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptionOrder {
    MaFirst,
    CmaFirst,
}

impl OptionOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            OptionOrder::MaFirst => "ma-first",
            OptionOrder::CmaFirst => "cma-first",
        }
    }
}

impl fmt::Display for OptionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptionOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ma-first" | "ma_first" => Ok(OptionOrder::MaFirst),
            "cma-first" | "cma_first" => Ok(OptionOrder::CmaFirst),
            other => Err(format!("unknown option order {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McOption {
    pub letter: char,
    pub text: String,
    pub tag: OptionTag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McInstance {
    pub question_id: String,
    pub question: String,
    pub evidence: String,
    pub style: EvidenceStyle,
    pub order: OptionOrder,
    pub options: Vec<McOption>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsePath {
    LetterPrefix,
    OptionTextMatch,
    RepromptedThenUct,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub style: EvidenceStyle,
    pub order: OptionOrder,
    pub outcome: OptionTag,
    pub raw_response: String,
    pub parse_path: ParsePath,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot build a multiple-choice instance without evidence")]
    MissingEvidence,
    #[error(
        "conflict pair for {question_id} has status {status:?}; evaluation needs a valid pair"
    )]
    ConflictNotValid {
        question_id: String,
        status: ConflictStatus,
    },
    #[error("cannot aggregate an empty record group")]
    EmptyGroup,
    #[error("unknown grouping dimension {0:?}")]
    UnknownDimension(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Lays out the three options for one composed evidence text. The order
/// setting permutes only the MA and CMA positions; "Uncertain." keeps the
/// last slot in both arrangements.
pub fn build_mc(
    question_id: &str,
    question: &str,
    evidence: &str,
    pair: &ConflictPair,
    style: EvidenceStyle,
    order: OptionOrder,
) -> Result<McInstance, EvalError> {
    if evidence.trim().is_empty() {
        return Err(EvalError::MissingEvidence);
    }
    if pair.status != ConflictStatus::Valid {
        return Err(EvalError::ConflictNotValid {
            question_id: question_id.to_string(),
            status: pair.status,
        });
    }
    let (first, second) = match order {
        OptionOrder::MaFirst => (
            (pair.ma.as_str(), OptionTag::Ma),
            (pair.cma.as_str(), OptionTag::Cma),
        ),
        OptionOrder::CmaFirst => (
            (pair.cma.as_str(), OptionTag::Cma),
            (pair.ma.as_str(), OptionTag::Ma),
        ),
    };
    let options = vec![
        McOption {
            letter: 'A',
            text: first.0.to_string(),
            tag: first.1,
        },
        McOption {
            letter: 'B',
            text: second.0.to_string(),
            tag: second.1,
        },
        McOption {
            letter: 'C',
            text: UNCERTAIN_OPTION.to_string(),
            tag: OptionTag::Uct,
        },
    ];
    Ok(McInstance {
        question_id: question_id.to_string(),
        question: question.to_string(),
        evidence: evidence.to_string(),
        style,
        order,
        options,
    })
}

/// "A", "a:", "B." and the like at the very start of the response.
fn prefix_letter(raw: &str) -> Option<usize> {
    let mut chars = raw.trim_start().chars();
    let idx = match chars.next()? {
        'A' | 'a' => 0,
        'B' | 'b' => 1,
        'C' | 'c' => 2,
        _ => return None,
    };
    match chars.next() {
        None => Some(idx),
        Some(c) if !c.is_alphanumeric() => Some(idx),
        Some(_) => None,
    }
}

/// A standalone uppercase option letter anywhere in the response, as in
/// "The answer is C." Lowercase is ignored here so the article "a" never
/// counts, and two different letters make the response ambiguous.
fn scan_letter(raw: &str) -> Option<usize> {
    let mut found: Option<usize> = None;
    for token in raw.split_whitespace() {
        let core = token.trim_matches(|c: char| !c.is_alphanumeric());
        let idx = match core {
            "A" => 0,
            "B" => 1,
            "C" => 2,
            _ => continue,
        };
        match found {
            None => found = Some(idx),
            Some(prev) if prev == idx => {}
            Some(_) => return None,
        }
    }
    found
}

/// Exactly one option's text quoted in the response.
fn text_match(instance: &McInstance, raw: &str) -> Option<usize> {
    let hits: Vec<usize> = instance
        .options
        .iter()
        .enumerate()
        .filter(|(_, o)| contains_normalized(raw, &o.text))
        .map(|(i, _)| i)
        .collect();
    if hits.len() == 1 {
        Some(hits[0])
    } else {
        None
    }
}

/// Maps a raw response onto an option tag, or `None` when nothing in the
/// response identifies exactly one option.
pub fn match_choice(instance: &McInstance, raw: &str) -> Option<(OptionTag, ParsePath)> {
    if let Some(i) = prefix_letter(raw).or_else(|| scan_letter(raw)) {
        return Some((instance.options[i].tag, ParsePath::LetterPrefix));
    }
    text_match(instance, raw).map(|i| (instance.options[i].tag, ParsePath::OptionTextMatch))
}

/// Asks the evaluee once, re-prompts once with a single-letter instruction if
/// the reply names no option, and falls back to "Uncertain." so every
/// instance yields a record — the ratio denominator counts all questions.
pub fn evaluate_instance(gw: &Gateway, instance: &McInstance) -> Result<EvalRecord, EvalError> {
    let slots = [
        ("[evidence]", instance.evidence.as_str()),
        ("[question]", instance.question.as_str()),
        ("[option 1]", instance.options[0].text.as_str()),
        ("[option 2]", instance.options[1].text.as_str()),
        ("[option 3]", instance.options[2].text.as_str()),
    ];
    let raw = gw.call(ModelRole::Evaluee, &EVALUATE_WITH_EVIDENCE, &slots, 0)?;
    if let Some((outcome, parse_path)) = match_choice(instance, &raw) {
        return Ok(record(instance, outcome, raw, parse_path));
    }
    let base = EVALUATE_WITH_EVIDENCE.render(&slots)?;
    let reprompt = format!("{base}\nAnswer with a single letter: A, B, or C.");
    let raw = gw.call_rendered(ModelRole::Evaluee, EVALUATE_WITH_EVIDENCE.name, reprompt, 1)?;
    match match_choice(instance, &raw) {
        Some((outcome, parse_path)) => Ok(record(instance, outcome, raw, parse_path)),
        None => Ok(record(
            instance,
            OptionTag::Uct,
            raw,
            ParsePath::RepromptedThenUct,
        )),
    }
}

fn record(
    instance: &McInstance,
    outcome: OptionTag,
    raw: String,
    parse_path: ParsePath,
) -> EvalRecord {
    EvalRecord {
        question_id: instance.question_id.clone(),
        style: instance.style,
        order: instance.order,
        outcome,
        raw_response: raw,
        parse_path,
    }
}

// --- aggregation ---

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub model: String,
    pub style: EvidenceStyle,
    pub order: OptionOrder,
    /// Extra grouping value: "all", a strength bin, an entity class, or the
    /// order label, depending on the requested dimension.
    pub group: String,
    pub f_m: usize,
    pub f_c: usize,
    pub f_u: usize,
    pub r_m: Score,
    pub r_c: Score,
    pub r_u: Score,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_strength: Option<Score>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSummary {
    pub f_m: usize,
    pub f_c: usize,
    pub f_u: usize,
    pub r_m: Score,
    pub r_c: Score,
    pub r_u: Score,
    pub n: usize,
    pub avg_strength: Option<Score>,
}

/// Counts outcomes and normalizes by the group size, so the three ratios sum
/// to one. Average strength is taken over the records whose question has a
/// strength score.
pub fn compute_ratios(
    records: &[&EvalRecord],
    strengths: &HashMap<String, StrengthRecord>,
) -> Result<RatioSummary, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let mut counts = [0usize; 3];
    let mut strength_sum = 0.0;
    let mut strength_n = 0usize;
    for r in records {
        let slot = match r.outcome {
            OptionTag::Ma => 0,
            OptionTag::Cma => 1,
            OptionTag::Uct => 2,
        };
        counts[slot] += 1;
        if let Some(s) = strengths.get(&r.question_id) {
            strength_sum += s.value;
            strength_n += 1;
        }
    }
    let n = records.len();
    let denom = n as Score;
    Ok(RatioSummary {
        f_m: counts[0],
        f_c: counts[1],
        f_u: counts[2],
        r_m: counts[0] as Score / denom,
        r_c: counts[1] as Score / denom,
        r_u: counts[2] as Score / denom,
        n,
        avg_strength: (strength_n > 0).then(|| strength_sum / strength_n as Score),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupDim {
    All,
    StrengthBin,
    EntityType,
    Order,
}

impl FromStr for GroupDim {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(GroupDim::All),
            "strength-bin" | "strength_bin" | "bin" => Ok(GroupDim::StrengthBin),
            "entity-type" | "entity_type" | "entity" => Ok(GroupDim::EntityType),
            "order" => Ok(GroupDim::Order),
            other => Err(EvalError::UnknownDimension(other.to_string())),
        }
    }
}

/// The coarse entity classes used for per-type reporting: person-flavored
/// questions, locations, and times. Other question types stay out of this
/// grouping.
pub fn entity_group(qt: QuestionType) -> Option<&'static str> {
    use QuestionType::*;
    match qt {
        Who | WhoSings | WhoPlays | WhoWrites | WhoWins | WhatName => Some("PER"),
        Where | WhichCountry => Some("LOC"),
        When | WhatYear | WhichYear => Some("TIM"),
        _ => None,
    }
}

pub struct ReportInputs<'a> {
    pub dataset: &'a str,
    pub model: &'a str,
    pub records: &'a [EvalRecord],
    pub strengths: &'a HashMap<String, StrengthRecord>,
    pub question_types: &'a HashMap<String, QuestionType>,
}

fn style_rank(style: EvidenceStyle) -> usize {
    EvidenceStyle::all()
        .iter()
        .position(|s| *s == style)
        .unwrap_or(usize::MAX)
}

/// One report per (style, order) cell and requested dimension value. Cells
/// with no records are skipped rather than reported as empty.
pub fn group_and_report(
    inputs: &ReportInputs<'_>,
    dims: &[GroupDim],
) -> Result<Vec<MetricsReport>, EvalError> {
    let mut cells: BTreeMap<(usize, OptionOrder), Vec<&EvalRecord>> = BTreeMap::new();
    for r in inputs.records {
        cells
            .entry((style_rank(r.style), r.order))
            .or_default()
            .push(r);
    }

    let dims = if dims.is_empty() {
        &[GroupDim::All][..]
    } else {
        dims
    };
    let mut reports = Vec::new();
    for ((_, order), cell) in &cells {
        let style = cell[0].style;
        for dim in dims {
            let mut partitions: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
            for &r in cell {
                let key = match dim {
                    GroupDim::All => Some("all".to_string()),
                    GroupDim::Order => Some(order.to_string()),
                    GroupDim::StrengthBin => inputs
                        .strengths
                        .get(&r.question_id)
                        .map(|s| s.bin.to_string()),
                    GroupDim::EntityType => inputs
                        .question_types
                        .get(&r.question_id)
                        .and_then(|qt| entity_group(*qt))
                        .map(str::to_string),
                };
                if let Some(key) = key {
                    partitions.entry(key).or_default().push(r);
                }
            }
            for (group, members) in partitions {
                let summary = compute_ratios(&members, inputs.strengths)?;
                reports.push(MetricsReport {
                    dataset: inputs.dataset.to_string(),
                    model: inputs.model.to_string(),
                    style,
                    order: *order,
                    group,
                    f_m: summary.f_m,
                    f_c: summary.f_c,
                    f_u: summary.f_u,
                    r_m: summary.r_m,
                    r_c: summary.r_c,
                    r_u: summary.r_u,
                    n: summary.n,
                    avg_strength: summary.avg_strength,
                });
            }
        }
    }
    Ok(reports)
}

// --- exports ---

fn percent(r: Score) -> String {
    format!("{:.2}", r * 100.0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Main metrics table; ratios are percentages with two decimals.
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out =
        String::from("dataset,model,style,sentences,order,group,R_m,R_c,R_u,n,avg_strength\n");
    for r in reports {
        let avg = r
            .avg_strength
            .map(|v| format!("{v:.4}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(&r.dataset),
            csv_field(&r.model),
            r.style.kind,
            r.style.sentences,
            r.order,
            csv_field(&r.group),
            percent(r.r_m),
            percent(r.r_c),
            percent(r.r_u),
            r.n,
            avg,
        ));
    }
    out
}

/// Ratio-versus-strength-bin rows only, for charting.
pub fn ratio_by_bin_csv(reports: &[MetricsReport]) -> String {
    let bins: Vec<String> = ALL_BINS.iter().map(|b| b.to_string()).collect();
    let rows: Vec<&MetricsReport> = reports.iter().filter(|r| bins.contains(&r.group)).collect();
    let mut out = String::from("dataset,model,style,sentences,order,bin,R_m,R_c,R_u,n\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(&r.dataset),
            csv_field(&r.model),
            r.style.kind,
            r.style.sentences,
            r.order,
            r.group,
            percent(r.r_m),
            percent(r.r_c),
            percent(r.r_u),
            r.n,
        ));
    }
    out
}

/// Average strength against R_m and R_u per (style, order) cell, for the
/// strength-versus-behavior scatter.
pub fn scatter_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("dataset,model,style,sentences,order,avg_strength,R_m,R_u\n");
    for r in reports {
        let Some(avg) = r.avg_strength else { continue };
        out.push_str(&format!(
            "{},{},{},{},{},{avg:.4},{},{}\n",
            csv_field(&r.dataset),
            csv_field(&r.model),
            r.style.kind,
            r.style.sentences,
            r.order,
            percent(r.r_m),
            percent(r.r_u),
        ));
    }
    out
}

/// Fixed-width strength histogram over [-2, 0] in 0.25 steps.
pub fn strength_hist_csv(dataset: &str, model: &str, values: &[Score]) -> String {
    let hist = strength_histogram(values);
    let mut out = String::from("dataset,model,lo,hi,count\n");
    for (i, count) in hist.iter().enumerate() {
        let lo = -2.0 + 0.25 * i as Score;
        let hi = lo + 0.25;
        out.push_str(&format!(
            "{},{},{lo:.2},{hi:.2},{count}\n",
            csv_field(dataset),
            csv_field(model),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::conflict::ConflictChecks;
    use crate::gateway::mock::FnChatBackend;
    use crate::strength::StrengthBin;
    use crate::template::{self, Template};

    fn valid_pair() -> ConflictPair {
        ConflictPair {
            question_id: "q-1".into(),
            ma: "There are 23 episodes.".into(),
            cma: "There are 15 episodes.".into(),
            alt_entity: Some("15".into()),
            checks: ConflictChecks {
                contradiction: true,
                alt_not_in_question: true,
                alt_not_in_answers: true,
            },
            status: ConflictStatus::Valid,
            attempts: Vec::new(),
        }
    }

    fn instance(order: OptionOrder) -> McInstance {
        build_mc(
            "q-1",
            "how many episodes are in chicago fire season 4",
            "There are 15 episodes. Network listings confirm this count.",
            &valid_pair(),
            "direct:1".parse().unwrap(),
            order,
        )
        .unwrap()
    }

    fn evaluee_gateway(backend: Arc<dyn crate::gateway::ChatBackend>) -> Gateway {
        Gateway::builder().chat(ModelRole::Evaluee, backend).build()
    }

    #[test]
    fn options_keep_tags_while_order_permutes_letters() {
        let ma_first = instance(OptionOrder::MaFirst);
        assert_eq!(ma_first.options.len(), 3);
        assert_eq!(ma_first.options[0].tag, OptionTag::Ma);
        assert_eq!(ma_first.options[0].letter, 'A');
        assert_eq!(ma_first.options[1].tag, OptionTag::Cma);
        assert_eq!(ma_first.options[2].tag, OptionTag::Uct);
        assert_eq!(ma_first.options[2].text, UNCERTAIN_OPTION);
        assert_eq!(ma_first.options[2].letter, 'C');

        let cma_first = instance(OptionOrder::CmaFirst);
        assert_eq!(cma_first.options[0].tag, OptionTag::Cma);
        assert_eq!(cma_first.options[0].text, "There are 15 episodes.");
        assert_eq!(cma_first.options[1].tag, OptionTag::Ma);
        assert_eq!(cma_first.options[2].tag, OptionTag::Uct);
    }

    #[test]
    fn build_mc_rejects_missing_evidence_and_invalid_pairs() {
        let style: EvidenceStyle = "direct:1".parse().unwrap();
        let err = build_mc(
            "q-1",
            "q",
            "   ",
            &valid_pair(),
            style,
            OptionOrder::MaFirst,
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::MissingEvidence));

        let mut filtered = valid_pair();
        filtered.status = ConflictStatus::FilteredOut;
        let err = build_mc(
            "q-1",
            "q",
            "evidence.",
            &filtered,
            style,
            OptionOrder::MaFirst,
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::ConflictNotValid { .. }));
    }

    #[test]
    fn choice_parsing_walks_the_fallback_ladder() {
        let inst = instance(OptionOrder::MaFirst);
        let b = "B: Michigan State University has the most Big Ten championships.";
        assert_eq!(
            match_choice(&inst, b),
            Some((OptionTag::Cma, ParsePath::LetterPrefix))
        );
        assert_eq!(
            match_choice(&inst, "The answer is C."),
            Some((OptionTag::Uct, ParsePath::LetterPrefix))
        );
        assert_eq!(
            match_choice(&inst, "b."),
            Some((OptionTag::Cma, ParsePath::LetterPrefix))
        );
        assert_eq!(
            match_choice(&inst, "I believe there are 15 episodes. in that season"),
            Some((OptionTag::Cma, ParsePath::OptionTextMatch))
        );
        assert_eq!(match_choice(&inst, "certainly unclear"), None);
        assert_eq!(
            match_choice(&inst, "Either A or B could work."),
            None,
            "ambiguous letters"
        );
    }

    #[test]
    fn reprompt_recovers_or_falls_back_to_uncertain() {
        let flaky = FnChatBackend::new("flaky", |req| {
            assert!(req.attempt > 0 || !req.prompt.contains("single letter"));
            Ok(if req.attempt == 0 {
                "mumble mumble".to_string()
            } else {
                "B".to_string()
            })
        });
        let gw = evaluee_gateway(Arc::new(flaky));
        let rec = evaluate_instance(&gw, &instance(OptionOrder::MaFirst)).unwrap();
        assert_eq!(rec.outcome, OptionTag::Cma);
        assert_eq!(rec.parse_path, ParsePath::LetterPrefix);

        let hopeless = FnChatBackend::new("hopeless", |_| Ok("static noise".to_string()));
        let gw = evaluee_gateway(Arc::new(hopeless));
        let rec = evaluate_instance(&gw, &instance(OptionOrder::MaFirst)).unwrap();
        assert_eq!(rec.outcome, OptionTag::Uct);
        assert_eq!(rec.parse_path, ParsePath::RepromptedThenUct);
    }

    fn rec(id: &str, outcome: OptionTag) -> EvalRecord {
        EvalRecord {
            question_id: id.to_string(),
            style: "direct:1".parse().unwrap(),
            order: OptionOrder::MaFirst,
            outcome,
            raw_response: String::new(),
            parse_path: ParsePath::LetterPrefix,
        }
    }

    #[test]
    fn ratios_normalize_and_ignore_record_order() {
        let strengths = HashMap::new();
        let mut records = Vec::new();
        for i in 0..2 {
            records.push(rec(&format!("m{i}"), OptionTag::Ma));
        }
        for i in 0..5 {
            records.push(rec(&format!("c{i}"), OptionTag::Cma));
        }
        for i in 0..3 {
            records.push(rec(&format!("u{i}"), OptionTag::Uct));
        }
        let refs: Vec<&EvalRecord> = records.iter().collect();
        let s = compute_ratios(&refs, &strengths).unwrap();
        assert_eq!((s.f_m, s.f_c, s.f_u), (2, 5, 3));
        assert!((s.r_m - 0.2).abs() < 1e-12);
        assert!((s.r_c - 0.5).abs() < 1e-12);
        assert!((s.r_u - 0.3).abs() < 1e-12);
        assert!((s.r_m + s.r_c + s.r_u - 1.0).abs() < 1e-12);

        let mut shuffled: Vec<&EvalRecord> = refs.clone();
        shuffled.reverse();
        shuffled.rotate_left(3);
        let s2 = compute_ratios(&shuffled, &strengths).unwrap();
        assert_eq!(s, s2);

        let lone = [rec("u0", OptionTag::Uct)];
        let refs: Vec<&EvalRecord> = lone.iter().collect();
        let s = compute_ratios(&refs, &strengths).unwrap();
        assert_eq!((s.r_m, s.r_c, s.r_u), (0.0, 0.0, 1.0));

        assert!(matches!(
            compute_ratios(&[], &strengths),
            Err(EvalError::EmptyGroup)
        ));
    }

    /// An evaluee that parses the rendered prompt and picks the option whose
    /// text the evidence contains.
    fn evidence_follower() -> FnChatBackend {
        FnChatBackend::new("follower", |req| {
            let values = Template::parse(&EVALUATE_WITH_EVIDENCE, &req.prompt)
                .expect("prompt should match the evaluation template");
            let evidence = template::slot_value(&values, "[evidence]")
                .unwrap()
                .to_string();
            for (slot, letter) in [
                ("[option 1]", "A"),
                ("[option 2]", "B"),
                ("[option 3]", "C"),
            ] {
                let text = template::slot_value(&values, slot).unwrap();
                if contains_normalized(&evidence, text) {
                    return Ok(format!("{letter}: {text}"));
                }
            }
            Ok("C: Uncertain.".to_string())
        })
    }

    /// An evaluee that always repeats its internal answer, ignoring evidence.
    fn memory_clinger(planted: &'static str) -> FnChatBackend {
        FnChatBackend::new("clinger", move |req| {
            let values = Template::parse(&EVALUATE_WITH_EVIDENCE, &req.prompt)
                .expect("prompt should match the evaluation template");
            for (slot, letter) in [
                ("[option 1]", "A"),
                ("[option 2]", "B"),
                ("[option 3]", "C"),
            ] {
                let text = template::slot_value(&values, slot).unwrap();
                if contains_normalized(text, planted) {
                    return Ok(format!("{letter}: {text}"));
                }
            }
            Ok("C: Uncertain.".to_string())
        })
    }

    #[test]
    fn faithful_and_stubborn_evaluees_split_the_ratios() {
        let strengths = HashMap::new();
        for order in [OptionOrder::MaFirst, OptionOrder::CmaFirst] {
            let gw = evaluee_gateway(Arc::new(evidence_follower()));
            let rec = evaluate_instance(&gw, &instance(order)).unwrap();
            assert_eq!(rec.outcome, OptionTag::Cma, "order {order}");
            let records = [rec];
            let refs: Vec<&EvalRecord> = records.iter().collect();
            assert_eq!(compute_ratios(&refs, &strengths).unwrap().r_c, 1.0);

            let gw = evaluee_gateway(Arc::new(memory_clinger("23 episodes")));
            let rec = evaluate_instance(&gw, &instance(order)).unwrap();
            assert_eq!(rec.outcome, OptionTag::Ma, "order {order}");
            let records = [rec];
            let refs: Vec<&EvalRecord> = records.iter().collect();
            assert_eq!(compute_ratios(&refs, &strengths).unwrap().r_m, 1.0);
        }
    }

    fn strength_record(id: &str, value: Score, bin: StrengthBin) -> StrengthRecord {
        StrengthRecord {
            question_id: id.to_string(),
            sizes: vec![7],
            value,
            bin,
            n: 7,
        }
    }

    #[test]
    fn bin_grouping_partitions_without_losing_records() {
        let mut records = Vec::new();
        let mut strengths = HashMap::new();
        let mut types = HashMap::new();
        let bins = [
            (StrengthBin::Low, -1.5),
            (StrengthBin::MidLow, -0.8),
            (StrengthBin::MidHigh, -0.3),
            (StrengthBin::High, -0.1),
        ];
        for (i, (bin, value)) in bins.iter().enumerate() {
            for j in 0..(i + 1) {
                let id = format!("q-{i}-{j}");
                records.push(rec(
                    &id,
                    if j == 0 {
                        OptionTag::Ma
                    } else {
                        OptionTag::Cma
                    },
                ));
                strengths.insert(id.clone(), strength_record(&id, *value, *bin));
                types.insert(id, QuestionType::Who);
            }
        }
        let inputs = ReportInputs {
            dataset: "nq",
            model: "mock",
            records: &records,
            strengths: &strengths,
            question_types: &types,
        };

        let by_bin = group_and_report(&inputs, &[GroupDim::StrengthBin]).unwrap();
        assert_eq!(by_bin.len(), 4);
        let all = group_and_report(&inputs, &[GroupDim::All]).unwrap();
        assert_eq!(all.len(), 1);
        let binned_total: usize = by_bin.iter().map(|r| r.n).sum();
        assert_eq!(binned_total, all[0].n);
        let binned_fm: usize = by_bin.iter().map(|r| r.f_m).sum();
        assert_eq!(binned_fm, all[0].f_m);

        let by_entity = group_and_report(&inputs, &[GroupDim::EntityType]).unwrap();
        assert_eq!(by_entity.len(), 1);
        assert_eq!(by_entity[0].group, "PER");

        assert!(matches!(
            "velocity".parse::<GroupDim>(),
            Err(EvalError::UnknownDimension(d)) if d == "velocity"
        ));
    }

    #[test]
    fn entity_grouping_covers_the_reported_classes() {
        assert_eq!(entity_group(QuestionType::WhoSings), Some("PER"));
        assert_eq!(entity_group(QuestionType::WhatName), Some("PER"));
        assert_eq!(entity_group(QuestionType::WhichCountry), Some("LOC"));
        assert_eq!(entity_group(QuestionType::WhatYear), Some("TIM"));
        assert_eq!(entity_group(QuestionType::HowMany), None);
    }

    #[test]
    fn csv_exports_render_percentages() {
        let report = MetricsReport {
            dataset: "popqa".into(),
            model: "mock".into(),
            style: "direct:1".parse().unwrap(),
            order: OptionOrder::MaFirst,
            group: "all".into(),
            f_m: 1,
            f_c: 226,
            f_u: 0,
            r_m: 1.0 / 227.0,
            r_c: 226.0 / 227.0,
            r_u: 0.0,
            n: 227,
            avg_strength: Some(-0.42),
        };
        let csv = metrics_csv(&[report.clone()]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "dataset,model,style,sentences,order,group,R_m,R_c,R_u,n,avg_strength"
        );
        let row = lines.next().unwrap();
        assert_eq!(
            row,
            "popqa,mock,direct,1,ma-first,all,0.44,99.56,0.00,227,-0.4200"
        );

        let scatter = scatter_csv(&[report]);
        assert!(scatter.contains("-0.4200,0.44,0.00"));

        let hist = strength_hist_csv("popqa", "mock", &[-1.9, -0.1, -0.1]);
        assert!(hist.starts_with("dataset,model,lo,hi,count\n"));
        assert!(hist.contains("popqa,mock,-2.00,-1.75,1"));
        assert!(hist.contains("popqa,mock,-0.25,0.00,2"));
        assert_eq!(hist.lines().count(), 9);
    }
}
