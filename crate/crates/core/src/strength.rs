//! Memory-strength measurement: paraphrase a question, answer every
//! paraphrase closed-book, cluster the answers by judged consistency, and
//! score the cluster-size distribution with its negative entropy.
//!
//! A model that gives the same answer however the question is phrased lands
//! in one cluster and scores 0; a model that answers every phrasing
//! differently lands in n singletons and scores −ln n. Scores are binned into
//! the four reporting intervals over [−2, 0].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QuestionRecord;
use crate::gateway::{Gateway, GatewayError, JudgeLabel, ModelRole};
use crate::score::consistency_score;
use crate::template::{CLOSED_BOOK_QA, QUESTION_PARAPHRASE};
use crate::Score;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerSet {
    pub question_id: String,
    /// One answer per paraphrase, in paraphrase order, stored verbatim.
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSet {
    pub question_id: String,
    /// Disjoint, complete partition of answer indices 0..n, in creation order.
    pub clusters: Vec<Vec<usize>>,
    pub n: usize,
}

impl ClusterSet {
    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    fn validate(&self) -> Result<(), StrengthError> {
        let mut seen = vec![false; self.n];
        let mut total = 0usize;
        for cluster in &self.clusters {
            for &i in cluster {
                if i >= self.n || seen[i] {
                    return Err(StrengthError::InvalidPartition {
                        n: self.n,
                        detail: format!("index {i} out of range or repeated"),
                    });
                }
                seen[i] = true;
                total += 1;
            }
        }
        if total != self.n {
            return Err(StrengthError::InvalidPartition {
                n: self.n,
                detail: format!("{total} indices clustered"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrengthBin {
    Low,
    MidLow,
    MidHigh,
    High,
}

impl std::fmt::Display for StrengthBin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StrengthBin::Low => "low",
            StrengthBin::MidLow => "mid_low",
            StrengthBin::MidHigh => "mid_high",
            StrengthBin::High => "high",
        })
    }
}

pub const ALL_BINS: [StrengthBin; 4] = [
    StrengthBin::Low,
    StrengthBin::MidLow,
    StrengthBin::MidHigh,
    StrengthBin::High,
];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StrengthScore {
    pub value: Score,
    pub n: usize,
    pub bin: StrengthBin,
}

/// Per-question strength line persisted by the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrengthRecord {
    pub question_id: String,
    pub sizes: Vec<usize>,
    pub value: Score,
    pub bin: StrengthBin,
    pub n: usize,
}

#[derive(Debug, Error)]
pub enum StrengthError {
    #[error("question {id} excluded: {reason}")]
    ExcludedQuestion { id: String, reason: String },
    #[error("invalid partition for n={n}: {detail}")]
    InvalidPartition { n: usize, detail: String },
    #[error("strength value {value} outside [-2, 0]")]
    OutOfRange { value: Score },
    #[error("judging answers {i} and {j}: {source}")]
    ClusterJudge {
        i: usize,
        j: usize,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone)]
pub struct ParaphraseOutcome {
    pub record: QuestionRecord,
    /// Total single-slot regenerations that were needed.
    pub regenerations: u32,
}

/// Strips a leading list marker like "3. ", "3) ", "3: ", or "- ".
fn strip_list_marker(line: &str) -> &str {
    let unnumbered = line.trim_start_matches(|c: char| c.is_ascii_digit());
    if unnumbered.len() != line.len() {
        if let Some(rest) = unnumbered.strip_prefix(['.', ')', ':']) {
            return rest.trim_start();
        }
    }
    match line.strip_prefix(['-', '*']) {
        Some(rest) => rest.trim_start(),
        None => line,
    }
}

fn parse_paraphrase_lines(raw: &str, n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let item = strip_list_marker(line);
        if !item.is_empty() {
            out.push(item.to_string());
        }
        if out.len() == n {
            break;
        }
    }
    out
}

/// Asks the generator for n paraphrases in one shot, then gates each one
/// through the equivalence judge. A rejected (or missing) slot is regenerated
/// individually; a slot that fails `max_regen` times excludes the question.
pub fn generate_paraphrases(
    gw: &Gateway,
    q: &QuestionRecord,
    n: usize,
    max_regen: u32,
) -> Result<ParaphraseOutcome, StrengthError> {
    generate_paraphrases_with(gw, q, n, max_regen, &|_| true)
}

/// Like [`generate_paraphrases`], with an extra structural acceptance check
/// applied before the judge. Template-level paraphrasing uses it to insist
/// the subject placeholder survives the rewrite.
pub fn generate_paraphrases_with(
    gw: &Gateway,
    q: &QuestionRecord,
    n: usize,
    max_regen: u32,
    accept: &dyn Fn(&str) -> bool,
) -> Result<ParaphraseOutcome, StrengthError> {
    assert!(n >= 2, "a single paraphrase cannot measure consistency");
    let n_str = n.to_string();
    let raw = gw.call(
        ModelRole::Generator,
        &QUESTION_PARAPHRASE,
        &[("[N]", &n_str), ("[Question]", &q.text)],
        0,
    )?;
    let mut candidates = parse_paraphrase_lines(&raw, n);
    candidates.resize(n, String::new());

    let mut accepted = Vec::with_capacity(n);
    let mut regenerations = 0u32;
    // A monotone ordinal shared by all regeneration calls for this question:
    // the rendered [N]=1 prompt is identical every time, so the ordinal is
    // what makes each retry a fresh completion.
    let mut regen_ordinal = 0u32;
    for mut candidate in candidates {
        let mut failures = 0u32;
        loop {
            if !candidate.trim().is_empty()
                && accept(&candidate)
                && gw.judge_equivalence(&q.text, &candidate)?.label == JudgeLabel::Same
            {
                accepted.push(candidate);
                break;
            }
            failures += 1;
            if failures >= max_regen {
                return Err(StrengthError::ExcludedQuestion {
                    id: q.id.clone(),
                    reason: format!("paraphrase slot failed the equivalence gate {failures} times"),
                });
            }
            regen_ordinal += 1;
            regenerations += 1;
            let raw = gw.call(
                ModelRole::Generator,
                &QUESTION_PARAPHRASE,
                &[("[N]", "1"), ("[Question]", &q.text)],
                regen_ordinal,
            )?;
            candidate = parse_paraphrase_lines(&raw, 1)
                .into_iter()
                .next()
                .unwrap_or_default();
        }
    }

    let mut record = q.clone();
    record.paraphrases = accepted;
    Ok(ParaphraseOutcome {
        record,
        regenerations,
    })
}

/// One closed-book answer per paraphrase, in order. An empty completion gets
/// one retry; a second empty excludes the question.
pub fn collect_answers(gw: &Gateway, q: &QuestionRecord) -> Result<AnswerSet, StrengthError> {
    let mut answers = Vec::with_capacity(q.paraphrases.len());
    for paraphrase in &q.paraphrases {
        let mut answer = String::new();
        for attempt in 0..=1 {
            answer = gw.call(
                ModelRole::Evaluee,
                &CLOSED_BOOK_QA,
                &[("[Question]", paraphrase)],
                attempt,
            )?;
            if !answer.trim().is_empty() {
                break;
            }
        }
        if answer.trim().is_empty() {
            return Err(StrengthError::ExcludedQuestion {
                id: q.id.clone(),
                reason: format!("empty closed-book answer for paraphrase {:?}", paraphrase),
            });
        }
        answers.push(answer);
    }
    Ok(AnswerSet {
        question_id: q.id.clone(),
        answers,
    })
}

/// Incremental clustering in answer order: an answer joins the first-created
/// cluster holding any member judged the same answer, scanning members in
/// insertion order and short-circuiting; otherwise it opens a new cluster.
pub fn cluster_answers(
    gw: &Gateway,
    answers: &AnswerSet,
    question_text: &str,
) -> Result<ClusterSet, StrengthError> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    'answers: for i in 0..answers.answers.len() {
        for cluster in clusters.iter_mut() {
            for &j in cluster.iter() {
                let verdict = gw
                    .judge_answer_consistency(
                        question_text,
                        &answers.answers[j],
                        &answers.answers[i],
                    )
                    .map_err(|source| StrengthError::ClusterJudge { i, j, source })?;
                if verdict.label == JudgeLabel::Same {
                    cluster.push(i);
                    continue 'answers;
                }
            }
        }
        clusters.push(vec![i]);
    }
    Ok(ClusterSet {
        question_id: answers.question_id.clone(),
        clusters,
        n: answers.answers.len(),
    })
}

/// Negative entropy of the cluster-size distribution, plus its reporting bin.
/// Values below −2 (possible only for n ≥ 8) are clamped to the bin frame and
/// land in `low`; the returned value itself is never clamped.
pub fn memory_strength(c: &ClusterSet) -> Result<StrengthScore, StrengthError> {
    c.validate()?;
    let sizes = c.sizes();
    let value: Score = consistency_score(&sizes);
    let bin = assign_bin(value.max(-2.0))?;
    Ok(StrengthScore { value, n: c.n, bin })
}

/// Bin assignment over [−2, 0]: low = [−2, −1], mid_low = (−1, −0.5],
/// mid_high = (−0.5, −0.25], high = (−0.25, 0].
pub fn assign_bin(value: Score) -> Result<StrengthBin, StrengthError> {
    if !(-2.0..=0.0).contains(&value) || value.is_nan() {
        return Err(StrengthError::OutOfRange { value });
    }
    Ok(if value <= -1.0 {
        StrengthBin::Low
    } else if value <= -0.5 {
        StrengthBin::MidLow
    } else if value <= -0.25 {
        StrengthBin::MidHigh
    } else {
        StrengthBin::High
    })
}

/// Eight equal-width histogram bins over [−2, 0] for the distribution export.
/// Out-of-frame values are clamped into the edge bins.
pub fn strength_histogram(values: &[Score]) -> [usize; 8] {
    let mut bins = [0usize; 8];
    for &v in values {
        let idx = (((v + 2.0) / 0.25).floor() as isize).clamp(0, 7) as usize;
        bins[idx] += 1;
    }
    bins
}
