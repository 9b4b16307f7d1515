//! Dataset ingestion: the two source formats and the unified question record
//! the pipeline carries between stages.
//!
//! NQ-style files bring bare questions (counter answers are synthesized
//! downstream); popQA-style files arrive with MA/CMA pairs already attached
//! and a relation template whose `[subj]` slot names the question's subject,
//! so paraphrasing can happen once per template instead of once per question.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUBJECT_SLOT: &str = "[subj]";

const NQ_CATEGORIES: [&str; 5] = ["PER", "DAT", "NUM", "ORG", "LOC"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    PopQa,
    Nq,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::PopQa => "popqa",
            DatasetKind::Nq => "nq",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "popqa" => Ok(DatasetKind::PopQa),
            "nq" => Ok(DatasetKind::Nq),
            other => Err(format!(
                "unknown dataset kind {other:?} (expected popqa or nq)"
            )),
        }
    }
}

/// One line of an NQ-style ingestion file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NqRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitution_category: Option<String>,
}

/// One line of a popQA-style ingestion file. MA and CMA arrive with the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopQaRecord {
    pub id: String,
    pub question: String,
    pub relation_type: String,
    /// Question template with a `[subj]` slot, shared by every question of
    /// the same relation type.
    pub template: String,
    pub ma: String,
    pub cma: String,
}

/// Unified question carried through the pipeline stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub dataset: DatasetKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitution_category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingested_ma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingested_cma: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paraphrases: Vec<String>,
}

impl QuestionRecord {
    /// Bare NQ-style record, the common case in tests.
    pub fn nq(id: &str, text: &str) -> Self {
        QuestionRecord {
            id: id.to_string(),
            dataset: DatasetKind::Nq,
            text: text.to_string(),
            template_id: None,
            template: None,
            gold_answer: None,
            substitution_category: None,
            ingested_ma: None,
            ingested_cma: None,
            paraphrases: Vec::new(),
        }
    }

    pub fn from_nq(r: NqRecord) -> Self {
        QuestionRecord {
            id: r.id,
            dataset: DatasetKind::Nq,
            text: r.question,
            template_id: None,
            template: None,
            gold_answer: r.gold_answer,
            substitution_category: r.substitution_category,
            ingested_ma: None,
            ingested_cma: None,
            paraphrases: Vec::new(),
        }
    }

    pub fn from_popqa(r: PopQaRecord) -> Self {
        QuestionRecord {
            id: r.id,
            dataset: DatasetKind::PopQa,
            text: r.question,
            template_id: Some(r.relation_type),
            template: Some(r.template),
            gold_answer: None,
            substitution_category: None,
            ingested_ma: Some(r.ma),
            ingested_cma: Some(r.cma),
            paraphrases: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    SchemaViolation { line: usize, detail: String },
}

fn violation(line: usize, detail: impl Into<String>) -> DatasetError {
    DatasetError::SchemaViolation {
        line,
        detail: detail.into(),
    }
}

/// Loads and schema-checks an ingestion file. Line numbers are 1-based.
pub fn load_questions(path: &Path, kind: DatasetKind) -> Result<Vec<QuestionRecord>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = match kind {
            DatasetKind::Nq => {
                let r: NqRecord =
                    serde_json::from_str(&line).map_err(|e| violation(line_no, e.to_string()))?;
                if let Some(cat) = &r.substitution_category {
                    if !NQ_CATEGORIES.contains(&cat.as_str()) {
                        return Err(violation(
                            line_no,
                            format!(
                                "substitution_category {cat:?} not one of {}",
                                NQ_CATEGORIES.join("/")
                            ),
                        ));
                    }
                }
                QuestionRecord::from_nq(r)
            }
            DatasetKind::PopQa => {
                let r: PopQaRecord =
                    serde_json::from_str(&line).map_err(|e| violation(line_no, e.to_string()))?;
                if !r.template.contains(SUBJECT_SLOT) {
                    return Err(violation(
                        line_no,
                        format!("template must contain the {SUBJECT_SLOT} slot"),
                    ));
                }
                QuestionRecord::from_popqa(r)
            }
        };
        if record.id.trim().is_empty() {
            return Err(violation(line_no, "empty id"));
        }
        if record.text.trim().is_empty() {
            return Err(violation(line_no, "empty question"));
        }
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub kind: DatasetKind,
    pub records: usize,
    pub duplicate_ids: Vec<String>,
    /// NQ only: records carrying no gold answer.
    pub without_gold_answer: usize,
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} records ({}), {} duplicate id(s), {} without gold answer",
            self.records,
            self.kind,
            self.duplicate_ids.len(),
            self.without_gold_answer
        )
    }
}

pub fn validate_dataset(path: &Path, kind: DatasetKind) -> Result<DatasetSummary, DatasetError> {
    let records = load_questions(path, kind)?;
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *seen.entry(r.id.as_str()).or_insert(0) += 1;
    }
    let duplicate_ids = seen
        .iter()
        .filter(|(_, &c)| c > 1)
        .map(|(id, _)| id.to_string())
        .collect();
    let without_gold_answer = records
        .iter()
        .filter(|r| r.dataset == DatasetKind::Nq && r.gold_answer.is_none())
        .count();
    Ok(DatasetSummary {
        kind,
        records: records.len(),
        duplicate_ids,
        without_gold_answer,
    })
}

/// Recovers the `[subj]` value from a concrete question, given its template.
/// Returns None when the question does not match the template shape.
pub fn subject_for(template: &str, question: &str) -> Option<String> {
    let at = template.find(SUBJECT_SLOT)?;
    let prefix = &template[..at];
    let suffix = &template[at + SUBJECT_SLOT.len()..];
    let rest = question.strip_prefix(prefix)?;
    let subject = rest.strip_suffix(suffix)?;
    if subject.is_empty() {
        None
    } else {
        Some(subject.to_string())
    }
}

/// Fills a question template's `[subj]` slot.
pub fn instantiate_template(template: &str, subject: &str) -> String {
    template.replace(SUBJECT_SLOT, subject)
}
