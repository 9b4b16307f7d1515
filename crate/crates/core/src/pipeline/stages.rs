//! Stage bodies and the runner that sequences them. Every stage reads the
//! checkpoint files of its upstream stages, processes only the questions not
//! yet present in its own output, and appends results in dataset order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::io::{read_jsonl, read_jsonl_resume, write_text, JsonlWriter};
use super::{build_gateway, process_ordered, PipelineError, RunConfig, RunManifest};
use crate::conflict::{
    classify_question, entity_type_for, generate_cma, generate_ma, validate_ingested_pair,
    ConflictError, ConflictPair, ConflictStatus, QuestionType,
};
use crate::dataset::{
    instantiate_template, load_questions, subject_for, QuestionRecord, SUBJECT_SLOT,
};
use crate::eval::{
    build_mc, evaluate_instance, group_and_report, metrics_csv, ratio_by_bin_csv, scatter_csv,
    strength_hist_csv, EvalRecord, GroupDim, MetricsReport, ReportInputs,
};
use crate::evidence::{build_bundle, compose, EvidenceBundle, EvidenceKind, EvidenceStyle};
use crate::gateway::Gateway;
use crate::strength::{
    cluster_answers, collect_answers, generate_paraphrases, generate_paraphrases_with,
    memory_strength, AnswerSet, StrengthError, StrengthRecord,
};
use crate::Score;

pub const PARAPHRASES_FILE: &str = "paraphrases.jsonl";
pub const EXCLUSIONS_FILE: &str = "exclusions.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";
pub const STRENGTH_FILE: &str = "strength.jsonl";
pub const CONFLICT_FILE: &str = "conflict.jsonl";
pub const EVIDENCE_FILE: &str = "evidence.jsonl";
pub const EVAL_RECORDS_FILE: &str = "eval_records.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const RATIO_BY_BIN_CSV: &str = "ratio_by_bin.csv";
pub const SCATTER_CSV: &str = "scatter.csv";
pub const STRENGTH_HIST_CSV: &str = "strength_hist.csv";
pub const STAGE_COUNTS_CSV: &str = "stage_counts.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Paraphrase,
    Strength,
    Conflict,
    Evidence,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Paraphrase,
        Stage::Strength,
        Stage::Conflict,
        Stage::Evidence,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Paraphrase => "paraphrase",
            Stage::Strength => "strength",
            Stage::Conflict => "conflict",
            Stage::Evidence => "evidence",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Paraphrase => &[],
            Stage::Strength => &[Stage::Paraphrase],
            Stage::Conflict => &[Stage::Strength],
            Stage::Evidence => &[Stage::Conflict],
            Stage::Evaluate => &[Stage::Evidence],
            Stage::Report => &[Stage::Evaluate],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// A question dropped at some stage, with the reason kept for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub question_id: String,
    pub stage: String,
    pub reason: String,
}

enum Produced<T> {
    Kept(T),
    Excluded(String),
}

pub struct Runner {
    cfg: RunConfig,
    gw: Gateway,
    resume: bool,
}

fn ids_of<F: Fn(&serde_json::Value) -> Option<&str>>(
    path: &Path,
    get: F,
) -> Result<HashSet<String>, PipelineError> {
    let rows: Vec<serde_json::Value> = read_jsonl_resume(path)?;
    Ok(rows
        .iter()
        .filter_map(|v| get(v).map(str::to_string))
        .collect())
}

fn question_ids(path: &Path) -> Result<HashSet<String>, PipelineError> {
    ids_of(path, |v| v.get("question_id").and_then(|x| x.as_str()))
}

fn style_in_group1(style: EvidenceStyle) -> bool {
    matches!(
        style.kind,
        EvidenceKind::Direct | EvidenceKind::DirectPlusParaphrase
    )
}

fn style_in_group2(style: EvidenceStyle) -> bool {
    matches!(
        style.kind,
        EvidenceKind::Indirect | EvidenceKind::DirectPlusIndirect
    ) || (style.kind == EvidenceKind::Direct && style.sentences == 1)
}

impl Runner {
    pub fn new(cfg: RunConfig, resume: bool) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let gw = build_gateway(&cfg)?;
        Ok(Runner { cfg, gw, resume })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gw
    }

    fn path(&self, file: &str) -> PathBuf {
        self.cfg.out.join(file)
    }

    /// Runs one stage: checks upstream completion, no-ops if already done,
    /// clears partial output unless resuming, then executes and records the
    /// result in the manifest.
    pub fn run_stage(&self, stage: Stage) -> Result<RunManifest, PipelineError> {
        std::fs::create_dir_all(&self.cfg.out).map_err(|e| PipelineError::io(&self.cfg.out, e))?;
        let digest = self.cfg.digest();
        let mut manifest = RunManifest::load_or_create(&self.cfg.out, &digest)?;
        for dep in stage.deps() {
            if !manifest.stage_done(*dep) {
                return Err(PipelineError::MissingUpstream {
                    stage,
                    missing: *dep,
                });
            }
        }
        if manifest.stage_done(stage) {
            return Ok(manifest);
        }
        if !self.resume {
            self.clear_stage_outputs(stage, &mut manifest)?;
        }

        let items = match stage {
            Stage::Paraphrase => self.stage_paraphrase(&mut manifest)?,
            Stage::Strength => self.stage_strength()?,
            Stage::Conflict => self.stage_conflict(&mut manifest)?,
            Stage::Evidence => self.stage_evidence(&mut manifest)?,
            Stage::Evaluate => self.stage_evaluate()?,
            Stage::Report => self.stage_report(&manifest)?,
        };
        manifest.counts.validate()?;
        manifest.mark_done(stage, items);
        manifest.save(&self.cfg.out)?;
        Ok(manifest)
    }

    /// All six stages in order.
    pub fn run_all(&self) -> Result<RunManifest, PipelineError> {
        let mut last = None;
        for stage in Stage::ALL {
            last = Some(self.run_stage(stage)?);
        }
        Ok(last.expect("Stage::ALL is non-empty"))
    }

    fn clear_stage_outputs(
        &self,
        stage: Stage,
        manifest: &mut RunManifest,
    ) -> Result<(), PipelineError> {
        let files: &[&str] = match stage {
            Stage::Paraphrase => &[PARAPHRASES_FILE],
            Stage::Strength => &[ANSWERS_FILE, STRENGTH_FILE],
            Stage::Conflict => &[CONFLICT_FILE],
            Stage::Evidence => &[EVIDENCE_FILE],
            Stage::Evaluate => &[EVAL_RECORDS_FILE],
            Stage::Report => &[
                METRICS_CSV,
                RATIO_BY_BIN_CSV,
                SCATTER_CSV,
                STRENGTH_HIST_CSV,
                STAGE_COUNTS_CSV,
            ],
        };
        for file in files {
            let path = self.path(file);
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| PipelineError::io(&path, e))?;
            }
        }
        // Drop this stage's exclusion lines; other stages' lines stay.
        let excl_path = self.path(EXCLUSIONS_FILE);
        let exclusions: Vec<ExclusionRecord> = read_jsonl_resume(&excl_path)?;
        if exclusions.iter().any(|e| e.stage == stage.name()) {
            let keep: String = exclusions
                .iter()
                .filter(|e| e.stage != stage.name())
                .map(|e| {
                    format!(
                        "{}\n",
                        serde_json::to_string(e).expect("exclusion serialization")
                    )
                })
                .collect();
            std::fs::write(&excl_path, keep).map_err(|e| PipelineError::io(&excl_path, e))?;
        }
        manifest.clear_stage(stage);
        Ok(())
    }

    fn excluded_at(&self, stage: Stage) -> Result<HashSet<String>, PipelineError> {
        let exclusions: Vec<ExclusionRecord> = read_jsonl_resume(&self.path(EXCLUSIONS_FILE))?;
        Ok(exclusions
            .into_iter()
            .filter(|e| e.stage == stage.name())
            .map(|e| e.question_id)
            .collect())
    }

    // --- stage 1: paraphrase ---

    fn stage_paraphrase(&self, manifest: &mut RunManifest) -> Result<usize, PipelineError> {
        let questions = load_questions(&self.cfg.dataset, self.cfg.kind)?;
        manifest.counts.initial = questions.len();

        let mut done = ids_of(&self.path(PARAPHRASES_FILE), |v| {
            v.get("id").and_then(|x| x.as_str())
        })?;
        done.extend(self.excluded_at(Stage::Paraphrase)?);
        let todo: Vec<QuestionRecord> = questions
            .into_iter()
            .filter(|q| !done.contains(&q.id))
            .collect();

        // Template-bearing records share one paraphrase set per template:
        // the template is rewritten once (the subject slot must survive each
        // rewrite), then instantiated per question.
        let mut template_sets: BTreeMap<String, Result<Vec<String>, String>> = BTreeMap::new();
        for q in &todo {
            let (Some(tid), Some(template)) = (&q.template_id, &q.template) else {
                continue;
            };
            if template_sets.contains_key(tid) || subject_for(template, &q.text).is_none() {
                continue;
            }
            let pseudo = QuestionRecord {
                text: template.clone(),
                ..q.clone()
            };
            let keeps_slot = |cand: &str| cand.matches(SUBJECT_SLOT).count() == 1;
            let outcome = match generate_paraphrases_with(
                &self.gw,
                &pseudo,
                self.cfg.n,
                self.cfg.max_regen,
                &keeps_slot,
            ) {
                Ok(out) => Ok(out.record.paraphrases),
                Err(StrengthError::ExcludedQuestion { reason, .. }) => Err(reason),
                Err(e) => return Err(e.into()),
            };
            template_sets.insert(tid.clone(), outcome);
        }

        let worker = |q: &QuestionRecord| -> Result<Produced<QuestionRecord>, PipelineError> {
            if let (Some(tid), Some(template)) = (&q.template_id, &q.template) {
                if let Some(subject) = subject_for(template, &q.text) {
                    match template_sets.get(tid) {
                        Some(Ok(set)) => {
                            let mut record = q.clone();
                            record.paraphrases = set
                                .iter()
                                .map(|tp| instantiate_template(tp, &subject))
                                .collect();
                            return Ok(Produced::Kept(record));
                        }
                        Some(Err(reason)) => {
                            return Ok(Produced::Excluded(format!(
                                "template paraphrase failed: {reason}"
                            )))
                        }
                        None => {}
                    }
                }
            }
            match generate_paraphrases(&self.gw, q, self.cfg.n, self.cfg.max_regen) {
                Ok(out) => Ok(Produced::Kept(out.record)),
                Err(StrengthError::ExcludedQuestion { reason, .. }) => {
                    Ok(Produced::Excluded(reason))
                }
                Err(e) => Err(e.into()),
            }
        };

        let mut writer = JsonlWriter::append_to(&self.path(PARAPHRASES_FILE))?;
        let mut exclusions = JsonlWriter::append_to(&self.path(EXCLUSIONS_FILE))?;
        process_ordered(
            &todo,
            self.cfg.parallelism,
            worker,
            |q, produced| match produced {
                Produced::Kept(record) => writer.append(&record),
                Produced::Excluded(reason) => exclusions.append(&ExclusionRecord {
                    question_id: q.id.clone(),
                    stage: Stage::Paraphrase.name().into(),
                    reason,
                }),
            },
        )?;

        let all: Vec<QuestionRecord> = read_jsonl(&self.path(PARAPHRASES_FILE))?;
        Ok(all.len())
    }

    // --- stage 2: strength (answers, clustering, entropy) ---

    fn stage_strength(&self) -> Result<usize, PipelineError> {
        let questions: Vec<QuestionRecord> = read_jsonl(&self.path(PARAPHRASES_FILE))?;
        let mut done = question_ids(&self.path(STRENGTH_FILE))?;
        done.extend(self.excluded_at(Stage::Strength)?);
        let answered = question_ids(&self.path(ANSWERS_FILE))?;
        let todo: Vec<QuestionRecord> = questions
            .into_iter()
            .filter(|q| !done.contains(&q.id))
            .collect();

        struct Scored {
            answers: AnswerSet,
            record: StrengthRecord,
        }

        let worker = |q: &QuestionRecord| -> Result<Produced<Scored>, PipelineError> {
            let answers = match collect_answers(&self.gw, q) {
                Ok(a) => a,
                Err(StrengthError::ExcludedQuestion { reason, .. }) => {
                    return Ok(Produced::Excluded(reason))
                }
                Err(e) => return Err(e.into()),
            };
            let clusters = cluster_answers(&self.gw, &answers, &q.text)?;
            let score = memory_strength(&clusters)?;
            let record = StrengthRecord {
                question_id: q.id.clone(),
                sizes: clusters.sizes(),
                value: score.value,
                bin: score.bin,
                n: score.n,
            };
            Ok(Produced::Kept(Scored { answers, record }))
        };

        let mut answers_out = JsonlWriter::append_to(&self.path(ANSWERS_FILE))?;
        let mut strength_out = JsonlWriter::append_to(&self.path(STRENGTH_FILE))?;
        let mut exclusions = JsonlWriter::append_to(&self.path(EXCLUSIONS_FILE))?;
        process_ordered(
            &todo,
            self.cfg.parallelism,
            worker,
            |q, produced| match produced {
                Produced::Kept(scored) => {
                    if !answered.contains(&q.id) {
                        answers_out.append(&scored.answers)?;
                    }
                    strength_out.append(&scored.record)
                }
                Produced::Excluded(reason) => exclusions.append(&ExclusionRecord {
                    question_id: q.id.clone(),
                    stage: Stage::Strength.name().into(),
                    reason,
                }),
            },
        )?;

        let all: Vec<StrengthRecord> = read_jsonl(&self.path(STRENGTH_FILE))?;
        Ok(all.len())
    }

    // --- stage 3: conflict (MA, typing, CMA, filter) ---

    fn stage_conflict(&self, manifest: &mut RunManifest) -> Result<usize, PipelineError> {
        let questions: Vec<QuestionRecord> = read_jsonl(&self.path(PARAPHRASES_FILE))?;
        let answer_sets: HashMap<String, AnswerSet> =
            read_jsonl::<AnswerSet>(&self.path(ANSWERS_FILE))?
                .into_iter()
                .map(|a| (a.question_id.clone(), a))
                .collect();
        let scored = question_ids(&self.path(STRENGTH_FILE))?;
        let mut done = question_ids(&self.path(CONFLICT_FILE))?;
        done.extend(self.excluded_at(Stage::Conflict)?);
        let todo: Vec<QuestionRecord> = questions
            .into_iter()
            .filter(|q| {
                scored.contains(&q.id) && answer_sets.contains_key(&q.id) && !done.contains(&q.id)
            })
            .collect();

        let worker = |q: &QuestionRecord| -> Result<Produced<ConflictPair>, PipelineError> {
            let answers = &answer_sets[&q.id];
            if let (Some(ma), Some(cma)) = (&q.ingested_ma, &q.ingested_cma) {
                let pair = validate_ingested_pair(&self.gw, q, ma, cma, answers)?;
                return Ok(Produced::Kept(pair));
            }
            let qt = classify_question(&q.text);
            let Some(et) = entity_type_for(qt) else {
                return Ok(Produced::Excluded(format!(
                    "question type {qt} is not processable"
                )));
            };
            let ma = match generate_ma(&self.gw, q) {
                Ok(ma) => ma,
                Err(ConflictError::ExcludedQuestion { reason, .. }) => {
                    return Ok(Produced::Excluded(reason))
                }
                Err(e) => return Err(e.into()),
            };
            let pair = generate_cma(&self.gw, q, &ma, et, answers)?;
            Ok(Produced::Kept(pair))
        };

        let mut pairs_out = JsonlWriter::append_to(&self.path(CONFLICT_FILE))?;
        let mut exclusions = JsonlWriter::append_to(&self.path(EXCLUSIONS_FILE))?;
        process_ordered(
            &todo,
            self.cfg.parallelism,
            worker,
            |q, produced| match produced {
                Produced::Kept(pair) => pairs_out.append(&pair),
                Produced::Excluded(reason) => exclusions.append(&ExclusionRecord {
                    question_id: q.id.clone(),
                    stage: Stage::Conflict.name().into(),
                    reason,
                }),
            },
        )?;

        let pairs: Vec<ConflictPair> = read_jsonl(&self.path(CONFLICT_FILE))?;
        manifest.counts.ma = pairs.len();
        manifest.counts.cma = pairs
            .iter()
            .filter(|p| p.status != ConflictStatus::Excluded)
            .count();
        manifest.counts.filtered = pairs
            .iter()
            .filter(|p| p.status == ConflictStatus::Valid)
            .count();
        Ok(pairs.len())
    }

    // --- stage 4: evidence ---

    fn stage_evidence(&self, manifest: &mut RunManifest) -> Result<usize, PipelineError> {
        let pairs: Vec<ConflictPair> = read_jsonl(&self.path(CONFLICT_FILE))?;
        let done = question_ids(&self.path(EVIDENCE_FILE))?;
        let todo: Vec<ConflictPair> = pairs
            .into_iter()
            .filter(|p| p.status == ConflictStatus::Valid && !done.contains(&p.question_id))
            .collect();

        let worker = |pair: &ConflictPair| -> Result<EvidenceBundle, PipelineError> {
            Ok(build_bundle(
                &self.gw,
                &pair.question_id,
                &pair.ma,
                &pair.cma,
            )?)
        };

        let mut writer = JsonlWriter::append_to(&self.path(EVIDENCE_FILE))?;
        process_ordered(&todo, self.cfg.parallelism, worker, |_, bundle| {
            writer.append(&bundle)
        })?;

        let bundles: Vec<EvidenceBundle> = read_jsonl(&self.path(EVIDENCE_FILE))?;
        manifest.counts.direct = bundles.iter().filter(|b| b.direct.is_some()).count();
        manifest.counts.indirect_2 = bundles.iter().filter(|b| b.indirect_2.is_some()).count();
        manifest.counts.indirect_3 = bundles.iter().filter(|b| b.indirect_3.is_some()).count();
        manifest.counts.group1 = bundles.iter().filter(|b| b.in_group1()).count();
        manifest.counts.group2 = bundles.iter().filter(|b| b.in_group2()).count();
        Ok(bundles.len())
    }

    // --- stage 5: evaluate ---

    fn stage_evaluate(&self) -> Result<usize, PipelineError> {
        let questions: HashMap<String, String> =
            read_jsonl::<QuestionRecord>(&self.path(PARAPHRASES_FILE))?
                .into_iter()
                .map(|q| (q.id, q.text))
                .collect();
        let pairs: HashMap<String, ConflictPair> =
            read_jsonl::<ConflictPair>(&self.path(CONFLICT_FILE))?
                .into_iter()
                .filter(|p| p.status == ConflictStatus::Valid)
                .map(|p| (p.question_id.clone(), p))
                .collect();
        let bundles: Vec<EvidenceBundle> = read_jsonl(&self.path(EVIDENCE_FILE))?;
        let done: HashSet<(String, String, String)> =
            read_jsonl_resume::<EvalRecord>(&self.path(EVAL_RECORDS_FILE))?
                .into_iter()
                .map(|r| (r.question_id, r.style.to_string(), r.order.to_string()))
                .collect();

        let worker = |bundle: &EvidenceBundle| -> Result<Vec<EvalRecord>, PipelineError> {
            let (Some(pair), Some(question)) = (
                pairs.get(&bundle.question_id),
                questions.get(&bundle.question_id),
            ) else {
                return Ok(Vec::new());
            };
            let mut records = Vec::new();
            for style in &self.cfg.styles {
                let applicable = (style_in_group1(*style) && bundle.in_group1())
                    || (style_in_group2(*style) && bundle.in_group2());
                if !applicable {
                    continue;
                }
                let evidence = compose(*style, bundle)?;
                for order in &self.cfg.orders {
                    let key = (
                        bundle.question_id.clone(),
                        style.to_string(),
                        order.to_string(),
                    );
                    if done.contains(&key) {
                        continue;
                    }
                    let instance = build_mc(
                        &bundle.question_id,
                        question,
                        &evidence,
                        pair,
                        *style,
                        *order,
                    )?;
                    records.push(evaluate_instance(&self.gw, &instance)?);
                }
            }
            Ok(records)
        };

        let mut writer = JsonlWriter::append_to(&self.path(EVAL_RECORDS_FILE))?;
        process_ordered(&bundles, self.cfg.parallelism, worker, |_, records| {
            for record in records {
                writer.append(&record)?;
            }
            Ok(())
        })?;

        let all: Vec<EvalRecord> = read_jsonl(&self.path(EVAL_RECORDS_FILE))?;
        Ok(all.len())
    }

    // --- stage 6: report (pure aggregation) ---

    fn stage_report(&self, manifest: &RunManifest) -> Result<usize, PipelineError> {
        let questions: Vec<QuestionRecord> = read_jsonl(&self.path(PARAPHRASES_FILE))?;
        let records: Vec<EvalRecord> = read_jsonl(&self.path(EVAL_RECORDS_FILE))?;
        let strengths: HashMap<String, StrengthRecord> =
            read_jsonl::<StrengthRecord>(&self.path(STRENGTH_FILE))?
                .into_iter()
                .map(|r| (r.question_id.clone(), r))
                .collect();
        let bundles: Vec<EvidenceBundle> = read_jsonl(&self.path(EVIDENCE_FILE))?;
        let question_types: HashMap<String, QuestionType> = questions
            .iter()
            .map(|q| (q.id.clone(), classify_question(&q.text)))
            .collect();

        let group1: HashSet<&str> = bundles
            .iter()
            .filter(|b| b.in_group1())
            .map(|b| b.question_id.as_str())
            .collect();
        let group2: HashSet<&str> = bundles
            .iter()
            .filter(|b| b.in_group2())
            .map(|b| b.question_id.as_str())
            .collect();

        let dataset = self.cfg.kind.to_string();
        let model = self.cfg.model_label();
        fn inputs<'a>(
            dataset: &'a str,
            model: &'a str,
            records: &'a [EvalRecord],
            strengths: &'a HashMap<String, StrengthRecord>,
            question_types: &'a HashMap<String, QuestionType>,
        ) -> ReportInputs<'a> {
            ReportInputs {
                dataset,
                model,
                records,
                strengths,
                question_types,
            }
        }

        // The two evidence groups get separate baselines: each style is
        // aggregated over the question set that has all of that group's
        // components, so rows within a group share a denominator.
        let mut primary: Vec<MetricsReport> = Vec::new();
        let splits: [(&str, Box<dyn Fn(&EvalRecord) -> bool>); 2] = [
            (
                "group1",
                Box::new(|r| group1.contains(r.question_id.as_str()) && style_in_group1(r.style)),
            ),
            (
                "group2",
                Box::new(|r| group2.contains(r.question_id.as_str()) && style_in_group2(r.style)),
            ),
        ];
        for (label, keep) in &splits {
            let subset: Vec<EvalRecord> = records.iter().filter(|r| keep(r)).cloned().collect();
            if subset.is_empty() {
                continue;
            }
            let mut rows = group_and_report(
                &inputs(&dataset, &model, &subset, &strengths, &question_types),
                &[GroupDim::All],
            )?;
            for row in &mut rows {
                row.group = (*label).to_string();
            }
            primary.extend(rows);
        }

        let mut all_rows = primary.clone();
        if !records.is_empty() {
            all_rows.extend(group_and_report(
                &inputs(&dataset, &model, &records, &strengths, &question_types),
                &[GroupDim::EntityType],
            )?);
        }
        write_text(&self.path(METRICS_CSV), &metrics_csv(&all_rows))?;

        let bin_rows = if records.is_empty() {
            Vec::new()
        } else {
            group_and_report(
                &inputs(&dataset, &model, &records, &strengths, &question_types),
                &[GroupDim::StrengthBin],
            )?
        };
        write_text(&self.path(RATIO_BY_BIN_CSV), &ratio_by_bin_csv(&bin_rows))?;
        write_text(&self.path(SCATTER_CSV), &scatter_csv(&primary))?;

        let values: Vec<Score> = strengths.values().map(|r| r.value).collect();
        write_text(
            &self.path(STRENGTH_HIST_CSV),
            &strength_hist_csv(&dataset, &model, &values),
        )?;
        write_text(&self.path(STAGE_COUNTS_CSV), &manifest.counts.csv())?;
        Ok(all_rows.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetKind;
    use std::fs;

    /// Five processable questions across the entity classes plus one "why"
    /// question that no counter answer can be generated for.
    fn write_nq_fixture(dir: &Path) -> PathBuf {
        let path = dir.join("questions.jsonl");
        let lines = [
            r#"{"id":"q1","question":"Who sings the winter ballad?"}"#,
            r#"{"id":"q2","question":"When did the old mill close?"}"#,
            r#"{"id":"q3","question":"Where is the salt archive kept?"}"#,
            r#"{"id":"q4","question":"What year did the harbor open?"}"#,
            r#"{"id":"q5","question":"Who wrote the stone letters?"}"#,
            r#"{"id":"q6","question":"Why did the bridge close?"}"#,
        ];
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    fn mock_runner(dataset: &Path, out: &Path, resume: bool) -> Runner {
        let cfg = RunConfig::mocked(dataset, DatasetKind::Nq, out);
        Runner::new(cfg, resume).unwrap()
    }

    fn read_to_string(path: &Path) -> String {
        fs::read_to_string(path).unwrap()
    }

    #[test]
    fn full_mock_run_populates_every_count_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = write_nq_fixture(dir.path());
        let out = dir.path().join("out");
        let runner = mock_runner(&dataset, &out, false);
        let manifest = runner.run_all().unwrap();

        let c = manifest.counts;
        assert_eq!(c.initial, 6);
        assert_eq!(c.ma, 5, "the why-question is excluded before MA generation");
        assert_eq!(c.cma, 5);
        assert_eq!(c.filtered, 5);
        assert_eq!((c.direct, c.indirect_2, c.indirect_3), (5, 5, 5));
        assert_eq!((c.group1, c.group2), (5, 5));
        for stage in Stage::ALL {
            assert!(manifest.stage_done(stage), "{stage} should be done");
        }

        let exclusions: Vec<ExclusionRecord> = read_jsonl(&out.join(EXCLUSIONS_FILE)).unwrap();
        assert_eq!(exclusions.len(), 1);
        assert_eq!(exclusions[0].question_id, "q6");
        assert_eq!(exclusions[0].stage, "conflict");
        assert!(
            exclusions[0].reason.contains("not processable"),
            "{}",
            exclusions[0].reason
        );

        // 5 questions x 9 applicable styles x 2 orders.
        let records: Vec<EvalRecord> = read_jsonl(&out.join(EVAL_RECORDS_FILE)).unwrap();
        assert_eq!(records.len(), 90);

        let metrics = read_to_string(&out.join(METRICS_CSV));
        let group1_rows = metrics.lines().filter(|l| l.contains(",group1,")).count();
        let group2_rows = metrics.lines().filter(|l| l.contains(",group2,")).count();
        assert_eq!(
            group1_rows, 10,
            "5 styles x 2 orders in group 1:\n{metrics}"
        );
        assert_eq!(
            group2_rows, 10,
            "5 styles x 2 orders in group 2:\n{metrics}"
        );
        for class in ["PER", "LOC", "TIM"] {
            assert_eq!(
                metrics
                    .lines()
                    .filter(|l| l.contains(&format!(",{class},")))
                    .count(),
                18,
                "each entity class covers all 9 styles x 2 orders"
            );
        }

        let scatter = read_to_string(&out.join(SCATTER_CSV));
        assert_eq!(scatter.lines().count(), 1 + 20, "one point per primary row");

        let hist = read_to_string(&out.join(STRENGTH_HIST_CSV));
        let total: usize = hist
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 6, "every scored question lands in one histogram bin");

        let by_bin = read_to_string(&out.join(RATIO_BY_BIN_CSV));
        let bin_rows = by_bin.lines().count() - 1;
        assert!(
            bin_rows >= 18 && bin_rows % 18 == 0,
            "got {bin_rows} bin rows"
        );

        let counts_csv = read_to_string(&out.join(STAGE_COUNTS_CSV));
        assert!(counts_csv.contains("initial,6"));
        assert!(counts_csv.contains("group2,5"));
    }

    #[test]
    fn stages_refuse_to_run_out_of_order() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = write_nq_fixture(dir.path());
        let out = dir.path().join("out");
        let runner = mock_runner(&dataset, &out, false);
        let err = runner.run_stage(Stage::Strength).unwrap_err();
        match err {
            PipelineError::MissingUpstream { stage, missing } => {
                assert_eq!(stage, Stage::Strength);
                assert_eq!(missing, Stage::Paraphrase);
            }
            other => panic!("expected MissingUpstream, got {other}"),
        }
    }

    #[test]
    fn completed_stage_is_a_noop() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = write_nq_fixture(dir.path());
        let out = dir.path().join("out");
        let runner = mock_runner(&dataset, &out, false);
        runner.run_stage(Stage::Paraphrase).unwrap();
        let first = read_to_string(&out.join(PARAPHRASES_FILE));
        let calls = runner.gateway().backend_calls();

        let manifest = runner.run_stage(Stage::Paraphrase).unwrap();
        assert!(manifest.stage_done(Stage::Paraphrase));
        assert_eq!(read_to_string(&out.join(PARAPHRASES_FILE)), first);
        assert_eq!(
            runner.gateway().backend_calls(),
            calls,
            "a completed stage asks nothing"
        );
    }

    #[test]
    fn interrupted_stage_resumes_to_the_same_output() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = write_nq_fixture(dir.path());

        let out1 = dir.path().join("reference");
        mock_runner(&dataset, &out1, false)
            .run_stage(Stage::Paraphrase)
            .unwrap();
        let reference = read_to_string(&out1.join(PARAPHRASES_FILE));

        // A second fresh run is byte-identical.
        let out2 = dir.path().join("resumed");
        mock_runner(&dataset, &out2, false)
            .run_stage(Stage::Paraphrase)
            .unwrap();
        assert_eq!(read_to_string(&out2.join(PARAPHRASES_FILE)), reference);

        // Simulate a crash: drop the last output line and the completion mark.
        let truncate = |path: &Path| {
            let full = read_to_string(path);
            let keep: Vec<&str> = full.lines().collect();
            fs::write(path, format!("{}\n", keep[..keep.len() - 1].join("\n"))).unwrap();
        };
        truncate(&out2.join(PARAPHRASES_FILE));
        let digest = RunConfig::mocked(&dataset, DatasetKind::Nq, &out2).digest();
        let mut manifest = RunManifest::load_or_create(&out2, &digest).unwrap();
        manifest.clear_stage(Stage::Paraphrase);
        manifest.save(&out2).unwrap();

        // Resume fills in only the missing question, landing on the same file.
        mock_runner(&dataset, &out2, true)
            .run_stage(Stage::Paraphrase)
            .unwrap();
        assert_eq!(read_to_string(&out2.join(PARAPHRASES_FILE)), reference);

        // A non-resume rerun clears the partial output and also converges.
        truncate(&out2.join(PARAPHRASES_FILE));
        let mut manifest = RunManifest::load_or_create(&out2, &digest).unwrap();
        manifest.clear_stage(Stage::Paraphrase);
        manifest.save(&out2).unwrap();
        mock_runner(&dataset, &out2, false)
            .run_stage(Stage::Paraphrase)
            .unwrap();
        assert_eq!(read_to_string(&out2.join(PARAPHRASES_FILE)), reference);
    }

    #[test]
    fn template_questions_share_one_paraphrase_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("popqa.jsonl");
        let lines = [
            r#"{"id":"p1","question":"Who wrote Stone Letters?","relation_type":"author","template":"Who wrote [subj]?","ma":"It is Arden Hale.","cma":"It is Quillon Drace."}"#,
            r#"{"id":"p2","question":"Who wrote Glass Harbor?","relation_type":"author","template":"Who wrote [subj]?","ma":"It is Mira Voss.","cma":"It is Beatrix Sorel."}"#,
        ];
        fs::write(&path, lines.join("\n")).unwrap();
        let out = dir.path().join("out");
        let cfg = RunConfig::mocked(&path, DatasetKind::PopQa, &out);
        let runner = Runner::new(cfg, false).unwrap();
        runner.run_stage(Stage::Paraphrase).unwrap();

        let records: Vec<QuestionRecord> = read_jsonl(&out.join(PARAPHRASES_FILE)).unwrap();
        assert_eq!(records.len(), 2);
        let (p1, p2) = (&records[0], &records[1]);
        assert_eq!(p1.paraphrases.len(), 7);
        assert!(p1.paraphrases.iter().all(|p| p.contains("Stone Letters")));
        assert!(p2.paraphrases.iter().all(|p| p.contains("Glass Harbor")));
        // Slot-for-slot the same template rewrite, instantiated per subject.
        for (a, b) in p1.paraphrases.iter().zip(&p2.paraphrases) {
            assert_eq!(a.replace("Stone Letters", "Glass Harbor"), *b);
        }
    }
}
